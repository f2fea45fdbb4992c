"""N independent logistic classifiers and the multi-type cross-entropy."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .hierarchy import TypeHierarchy, close_upward
from .numerics import LOG_FLOOR, Graph, Node, log_sigmoid

THRESHOLD = 0.5


def clamp_probability(p):
    return np.clip(p, LOG_FLOOR, 1.0 - LOG_FLOOR)


def type_probability(s_et: np.ndarray, w_t: np.ndarray, b_t: float) -> float:
    logit = float(w_t @ s_et + b_t)
    return float(clamp_probability(np.exp(log_sigmoid(logit))))


def label_vector(labels: Iterable[int], n_types: int) -> np.ndarray:
    y = np.zeros(n_types)
    y[list(labels)] = 1.0
    return y


def multi_type_loss(probs: np.ndarray, labels: Iterable[int]) -> float:
    p = clamp_probability(np.asarray(probs, dtype=np.float64))
    y = label_vector(labels, p.shape[0])
    return float(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum())


def logits_node(g: Graph, reps: Node, w: Node, b: Node) -> Node:
    """Row-wise ``w_t . s_{e,t} + b_t`` for all types."""
    return g.add(g.sum(g.mul(reps, w), axis=1), b)


def loss_node(g: Graph, logits: Node, labels: Iterable[int], only_types=None) -> Node:
    """Multi-type loss; ``only_types`` restricts the sum to those types' terms."""
    n = logits.shape[0]
    weights = None if only_types is None else label_vector(only_types, n)
    return g.bce_logits(logits, label_vector(labels, n), weights)


def predict_types(probs: np.ndarray, h: TypeHierarchy, threshold: float = THRESHOLD) -> set[int]:
    """Types above threshold (or the argmax when none is), closed upward."""
    probs = np.asarray(probs)
    chosen = set(np.flatnonzero(probs > threshold).tolist())
    if not chosen:
        # np.argmax returns the first maximum, i.e. the lowest type id on ties
        chosen = {int(np.argmax(probs))}
    return close_upward(chosen, h)
