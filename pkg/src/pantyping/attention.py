"""Per-type selective attention over the sentences of a bag.

For type t the query is the composed path vector p_t (or the type's own
embedding in flat ``AN`` mode); sentence i scores ``sum_k S[i,k] a[k] p_t[k]``
and the weights are a softmax over sentences.  ``uniform`` mode skips the
scores and averages the sentences.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .hierarchy import ADDITION, MULTIPLICATION, TypeHierarchy, compose_path, path_matrices, path_of
from .numerics import Graph, Node, softmax

PAN_A = "PAN-A"
PAN_M = "PAN-M"
AN = "AN"
UNIFORM = "uniform"
MODES = (PAN_A, PAN_M, AN, UNIFORM)


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown attention mode {mode!r}; expected one of {', '.join(MODES)}")
    return mode


@lru_cache(maxsize=16)
def _cached_paths(h: TypeHierarchy):
    return path_matrices(h)


def type_query(t: int, mode: str, type_embeddings: np.ndarray, h: TypeHierarchy) -> np.ndarray:
    check_mode(mode)
    if mode == PAN_A:
        return compose_path(path_of(t, h), type_embeddings, ADDITION)
    if mode == PAN_M:
        return compose_path(path_of(t, h), type_embeddings, MULTIPLICATION)
    return type_embeddings[t].copy()


def attention_weights(S: np.ndarray, p_t: np.ndarray, a: np.ndarray) -> np.ndarray:
    if S.shape[0] < 1:
        raise ValueError("attention needs at least one sentence")
    return softmax(S @ (a * p_t))


def bag_representation(S: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    return alpha @ S


def attend_all_types(S: np.ndarray, mode: str, a: np.ndarray, type_embeddings: np.ndarray,
                     h: TypeHierarchy) -> tuple[np.ndarray, np.ndarray]:
    """Attention matrix (n x N) and per-type bag representations (N x d)."""
    g = Graph()
    alpha, reps = attend_node(g, g.const(S), g.const(a), g.const(type_embeddings), mode, h)
    return alpha.value, reps.value


def query_node(g: Graph, type_emb: Node, mode: str, h: TypeHierarchy) -> Node:
    """All N type queries as an N x d node."""
    idx, lengths, membership = _cached_paths(h)
    if mode == PAN_A:
        return g.matmul(g.const(membership), type_emb)
    if mode == PAN_M:
        return g.path_product(type_emb, idx, lengths)
    if mode == AN:
        return type_emb
    raise ValueError(f"mode {mode!r} has no type queries")


def attend_node(g: Graph, S: Node, a: Node, type_emb: Node, mode: str,
                h: TypeHierarchy) -> tuple[Node, Node]:
    check_mode(mode)
    n = S.shape[0]
    if n < 1:
        raise ValueError("attention needs at least one sentence")
    if mode == UNIFORM:
        alpha = g.const(np.full((n, len(h)), 1.0 / n))
    else:
        queries = g.mul(query_node(g, type_emb, mode, h), a)
        scores = g.matmul(S, g.transpose(queries))
        alpha = g.softmax(scores, axis=0)
    return alpha, g.matmul(g.transpose(alpha), S)
