"""Sentence encoder: token embeddings -> bi-directional LSTM + mention mean -> s_i.

The representation of a sentence is
``tanh(proj @ [h_forward; h_backward; mean(mention embeddings)])`` where the
two LSTMs each read the whole sentence, one left-to-right and one
right-to-left.  ``mean-pool`` replaces the LSTMs with the mean of all token
embeddings (a cheap ablation encoder).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .numerics import Graph, Node, stable_sigmoid

if TYPE_CHECKING:
    from .model import ModelParams

PAD, UNK = "<pad>", "<unk>"
LSTM_ENCODER = "lstm"
MEAN_POOL_ENCODER = "mean-pool"
ENCODERS = (LSTM_ENCODER, MEAN_POOL_ENCODER)


@dataclass
class Vocab:
    tokens: list[str] = field(default_factory=lambda: [PAD, UNK])

    def __post_init__(self):
        if self.tokens[:2] != [PAD, UNK]:
            raise ValueError("vocab must start with the PAD and UNK tokens")
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._ids

    def add(self, token: str) -> int:
        idx = self._ids.get(token)
        if idx is None:
            idx = len(self.tokens)
            self.tokens.append(token)
            self._ids[token] = idx
        return idx

    def id(self, token: str) -> int:
        return self._ids.get(token, 1)

    def encode(self, tokens: Iterable[str], grow: bool = False) -> list[int]:
        if grow:
            return [self.add(t) for t in tokens]
        return [self.id(t) for t in tokens]


@dataclass(frozen=True)
class EncodedSentence:
    token_ids: tuple[int, ...]
    span: tuple[int, int]

    def __post_init__(self):
        start, end = self.span
        if len(self.token_ids) < 1:
            raise ValueError("sentence must contain at least one token")
        if not 0 <= start < end <= len(self.token_ids):
            raise ValueError(f"mention span {self.span} out of range for {len(self.token_ids)} tokens")


def lstm_step(x, h, c, W, b):
    """One LSTM step; ``W`` stacks the input, forget, output and candidate gates."""
    dh = h.shape[0]
    a = W @ np.concatenate([x, h]) + b
    i = stable_sigmoid(a[:dh])
    f = stable_sigmoid(a[dh:2 * dh])
    o = stable_sigmoid(a[2 * dh:3 * dh])
    g = np.tanh(a[3 * dh:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def encode_sentence_node(g: Graph, nodes: dict[str, Node], sentence: EncodedSentence,
                         encoder: str = LSTM_ENCODER) -> Node:
    ids = np.asarray(sentence.token_ids, dtype=np.int64)
    start, end = sentence.span
    mention = g.mean(g.embed(nodes["embeddings"], ids[start:end]), axis=0)
    if encoder == LSTM_ENCODER:
        h_fw = g.lstm(g.embed(nodes["embeddings"], ids), nodes["lstm_fw_W"], nodes["lstm_fw_b"])
        h_bw = g.lstm(g.embed(nodes["embeddings"], ids[::-1]), nodes["lstm_bw_W"], nodes["lstm_bw_b"])
        features = g.concat([h_fw, h_bw, mention])
    elif encoder == MEAN_POOL_ENCODER:
        context = g.mean(g.embed(nodes["embeddings"], ids), axis=0)
        features = g.concat([context, mention])
    else:
        raise ValueError(f"unknown encoder {encoder!r}")
    return g.tanh(g.matvec(nodes["proj"], features))


def encode_bag_node(g: Graph, nodes: dict[str, Node], sentences: Sequence[EncodedSentence],
                    encoder: str = LSTM_ENCODER) -> Node:
    if len(sentences) == 0:
        raise ValueError("cannot encode an empty bag")
    return g.stack([encode_sentence_node(g, nodes, s, encoder) for s in sentences])


def encode_sentence(sentence: EncodedSentence, params: "ModelParams") -> np.ndarray:
    g = Graph()
    return encode_sentence_node(g, params.graph_nodes(g), sentence, params.encoder).value


def encode_bag(sentences: Sequence[EncodedSentence], params: "ModelParams") -> np.ndarray:
    g = Graph()
    return encode_bag_node(g, params.graph_nodes(g), sentences, params.encoder).value


def load_embeddings(path: str | Path, vocab: Vocab, table: np.ndarray) -> int:
    """Overwrite rows of ``table`` from a ``word v1 ... vD`` text file.

    Returns the number of vocabulary rows filled; words outside the vocab are
    skipped.
    """
    filled = 0
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            word, values = parts[0], parts[1:]
            if len(values) != table.shape[1]:
                raise ValueError(f"{path}:{lineno}: expected {table.shape[1]} values, got {len(values)}")
            if word in vocab:
                table[vocab.id(word)] = np.asarray(values, dtype=np.float64)
                filled += 1
    return filled
