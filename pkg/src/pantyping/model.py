"""Model parameters, the per-bag loss graph, gradient checking, and the model file format."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import attention as att
from .classifier import logits_node, loss_node
from .encoder import ENCODERS, LSTM_ENCODER, MEAN_POOL_ENCODER, EncodedSentence, Vocab, encode_bag_node
from .hierarchy import TypeHierarchy
from .numerics import Graph, GradCheckReport, check_gradients, stable_sigmoid

GROUPS = ("embeddings", "lstm_fw_W", "lstm_fw_b", "lstm_bw_W", "lstm_bw_b", "proj",
          "attn_diag", "type_emb", "clf_w", "clf_b")
MAGIC = b"PANMODEL\x01\n"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class Dims:
    word: int = 16
    hidden: int = 16
    sentence: int = 16

    def __post_init__(self):
        if min(self.word, self.hidden, self.sentence) < 1:
            raise ValueError(f"dimensions must be positive: {self}")


@dataclass
class ModelParams:
    arrays: dict[str, np.ndarray]
    mode: str
    encoder: str
    dims: Dims
    vocab: Vocab
    type_names: tuple[str, ...]
    hierarchy_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    @property
    def n_types(self) -> int:
        return self.arrays["clf_b"].shape[0]

    def graph_nodes(self, g: Graph) -> dict:
        return {name: g.param(arr, name) for name, arr in self.arrays.items()}

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, self.mode, self.encoder,
                           self.dims, Vocab(list(self.vocab.tokens)), self.type_names,
                           self.hierarchy_hash, dict(self.meta))

    def n_values(self) -> int:
        return sum(a.size for a in self.arrays.values())


def _xavier(rng, rows, cols):
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_params(h: TypeHierarchy, vocab: Vocab, mode: str = att.PAN_A, encoder: str = LSTM_ENCODER,
                dims: Dims | None = None, seed: int = 0, embedding_scale: float = 0.1,
                type_scale: float = 0.1) -> ModelParams:
    """Seeded initialisation.

    Every group draws from its own child stream, so modes that share a group
    (and the same seed) start from identical values for it.
    """
    att.check_mode(mode)
    if encoder not in ENCODERS:
        raise ValueError(f"unknown encoder {encoder!r}")
    dims = dims or Dims()
    dw, dh, d = dims.word, dims.hidden, dims.sentence
    N = len(h)
    streams = dict(zip(GROUPS, (np.random.default_rng(s)
                                for s in np.random.SeedSequence(seed).spawn(len(GROUPS)))))
    arrays = {}
    arrays["embeddings"] = streams["embeddings"].normal(0.0, embedding_scale, size=(len(vocab), dw))
    arrays["embeddings"][vocab.pad_id] = 0.0
    for side in ("fw", "bw"):
        W = _xavier(streams[f"lstm_{side}_W"], 4 * dh, dw + dh)
        b = np.zeros(4 * dh)
        b[dh:2 * dh] = 1.0  # forget-gate bias
        arrays[f"lstm_{side}_W"] = W
        arrays[f"lstm_{side}_b"] = b
    in_dim = 2 * dh + dw if encoder == LSTM_ENCODER else 2 * dw
    arrays["proj"] = _xavier(streams["proj"], d, in_dim)
    arrays["attn_diag"] = np.ones(d)
    noise = streams["type_emb"].normal(0.0, type_scale, size=(N, d))
    # products of near-zero vectors collapse, so multiplicative paths start near 1
    arrays["type_emb"] = 1.0 + noise if mode == att.PAN_M else noise
    arrays["clf_w"] = _xavier(streams["clf_w"], N, d)
    arrays["clf_b"] = np.zeros(N)
    if encoder == MEAN_POOL_ENCODER:
        for name in ("lstm_fw_W", "lstm_fw_b", "lstm_bw_W", "lstm_bw_b"):
            arrays[name] = np.zeros((0,) if name.endswith("_b") else (0, 0))
    return ModelParams(arrays, mode, encoder, dims, vocab, tuple(h.names), h.fingerprint())


# ---------------------------------------------------------------- forward


@dataclass
class BagForward:
    graph: Graph
    sentences: Node
    alpha: Node
    logits: Node
    loss: Node | None


def forward(params: ModelParams, sentences: Sequence[EncodedSentence], h: TypeHierarchy,
            labels=None, only_types=None) -> BagForward:
    if len(sentences) == 0:
        raise ValueError("bag has no sentences")
    if len(h) != params.n_types:
        raise ValueError(f"model has {params.n_types} types but hierarchy has {len(h)}")
    g = Graph()
    nodes = params.graph_nodes(g)
    S = encode_bag_node(g, nodes, sentences, params.encoder)
    alpha, reps = att.attend_node(g, S, nodes["attn_diag"], nodes["type_emb"], params.mode, h)
    logits = logits_node(g, reps, nodes["clf_w"], nodes["clf_b"])
    loss = loss_node(g, logits, labels, only_types) if labels is not None else None
    return BagForward(g, S, alpha, logits, loss)


def bag_loss(params: ModelParams, sentences, labels, h: TypeHierarchy) -> float:
    return float(forward(params, sentences, h, labels).loss.value)


def loss_and_grads(params: ModelParams, sentences, labels, h: TypeHierarchy, only_types=None):
    fwd = forward(params, sentences, h, labels, only_types)
    fwd.graph.backward(fwd.loss)
    return float(fwd.loss.value), fwd.graph.param_grads()


def predict_proba(params: ModelParams, sentences, h: TypeHierarchy) -> np.ndarray:
    return stable_sigmoid(forward(params, sentences, h).logits.value)


def grad_check(params: ModelParams, sentences, labels, h: TypeHierarchy, eps: float = 1e-5,
               tol: float = 1e-4, max_coords: int = 10_000, seed: int = 0) -> GradCheckReport:
    if len(sentences) == 0:
        raise ValueError("gradient check needs a bag with at least one sentence")
    _, analytic = loss_and_grads(params, sentences, labels, h)
    arrays = {k: v for k, v in params.arrays.items() if v.size}
    return check_gradients(lambda: bag_loss(params, sentences, labels, h), arrays,
                           {k: analytic[k] for k in arrays}, eps=eps, tol=tol,
                           max_coords=max_coords, rng=np.random.default_rng(seed))


# ---------------------------------------------------------------- model file


def save_model(params: ModelParams, path: str | Path) -> None:
    """Header line of JSON (shapes, offsets, vocab, types) followed by raw little-endian float64."""
    entries = []
    offset = 0
    for name in GROUPS:
        arr = params.arrays[name]
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "version": FORMAT_VERSION,
        "mode": params.mode,
        "encoder": params.encoder,
        "dims": [params.dims.word, params.dims.hidden, params.dims.sentence],
        "hierarchy_hash": params.hierarchy_hash,
        "types": list(params.type_names),
        "vocab": params.vocab.tokens,
        "arrays": entries,
        "meta": params.meta,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in GROUPS:
            fh.write(np.ascontiguousarray(params.arrays[name], dtype="<f8").tobytes())


def load_model(path: str | Path) -> ModelParams:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ModelFormatError(f"{path}: not a model file")
    pos = len(MAGIC)
    (size,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    header = json.loads(data[pos:pos + size].decode("utf-8"))
    pos += size
    if header.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {header.get('version')}")
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = pos + entry["offset"]
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=start).astype(np.float64)
        arrays[entry["name"]] = arr.reshape(entry["shape"])
    missing = set(GROUPS) - set(arrays)
    if missing:
        raise ModelFormatError(f"{path}: missing arrays {sorted(missing)}")
    return ModelParams(arrays, header["mode"], header["encoder"], Dims(*header["dims"]),
                       Vocab(header["vocab"]), tuple(header["types"]), header["hierarchy_hash"],
                       header.get("meta", {}))
