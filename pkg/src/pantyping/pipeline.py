"""Training, evaluation metrics, and the noise-robustness experiment."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import attention as att
from .classifier import predict_types
from .data import SentenceBag, SynthConfig, synth_corpus
from .encoder import LSTM_ENCODER, MEAN_POOL_ENCODER, Vocab
from .hierarchy import TypeHierarchy
from .model import Dims, ModelParams, bag_loss, init_params, loss_and_grads, predict_proba

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str = att.PAN_A
    encoder: str = LSTM_ENCODER
    dims: Dims = field(default_factory=Dims)
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 1
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.dims, dict):
            self.dims = Dims(**self.dims)
        elif isinstance(self.dims, (list, tuple)):
            self.dims = Dims(*self.dims)
        att.check_mode(self.mode)
        if self.lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


# ---------------------------------------------------------------- optimizers


def _check_finite(grads):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter group {name!r}")


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray], batch: int = 1):
        _check_finite(grads)
        for name, g in grads.items():
            arrays[name] -= self.lr * g / batch


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray], batch: int = 1):
        _check_finite(grads)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            g = g / batch
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arrays[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(config: TrainConfig):
    return Adam(config.lr) if config.optimizer == "adam" else SGD(config.lr)


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    params: ModelParams
    losses: list[float]


def train(bags: Sequence[SentenceBag], h: TypeHierarchy, vocab: Vocab, config: TrainConfig,
          params: ModelParams | None = None) -> TrainResult:
    """Minimise the summed multi-type loss over entity bags.

    ``losses[k]`` is the total loss of epoch ``k`` with each bag's term taken
    just before the update that includes it.
    """
    if not bags:
        raise TrainingError("training corpus is empty")
    n_types = len(h)
    for bag in bags:
        if max(bag.labels) >= n_types:
            raise TrainingError(f"bag {bag.entity_id!r} has labels outside the hierarchy")
    if params is None:
        params = init_params(h, vocab, config.mode, config.encoder, config.dims, config.seed)
    opt = make_optimizer(config)
    rng = np.random.default_rng(config.seed)
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(bags))
        per_bag = np.zeros(len(bags))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            total = None
            for i in batch:
                bag = bags[i]
                loss, grads = loss_and_grads(params, bag.sentences, bag.labels, h)
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, bag {bag.entity_id!r}")
                per_bag[i] = loss
                if total is None:
                    total = grads
                else:
                    for name, g in grads.items():
                        total[name] += g
            opt.step(params.arrays, total, len(batch))
        losses.append(float(per_bag.sum()))
        log.debug("epoch %d loss %.6f", epoch, losses[-1])
    params.meta = {"train": {"mode": config.mode, "lr": config.lr, "epochs": config.epochs,
                             "batch_size": config.batch_size, "optimizer": config.optimizer,
                             "seed": config.seed}}
    return TrainResult(params, losses)


def corpus_loss(params: ModelParams, bags: Sequence[SentenceBag], h: TypeHierarchy) -> float:
    return float(sum(bag_loss(params, b.sentences, b.labels, h) for b in bags))


# ---------------------------------------------------------------- metrics


@dataclass
class EvalReport:
    strict_acc: float
    loose_macro_f1: float
    loose_micro_f1: float
    macro_precision: float
    macro_recall: float
    micro_precision: float
    micro_recall: float
    mentions: int
    exact: int
    pred_total: int
    gold_total: int
    overlap_total: int
    precisions: list[float] = field(default_factory=list, repr=False)
    recalls: list[float] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("precisions")
        out.pop("recalls")
        return out


def f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def score_sets(golds: Sequence[Iterable], preds: Sequence[Iterable]) -> EvalReport:
    """Strict accuracy plus loose macro and micro F1 over aligned gold/predicted sets."""
    if len(golds) != len(preds):
        raise ValueError(f"{len(golds)} gold sets but {len(preds)} predictions")
    if not golds:
        raise ValueError("nothing to score")
    exact = overlap_total = pred_total = gold_total = 0
    precisions, recalls = [], []
    for gold, pred in zip(golds, preds):
        gold, pred = set(gold), set(pred)
        if not gold:
            raise ValueError("mention with empty gold type set")
        overlap = len(gold & pred)
        exact += gold == pred
        overlap_total += overlap
        pred_total += len(pred)
        gold_total += len(gold)
        precisions.append(overlap / len(pred) if pred else 0.0)
        recalls.append(overlap / len(gold))
    n = len(golds)
    macro_p = sum(precisions) / n
    macro_r = sum(recalls) / n
    micro_p = overlap_total / pred_total if pred_total else 0.0
    micro_r = overlap_total / gold_total
    return EvalReport(exact / n, f1(macro_p, macro_r), f1(micro_p, micro_r), macro_p, macro_r,
                      micro_p, micro_r, n, exact, pred_total, gold_total, overlap_total,
                      precisions, recalls)


def predict(params: ModelParams, bags: Sequence[SentenceBag], h: TypeHierarchy) -> list[set[int]]:
    return [predict_types(predict_proba(params, b.sentences, h), h) for b in bags]


def evaluate(params: ModelParams, bags: Sequence[SentenceBag], h: TypeHierarchy) -> EvalReport:
    """Score predictions for each bag against its labels.

    Test mentions are passed as single-sentence bags; passing training bags
    scores the fit on the training split.
    """
    return score_sets([b.labels for b in bags], predict(params, bags, h))


# ---------------------------------------------------------------- experiment


@dataclass
class ExperimentRow:
    mode: str
    seed: int
    strict_acc: float
    loose_macro_f1: float
    loose_micro_f1: float
    train_strict_acc: float
    final_loss: float


@dataclass
class ExperimentTable:
    rows: list[ExperimentRow]
    noise_rate: float

    def modes(self) -> list[str]:
        return list(dict.fromkeys(r.mode for r in self.rows))

    def seeds(self) -> list[int]:
        return list(dict.fromkeys(r.seed for r in self.rows))

    def metric(self, mode: str, name: str = "loose_micro_f1") -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows if r.mode == mode])

    def aggregate(self) -> list[dict]:
        out = []
        for mode in self.modes():
            entry = {"mode": mode}
            for name in ("strict_acc", "loose_macro_f1", "loose_micro_f1"):
                values = self.metric(mode, name)
                entry[f"{name}_mean"] = float(values.mean())
                entry[f"{name}_std"] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
            out.append(entry)
        return out

    def to_dict(self) -> dict:
        return {"noise_rate": self.noise_rate, "rows": [asdict(r) for r in self.rows],
                "aggregate": self.aggregate()}

    def format(self) -> str:
        lines = [f"noise_rate={self.noise_rate}",
                 f"{'mode':<8} {'seed':>4} {'strict':>7} {'macroF1':>7} {'microF1':>7}"]
        for r in self.rows:
            lines.append(f"{r.mode:<8} {r.seed:>4d} {r.strict_acc:7.4f} {r.loose_macro_f1:7.4f} "
                         f"{r.loose_micro_f1:7.4f}")
        for a in self.aggregate():
            lines.append(f"{a['mode']:<8} {'mean':>4} {a['strict_acc_mean']:7.4f} "
                         f"{a['loose_macro_f1_mean']:7.4f} {a['loose_micro_f1_mean']:7.4f}"
                         f"  (micro std {a['loose_micro_f1_std']:.4f})")
        return "\n".join(lines)


# Defaults for the noise experiment. The mean-pool encoder keeps sentence vectors
# close to bag-of-words, so differences between modes come from the aggregation;
# pooled mention names stop the model from keying on the entity id itself.
EXPERIMENT_SYNTH = {"train_entities": 300, "test_mentions": 300, "mention_names": 20}
EXPERIMENT_TRAIN = {"encoder": MEAN_POOL_ENCODER, "epochs": 30, "lr": 0.005}
EXPERIMENT_MODES = (att.PAN_A, att.AN, att.UNIFORM)
EXPERIMENT_SEEDS = (0, 1, 2, 3, 4)


def experiment_configs(noise_rate: float, **overrides) -> tuple[SynthConfig, TrainConfig]:
    """Experiment defaults; ``overrides`` may name fields of either config."""
    synth_names = set(SynthConfig.__dataclass_fields__)
    synth = {**EXPERIMENT_SYNTH, "noise_rate": noise_rate}
    train_kw = dict(EXPERIMENT_TRAIN)
    for key, value in overrides.items():
        (synth if key in synth_names else train_kw)[key] = value
    return SynthConfig(**synth), TrainConfig(**train_kw)


def run_noise_experiment(synth: SynthConfig, modes: Sequence[str], seeds: Sequence[int],
                         config: TrainConfig) -> ExperimentTable:
    """Train every mode on the same corpus per seed and score on the clean test split."""
    if not modes:
        raise ValueError("experiment needs at least one mode")
    if not seeds:
        raise ValueError("experiment needs at least one seed")
    for m in modes:
        att.check_mode(m)
    rows = []
    for seed in seeds:
        corpus = synth_corpus(replace(synth, seed=seed))
        for mode in modes:
            cfg = replace(config, mode=mode, seed=seed)
            result = train(corpus.train, corpus.hierarchy, corpus.vocab, cfg)
            report = evaluate(result.params, corpus.test, corpus.hierarchy)
            fit = evaluate(result.params, corpus.train, corpus.hierarchy)
            rows.append(ExperimentRow(mode, seed, report.strict_acc, report.loose_macro_f1,
                                      report.loose_micro_f1, fit.strict_acc, result.losses[-1]))
            log.info("seed %d %-7s micro-F1 %.4f", seed, mode, report.loose_micro_f1)
    return ExperimentTable(rows, synth.noise_rate)
