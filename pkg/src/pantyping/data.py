"""Corpus I/O and the synthetic distant-supervision generator.

Corpus files hold one JSON record per line::

    {"entity": "e1", "tokens": ["Trump", "ran"], "span": [0, 1], "types": ["/person/politician"]}

Training files are grouped by ``entity`` into bags; test files keep one bag
per record.  Prediction files use the same record with an extra
``"predicted"`` list.
"""
from __future__ import annotations

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoder import EncodedSentence, Vocab
from .hierarchy import TypeHierarchy, close_upward, load_hierarchy

log = logging.getLogger(__name__)


class CorpusError(ValueError):
    pass


@dataclass
class SentenceBag:
    entity_id: str
    sentences: list[EncodedSentence]
    labels: frozenset[int]

    def __post_init__(self):
        if not self.sentences:
            raise CorpusError(f"bag {self.entity_id!r} has no sentences")
        if not self.labels:
            raise CorpusError(f"bag {self.entity_id!r} has an empty label set")

    def __len__(self):
        return len(self.sentences)


@dataclass
class LoadStats:
    records: int = 0
    bags: int = 0
    closed: int = 0  # records whose label set gained ancestors on load


def parse_record(line: str, lineno: int, source: str = "<corpus>") -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{source}:{lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise CorpusError(f"{source}:{lineno}: record must be an object")
    for key in ("entity", "tokens", "span", "types"):
        if key not in rec:
            raise CorpusError(f"{source}:{lineno}: missing field {key!r}")
    tokens, span, types = rec["tokens"], rec["span"], rec["types"]
    if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
        raise CorpusError(f"{source}:{lineno}: 'tokens' must be a non-empty list of strings")
    if (not isinstance(span, list) or len(span) != 2 or not all(isinstance(x, int) for x in span)
            or not 0 <= span[0] < span[1] <= len(tokens)):
        raise CorpusError(f"{source}:{lineno}: bad mention span {span!r} for {len(tokens)} tokens")
    if not isinstance(types, list) or not types:
        raise CorpusError(f"{source}:{lineno}: empty gold type set")
    return rec


def records_to_bags(records: Iterable[tuple[int, dict]], h: TypeHierarchy, vocab: Vocab,
                    grow_vocab: bool, group: bool, source: str = "<corpus>"):
    stats = LoadStats()
    grouped: OrderedDict[str, tuple[list, set]] = OrderedDict()
    for k, (lineno, rec) in enumerate(records):
        stats.records += 1
        try:
            labels = {h.index(t) for t in rec["types"]}
        except ValueError as exc:
            raise CorpusError(f"{source}:{lineno}: {exc}") from None
        closed = close_upward(labels, h)
        if closed != labels:
            stats.closed += 1
        sentence = EncodedSentence(tuple(vocab.encode(rec["tokens"], grow=grow_vocab)), tuple(rec["span"]))
        key = str(rec["entity"]) if group else f"{rec['entity']}#{k}"
        sentences, label_set = grouped.setdefault(key, ([], set()))
        sentences.append(sentence)
        label_set.update(closed)
    bags = [SentenceBag(key.split("#")[0] if not group else key, s, frozenset(l))
            for key, (s, l) in grouped.items()]
    stats.bags = len(bags)
    if stats.closed:
        log.warning("%s: upward closure added ancestor types to %d record(s)", source, stats.closed)
    return bags, stats


def read_records(path: str | Path) -> list[tuple[int, dict]]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                out.append((lineno, parse_record(line, lineno, str(path))))
    if not out:
        raise CorpusError(f"{path}: empty corpus")
    return out


def load_corpus(path: str | Path, h: TypeHierarchy, vocab: Vocab | None = None,
                train: bool = True) -> tuple[list[SentenceBag], Vocab, LoadStats]:
    """Load a corpus file.

    With ``train=True`` records are grouped into entity bags and unseen tokens
    extend the vocabulary; otherwise each record is its own single-sentence
    bag and unseen tokens map to UNK.
    """
    records = read_records(path)
    if vocab is None:
        vocab = Vocab()
    bags, stats = records_to_bags(records, h, vocab, grow_vocab=train, group=train, source=str(path))
    return bags, vocab, stats


def write_corpus(records: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_predictions(records: Sequence[dict], predicted: Sequence[Iterable[str]], path: str | Path) -> None:
    if len(records) != len(predicted):
        raise ValueError(f"{len(records)} records but {len(predicted)} predictions")
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec, pred in zip(records, predicted):
            out = dict(rec)
            out["predicted"] = sorted(pred)
            fh.write(json.dumps(out, sort_keys=True) + "\n")


def read_predictions(path: str | Path) -> list[tuple[set[str], set[str]]]:
    """(gold, predicted) type-string sets per record."""
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = parse_record(line, lineno, str(path))
            if "predicted" not in rec:
                raise CorpusError(f"{path}:{lineno}: missing field 'predicted'")
            out.append((set(rec["types"]), set(rec["predicted"])))
    return out


# ---------------------------------------------------------------- synthetic corpus


@dataclass
class SynthConfig:
    roots: int = 3
    branching: tuple[int, ...] = (2, 1)
    train_entities: int = 30
    test_mentions: int = 200
    sentences_per_entity: tuple[int, int] = (2, 4)
    tokens_per_sentence: tuple[int, int] = (6, 10)
    signal_tokens_per_type: int = 3
    filler_tokens: int = 60
    noise_rate: float = 0.0
    mention_names: int = 0
    seed: int = 0

    def __post_init__(self):
        self.branching = tuple(self.branching)
        self.sentences_per_entity = tuple(self.sentences_per_entity)
        self.tokens_per_sentence = tuple(self.tokens_per_sentence)
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError(f"noise_rate must lie in [0, 1], got {self.noise_rate}")
        if len(self.branching) < 1:
            raise ValueError("hierarchy depth must be at least 2 (give at least one branching factor)")
        if self.roots < 1 or min(self.branching) < 1:
            raise ValueError("roots and branching factors must be positive")
        lo, hi = self.sentences_per_entity
        if not 1 <= lo <= hi:
            raise ValueError(f"bad sentences_per_entity {self.sentences_per_entity}")
        lo, hi = self.tokens_per_sentence
        if not 1 <= lo <= hi:
            raise ValueError(f"bad tokens_per_sentence {self.tokens_per_sentence}")
        if self.signal_tokens_per_type < 1 or self.filler_tokens < 1:
            raise ValueError("need at least one signal token per type and one filler token")
        if self.train_entities < 1 or self.test_mentions < 0:
            raise ValueError("need at least one training entity")

    @property
    def depth(self) -> int:
        return len(self.branching) + 1

    @property
    def n_types(self) -> int:
        total, width = 0, self.roots
        for b in (1,) + self.branching:
            width = width * b if total else width
            total += width
        return total


@dataclass
class SynthCorpus:
    hierarchy: TypeHierarchy
    vocab: Vocab
    train: list[SentenceBag]
    test: list[SentenceBag]
    train_records: list[dict]
    test_records: list[dict]
    noise: dict[str, int] = field(default_factory=dict)  # entity -> injected type id
    expressed: dict[str, list[frozenset[int]]] = field(default_factory=dict)


def synth_hierarchy(config: SynthConfig) -> TypeHierarchy:
    lines = []
    level = [f"/r{i}" for i in range(config.roots)]
    lines.extend(level)
    for depth, b in enumerate(config.branching, 2):
        level = [f"{p}/{p.rsplit('/', 1)[1]}{chr(ord('a') + depth - 2)}{j}"
                 for p in level for j in range(b)]
        lines.extend(level)
    return load_hierarchy(lines)


def _type_token(h: TypeHierarchy, t: int, k: int) -> str:
    return f"sig{h.names[t].rsplit('/', 1)[1]}_{k}"


def synth_corpus(config: SynthConfig) -> SynthCorpus:
    """Generate a noisy training split and a clean test split.

    Every type owns ``signal_tokens_per_type`` tokens that no other type uses.
    An entity's gold labels are the path of a random leaf.  Each sentence
    expresses a random prefix of that path (at least the root; one sentence
    per entity expresses the full path) by carrying one signal token per
    expressed type, padded with filler.  With probability ``noise_rate`` the
    entity's distant label set also gains one type that no sentence
    expresses: a type outside the gold path whose parent is in it (or an
    unrelated root), so the label set stays upward-closed.  Test mentions are
    single sentences labelled with exactly the types they express.

    The random stream is consumed identically for every ``noise_rate``, so
    raising the rate only adds noise labels to the same corpus.
    """
    h = synth_hierarchy(config)
    leaves = [t for t in range(len(h)) if not h.children(t)]
    if len(leaves) < 1:
        raise ValueError("hierarchy has no leaves")
    rng = np.random.default_rng(config.seed)
    filler = [f"w{i}" for i in range(config.filler_tokens)]
    signal = {t: [_type_token(h, t, k) for k in range(config.signal_tokens_per_type)] for t in range(len(h))}

    def path(t):
        return h.ancestors(t)[::-1] + [t]

    def sentence(mention: str, types: list[int]):
        lo, hi = config.tokens_per_sentence
        sig = [signal[t][rng.integers(len(signal[t]))] for t in types]
        n_total = max(int(rng.integers(lo, hi + 1)), len(sig) + 1)
        body = [filler[i] for i in rng.integers(len(filler), size=n_total - len(sig) - 1)]
        body.extend(sig)
        order = rng.permutation(len(body))
        body = [body[i] for i in order]
        pos = int(rng.integers(len(body) + 1))
        tokens = body[:pos] + [mention] + body[pos:]
        return tokens, [pos, pos + 1]

    def name(entity):
        if config.mention_names:
            return f"name{int(rng.integers(config.mention_names))}"
        return entity

    train_records, noise, expressed = [], {}, {}
    for e in range(config.train_entities):
        entity = f"ent{e}"
        mention = name(entity)
        gold = path(leaves[int(rng.integers(len(leaves)))])
        n = int(rng.integers(config.sentences_per_entity[0], config.sentences_per_entity[1] + 1))
        lengths = rng.integers(1, len(gold) + 1, size=n)
        lengths[int(rng.integers(n))] = len(gold)
        coin = rng.random()
        candidates = [t for t in range(len(h)) if t not in gold
                      and (h.parent[t] is None or h.parent[t] in gold)]
        pick = int(rng.integers(len(candidates))) if candidates else -1
        labels = list(gold)
        if coin < config.noise_rate and candidates:
            noise[entity] = candidates[pick]
            labels.append(candidates[pick])
        type_strings = sorted(h.names[t] for t in labels)
        expressed[entity] = []
        for k in range(n):
            types = gold[:int(lengths[k])]
            tokens, span = sentence(mention, types)
            expressed[entity].append(frozenset(types))
            train_records.append({"entity": entity, "tokens": tokens, "span": span, "types": type_strings})

    test_records = []
    for m in range(config.test_mentions):
        entity = f"test{m}"
        gold = path(leaves[int(rng.integers(len(leaves)))])
        types = gold[:int(rng.integers(1, len(gold) + 1))]
        tokens, span = sentence(name(entity), types)
        test_records.append({"entity": entity, "tokens": tokens, "span": span,
                             "types": sorted(h.names[t] for t in types)})

    vocab = Vocab()
    for tok in filler:
        vocab.add(tok)
    for t in range(len(h)):
        for tok in signal[t]:
            vocab.add(tok)
    numbered = list(enumerate(train_records, 1))
    train, _ = records_to_bags(numbered, h, vocab, grow_vocab=True, group=True, source="<synthetic train>")
    test, _ = records_to_bags(list(enumerate(test_records, 1)), h, vocab, grow_vocab=False, group=False,
                              source="<synthetic test>")
    return SynthCorpus(h, vocab, train, test, train_records, test_records, noise, expressed)


def train_mentions(corpus: SynthCorpus) -> list[SentenceBag]:
    """Training sentences as single-mention bags labelled with their bag's distant labels."""
    return [SentenceBag(b.entity_id, [s], b.labels) for b in corpus.train for s in b.sentences]
