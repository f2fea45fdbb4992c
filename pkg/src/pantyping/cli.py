"""Command-line entry point.

Every command reads an optional INI-style ``--config`` file with the
sections ``[paths]``, ``[train]``, ``[synth]``, ``[experiment]`` and
``[gradcheck]``; flags given on the command line override the file.

Exit codes: 0 success, 1 runtime or training failure, 2 usage/configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import attention as att
from .data import (CorpusError, SynthConfig, load_corpus, read_records, synth_corpus, write_corpus,
                   write_predictions)
from .encoder import ENCODERS
from .hierarchy import HierarchyError, load_hierarchy, read_hierarchy, write_hierarchy
from .model import Dims, ModelFormatError, grad_check, init_params, load_model, save_model
from .pipeline import (EXPERIMENT_MODES, EXPERIMENT_SEEDS, EXPERIMENT_SYNTH, EXPERIMENT_TRAIN, TrainConfig,
                       TrainingError, evaluate, predict, run_noise_experiment, train)

log = logging.getLogger("pantyping")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- configuration

PATH_KEYS = ("hierarchy", "corpus", "test", "model", "trace", "output")
TRAIN_KEYS = {"mode": str, "encoder": str, "word_dim": int, "hidden_dim": int, "sentence_dim": int,
              "lr": float, "epochs": int, "batch_size": int, "optimizer": str, "seed": int}
SYNTH_KEYS = {f.name: f.type for f in fields(SynthConfig)}
EXPERIMENT_KEYS = {"modes": str, "seeds": str}
GRADCHECK_KEYS = {"eps": float, "tol": float, "sentences": int, "seed": int}
SECTIONS = {"paths": dict.fromkeys(PATH_KEYS, str), "train": TRAIN_KEYS, "synth": SYNTH_KEYS,
            "experiment": EXPERIMENT_KEYS, "gradcheck": GRADCHECK_KEYS}


def _int_list(text: str) -> list[int]:
    return [int(x) for x in str(text).replace(" ", "").split(",") if x]


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _convert(section: str, key: str, raw: str):
    if section == "synth":
        if key in ("branching", "sentences_per_entity", "tokens_per_sentence"):
            return tuple(_int_list(raw))
        return float(raw) if key == "noise_rate" else int(raw)
    kind = SECTIONS[section][key]
    return kind(raw) if kind in (int, float) else raw


def read_config(path: str | None) -> dict[str, dict]:
    out = {name: {} for name in SECTIONS}
    if path is None:
        return out
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    for section in parser.sections():
        if section not in SECTIONS:
            raise UsageError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise UsageError(f"unknown config key {key!r} in section [{section}]")
            try:
                out[section][key] = _convert(section, key, raw)
            except ValueError:
                raise UsageError(f"bad value for [{section}] {key}: {raw!r}") from None
    return out


def _merge(cfg: dict[str, dict], args: argparse.Namespace) -> dict[str, dict]:
    overrides = {
        "paths": {k: getattr(args, k, None) for k in PATH_KEYS},
        "train": {"mode": args.mode, "encoder": args.encoder, "lr": args.lr, "epochs": args.epochs,
                  "batch_size": args.batch_size, "optimizer": args.optimizer, "seed": args.seed},
        "synth": {"noise_rate": args.noise_rate, "train_entities": args.train_entities,
                  "test_mentions": args.test_mentions},
        "experiment": {"modes": args.modes, "seeds": args.seeds},
        "gradcheck": {"eps": args.eps, "tol": args.tol},
    }
    if args.dims is not None:
        try:
            dw, dh, d = _int_list(args.dims)
        except ValueError:
            raise UsageError("--dims takes three comma-separated integers: word,hidden,sentence") from None
        overrides["train"].update(word_dim=dw, hidden_dim=dh, sentence_dim=d)
    for section, values in overrides.items():
        for key, value in values.items():
            if value is not None:
                cfg[section][key] = value
    if args.seed is not None:
        cfg["synth"]["seed"] = args.seed
        cfg["gradcheck"]["seed"] = args.seed
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg["train"])
    dims = Dims(t.pop("word_dim", 16), t.pop("hidden_dim", 16), t.pop("sentence_dim", 16))
    mode = t.get("mode", att.PAN_A)
    if mode not in att.MODES:
        raise UsageError(f"unknown mode {mode!r}; choose from {', '.join(att.MODES)}")
    if t.get("encoder", "lstm") not in ENCODERS:
        raise UsageError(f"unknown encoder {t['encoder']!r}; choose from {', '.join(ENCODERS)}")
    try:
        return TrainConfig(dims=dims, **t)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def synth_config(cfg: dict) -> SynthConfig:
    try:
        return SynthConfig(**cfg["synth"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _require(cfg: dict, *keys: str) -> list[Path]:
    out = []
    for key in keys:
        value = cfg["paths"].get(key)
        if not value:
            raise UsageError(f"missing required path --{key}")
        out.append(Path(value))
    return out


def _existing(path: Path, what: str) -> Path:
    if not path.is_file():
        raise UsageError(f"{what} file not found: {path}")
    return path


def _write_json(obj, path: Path | None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text, encoding="utf-8")


def _model_and_hierarchy(cfg):
    model_path, hier_path = _require(cfg, "model", "hierarchy")
    h = read_hierarchy(_existing(hier_path, "hierarchy"))
    params = load_model(_existing(model_path, "model"))
    if params.n_types != len(h):
        raise UsageError(f"model has {params.n_types} types but hierarchy {hier_path} has {len(h)}")
    if params.hierarchy_hash != h.fingerprint():
        raise UsageError(f"hierarchy {hier_path} does not match the one the model was trained on")
    return params, h


# ---------------------------------------------------------------- commands


def cmd_train(cfg: dict) -> int:
    hier_path, corpus_path, model_path = _require(cfg, "hierarchy", "corpus", "model")
    h = read_hierarchy(_existing(hier_path, "hierarchy"))
    bags, vocab, stats = load_corpus(_existing(corpus_path, "corpus"), h)
    config = train_config(cfg)
    log.info("training %s on %d bags (%d records), %d types", config.mode, len(bags), stats.records, len(h))
    result = train(bags, h, vocab, config)
    save_model(result.params, model_path)
    trace = Path(cfg["paths"].get("trace") or f"{model_path}.trace.tsv")
    with trace.open("w", encoding="utf-8") as fh:
        fh.write("epoch\tloss\n")
        for epoch, loss in enumerate(result.losses, 1):
            fh.write(f"{epoch}\t{loss!r}\n")
    log.info("final loss %.6f; model written to %s", result.losses[-1], model_path)
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    params, h = _model_and_hierarchy(cfg)
    (test_path,) = _require(cfg, "test") if cfg["paths"].get("test") else _require(cfg, "corpus")
    bags, _, _ = load_corpus(_existing(test_path, "test corpus"), h, vocab=params.vocab, train=False)
    report = evaluate(params, bags, h)
    out = cfg["paths"].get("output")
    _write_json(report.summary(), Path(out) if out else None)
    return EXIT_OK


def cmd_predict(cfg: dict) -> int:
    params, h = _model_and_hierarchy(cfg)
    (test_path,) = _require(cfg, "test") if cfg["paths"].get("test") else _require(cfg, "corpus")
    (out,) = _require(cfg, "output")
    test_path = _existing(test_path, "test corpus")
    bags, _, _ = load_corpus(test_path, h, vocab=params.vocab, train=False)
    records = [rec for _, rec in read_records(test_path)]
    predicted = [[h.names[t] for t in p] for p in predict(params, bags, h)]
    write_predictions(records, predicted, out)
    return EXIT_OK


def cmd_synth(cfg: dict) -> int:
    (out,) = _require(cfg, "output")
    corpus = synth_corpus(synth_config(cfg))
    out.mkdir(parents=True, exist_ok=True)
    write_hierarchy(corpus.hierarchy, out / "hierarchy.txt")
    write_corpus(corpus.train_records, out / "train.jsonl")
    write_corpus(corpus.test_records, out / "test.jsonl")
    log.info("wrote %d training records, %d test records, %d types to %s",
             len(corpus.train_records), len(corpus.test_records), len(corpus.hierarchy), out)
    return EXIT_OK


def cmd_gradcheck(cfg: dict) -> int:
    """Check analytic gradients of a random model on a synthetic bag."""
    config = train_config(cfg)
    gc = {"eps": 1e-5, "tol": 1e-4, "sentences": 3, "seed": 0, **cfg["gradcheck"]}
    synth = cfg["synth"]
    if "branching" not in synth and "roots" not in synth:
        synth = {"roots": 1, "branching": (2, 2), **synth}
    corpus = synth_corpus(SynthConfig(**{**synth, "seed": gc["seed"], "train_entities": 4,
                                         "sentences_per_entity": (gc["sentences"], gc["sentences"])}))
    dims = config.dims if cfg["train"].get("word_dim") else Dims(8, 8, 8)
    params = init_params(corpus.hierarchy, corpus.vocab, config.mode, config.encoder, dims, gc["seed"])
    rng = np.random.default_rng(gc["seed"])
    for arr in params.arrays.values():
        arr += rng.normal(0.0, 0.05, size=arr.shape)  # move off the symmetric initial point
    bag = corpus.train[0]
    report = grad_check(params, bag.sentences, bag.labels, corpus.hierarchy, gc["eps"], gc["tol"])
    print(f"mode={config.mode} types={len(corpus.hierarchy)} sentences={len(bag)} dims={asdict(dims)}")
    print(report)
    out = cfg["paths"].get("output")
    if out:
        _write_json({"passed": report.passed, "groups": [asdict(g) for g in report.groups]}, Path(out))
    return EXIT_OK if report.passed else EXIT_FAILURE


def cmd_experiment(cfg: dict) -> int:
    exp = cfg["experiment"]
    modes = _str_list(exp.get("modes", ",".join(EXPERIMENT_MODES)))
    if not modes:
        raise UsageError("experiment needs a non-empty mode list (--modes)")
    for m in modes:
        if m not in att.MODES:
            raise UsageError(f"unknown mode {m!r}; choose from {', '.join(att.MODES)}")
    try:
        seeds = _int_list(exp.get("seeds", ",".join(map(str, EXPERIMENT_SEEDS))))
    except ValueError:
        raise UsageError("--seeds takes comma-separated integers") from None
    if not seeds:
        raise UsageError("experiment needs at least one seed (--seeds)")
    # settings left unspecified fall back to the experiment defaults, not the train/synth ones
    cfg = {**cfg, "synth": {**EXPERIMENT_SYNTH, "noise_rate": 0.4, **cfg["synth"]},
           "train": {**EXPERIMENT_TRAIN, **cfg["train"]}}
    table = run_noise_experiment(synth_config(cfg), modes, seeds, train_config(cfg))
    print(table.format())
    out = cfg["paths"].get("output")
    if out:
        _write_json(table.to_dict(), Path(out))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "synth": cmd_synth,
            "gradcheck": cmd_gradcheck, "experiment": cmd_experiment}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pantyping", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config")
    parser.add_argument("-v", "--verbose", action="store_true")
    paths = parser.add_argument_group("paths")
    for key in PATH_KEYS:
        paths.add_argument(f"--{key}")
    tr = parser.add_argument_group("training")
    tr.add_argument("--mode")
    tr.add_argument("--encoder")
    tr.add_argument("--dims", help="word,hidden,sentence dimensions")
    tr.add_argument("--lr", type=float)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--optimizer", choices=("adam", "sgd"))
    tr.add_argument("--seed", type=int)
    sy = parser.add_argument_group("synthetic data / experiment")
    sy.add_argument("--noise-rate", type=float)
    sy.add_argument("--train-entities", type=int)
    sy.add_argument("--test-mentions", type=int)
    sy.add_argument("--modes", help="comma-separated modes")
    sy.add_argument("--seeds", help="comma-separated seeds")
    gc = parser.add_argument_group("gradcheck")
    gc.add_argument("--eps", type=float)
    gc.add_argument("--tol", type=float)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = _merge(read_config(args.config), args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"pantyping: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, HierarchyError, ModelFormatError, TrainingError, ValueError, OSError) as exc:
        print(f"pantyping: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
