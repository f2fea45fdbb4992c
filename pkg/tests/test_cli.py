import json
import os
import subprocess
import sys

import pytest

from pantyping.cli import main
from pantyping.data import read_predictions
from pantyping.model import load_model


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "--output", str(out), "--train-entities", "6", "--test-mentions", "8",
                 "--seed", "3"]) == 0
    return out


def _train(synth_dir, model, *extra):
    return main(["train", "--hierarchy", str(synth_dir / "hierarchy.txt"), "--corpus",
                 str(synth_dir / "train.jsonl"), "--model", str(model), "--epochs", "3",
                 "--dims", "4,4,4", *extra])


def test_synth_writes_three_files(synth_dir):
    assert sorted(p.name for p in synth_dir.iterdir()) == ["hierarchy.txt", "test.jsonl", "train.jsonl"]
    assert len((synth_dir / "test.jsonl").read_text().splitlines()) == 8


def test_train_writes_model_and_trace(synth_dir, tmp_path):
    model = tmp_path / "m.bin"
    assert _train(synth_dir, model) == 0
    params = load_model(model)
    assert params.n_types == 15
    rows = (tmp_path / "m.bin.trace.tsv").read_text().splitlines()
    assert rows[0] == "epoch\tloss"
    assert [r.split("\t")[0] for r in rows[1:]] == ["1", "2", "3"]


def test_train_is_byte_identical(synth_dir, tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert _train(synth_dir, a, "--seed", "7") == 0
    assert _train(synth_dir, b, "--seed", "7") == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.bin.trace.tsv").read_text() == (tmp_path / "b.bin.trace.tsv").read_text()


def test_missing_hierarchy_is_usage_error(tmp_path, capsys):
    code = main(["train", "--hierarchy", str(tmp_path / "nope.txt"), "--corpus", "x", "--model", "m"])
    assert code == 2
    assert "hierarchy file not found" in capsys.readouterr().err


def test_missing_required_path(capsys):
    assert main(["train"]) == 2
    assert "--hierarchy" in capsys.readouterr().err


def test_unknown_mode_is_usage_error(synth_dir, tmp_path):
    assert _train(synth_dir, tmp_path / "m.bin", "--mode", "PAN-X") == 2


def test_eval_and_predict(synth_dir, tmp_path):
    model = tmp_path / "m.bin"
    assert _train(synth_dir, model) == 0
    report = tmp_path / "r.json"
    common = ["--model", str(model), "--hierarchy", str(synth_dir / "hierarchy.txt"),
              "--test", str(synth_dir / "test.jsonl")]
    assert main(["eval", *common, "--output", str(report)]) == 0
    summary = json.loads(report.read_text())
    assert summary["mentions"] == 8
    assert 0 <= summary["loose_micro_f1"] <= 1

    preds = tmp_path / "p.jsonl"
    assert main(["predict", *common, "--output", str(preds)]) == 0
    pairs = read_predictions(preds)
    assert len(pairs) == 8 and all(p for _, p in pairs)


def test_eval_on_memorised_training_set(tmp_path):
    hier = tmp_path / "h.txt"
    hier.write_text("/a\n/b\n")
    corpus = tmp_path / "c.jsonl"
    corpus.write_text(
        json.dumps({"entity": "x", "tokens": ["alpha", "one"], "span": [0, 1], "types": ["/a"]}) + "\n"
        + json.dumps({"entity": "y", "tokens": ["beta", "two"], "span": [0, 1], "types": ["/b"]}) + "\n")
    model = tmp_path / "m.bin"
    assert main(["train", "--hierarchy", str(hier), "--corpus", str(corpus), "--model", str(model),
                 "--epochs", "150", "--lr", "0.02", "--dims", "4,4,4"]) == 0
    reports = []
    for name, lines in (("fwd", corpus.read_text().splitlines()),
                        ("rev", corpus.read_text().splitlines()[::-1])):
        test = tmp_path / f"{name}.jsonl"
        test.write_text("\n".join(lines) + "\n")
        out = tmp_path / f"{name}.json"
        assert main(["eval", "--model", str(model), "--hierarchy", str(hier), "--test", str(test),
                     "--output", str(out)]) == 0
        reports.append(json.loads(out.read_text()))
    assert reports[0]["strict_acc"] == reports[0]["loose_micro_f1"] == 1.0
    assert reports[0] == reports[1]


def test_eval_rejects_other_hierarchy(synth_dir, tmp_path, capsys):
    model = tmp_path / "m.bin"
    assert _train(synth_dir, model) == 0
    other = tmp_path / "other.txt"
    other.write_text("/a\n/b\n")
    code = main(["eval", "--model", str(model), "--hierarchy", str(other),
                 "--test", str(synth_dir / "test.jsonl")])
    assert code == 2
    assert "15 types" in capsys.readouterr().err


def test_malformed_corpus_exit_one(tmp_path, capsys):
    hier = tmp_path / "h.txt"
    hier.write_text("/a\n")
    corpus = tmp_path / "c.jsonl"
    corpus.write_text("{broken\n")
    assert main(["train", "--hierarchy", str(hier), "--corpus", str(corpus), "--model", "m"]) == 1
    assert "c.jsonl:1:" in capsys.readouterr().err


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--mode", "PAN-M"]) == 0
    out = capsys.readouterr().out
    assert "types=7" in out and "FAIL" not in out


def test_experiment_requires_modes(capsys):
    assert main(["experiment", "--modes", ""]) == 2
    assert "mode" in capsys.readouterr().err


def test_experiment_writes_table(tmp_path, capsys):
    out = tmp_path / "exp.json"
    code = main(["experiment", "--modes", "PAN-A,uniform", "--seeds", "0", "--epochs", "1",
                 "--train-entities", "4", "--test-mentions", "4", "--dims", "4,4,4", "--output", str(out)])
    assert code == 0
    table = json.loads(out.read_text())
    assert [r["mode"] for r in table["rows"]] == ["PAN-A", "uniform"]
    assert "uniform" in capsys.readouterr().out


def test_config_file_and_override(tmp_path, synth_dir):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[paths]\nhierarchy = {synth_dir / 'hierarchy.txt'}\ncorpus = {synth_dir / 'train.jsonl'}\n"
                   f"model = {tmp_path / 'm.bin'}\n[train]\nepochs = 2\nword_dim = 4\nhidden_dim = 4\n"
                   "sentence_dim = 4\n")
    assert main(["train", "--config", str(cfg), "--epochs", "1"]) == 0
    assert len((tmp_path / "m.bin.trace.tsv").read_text().splitlines()) == 2
    assert load_model(tmp_path / "m.bin").dims.word == 4


@pytest.mark.parametrize("body, message", [
    ("[train]\nepoch = 3\n", "unknown config key"),
    ("[nonsense]\nx = 1\n", "unknown config section"),
    ("[train]\nlr = fast\n", "bad value"),
])
def test_bad_config(tmp_path, capsys, body, message):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(body)
    assert main(["gradcheck", "--config", str(cfg)]) == 2
    assert message in capsys.readouterr().err


def test_unknown_command():
    assert main(["fly"]) == 2


def test_console_script_module():
    proc = subprocess.run([sys.executable, "-m", "pantyping.cli", "gradcheck", "--mode", "AN"],
                          capture_output=True, text=True, env={**os.environ, "PANTYPING_BACKEND": "numpy"})
    assert proc.returncode == 0, proc.stderr
    assert "PASS" in proc.stdout
