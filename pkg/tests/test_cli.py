import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from sigverify import cli
from sigverify.ink import read_instance
from sigverify.models import ModelConfig, build_rnn_points
from sigverify.preprocess import normalize
from sigverify.psf import rasterize, read_tensor

SUBCOMMANDS = ["extract", "render", "lr-find", "train", "eval", "synth"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert cli.main(["synth", "--n-pairs", "4", "--seed", "1", "--out", str(root)]) == 0
    return root


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_exits_zero(cmd, capsys):
    with pytest.raises(SystemExit) as info:
        cli.main([cmd, "--help"])
    assert info.value.code == 0
    assert "--seed" in capsys.readouterr().out


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "sigverify.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "extract" in res.stdout


def test_usage_errors_exit_one(tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["train", "--model", "svm"]) == 1
    assert cli.main(["lr-find", "--corpus", str(tmp_path), "--lr-min", "1", "--lr-max", "0.1"]) == 1


def test_extract_writes_tensors_and_is_idempotent(corpus, tmp_path):
    out = tmp_path / "feat"
    assert cli.main(["extract", "--corpus", str(corpus), "--variant", "stacked", "--out", str(out)]) == 0
    files = sorted(out.glob("*.psft"))
    assert len(files) == 8
    assert {f.name for f in files} >= {"U1S1.psft", "U1S21.psft"}
    for f in files:
        t = read_tensor(f)
        assert t.channels == 14 and t.data.shape[1] == 128
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["variant"] == "stacked" and len(manifest["corpus"]["sha256"]) == 64
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert cli.main(["extract", "--corpus", str(corpus), "--variant", "stacked", "--out", str(out)]) == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first


def test_extract_empty_and_missing(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["extract", "--corpus", str(empty), "--out", str(tmp_path / "o")]) == 1
    assert "no files found" in capsys.readouterr().err
    assert cli.main(["extract", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2


def test_extract_names_bad_file(tmp_path, capsys):
    (tmp_path / "U1S1.TXT").write_text("x\n")
    assert cli.main(["extract", "--corpus", str(tmp_path), "--out", str(tmp_path / "o")]) == 1
    assert "U1S1.TXT" in capsys.readouterr().err


@pytest.mark.parametrize("variant, n", [("original", 7), ("stacked", 14)])
def test_render(corpus, tmp_path, variant, n):
    src = corpus / "U2S1.TXT"
    assert cli.main(["render", "--instance", str(src), "--variant", variant, "--out", str(tmp_path)]) == 0
    pgms = sorted(tmp_path.glob("*.pgm"))
    assert len(pgms) == n
    assert (tmp_path / "manifest.json").exists()
    tokens = pgms[0].read_text().split()
    assert tokens[0] == "P2"
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    assert h == 128 and maxval == 255
    img = np.array(tokens[4:], dtype=int).reshape(h, w)
    drawn = rasterize(normalize(read_instance(src)), variant).data[0] != 0
    np.testing.assert_array_equal(img != 0, drawn)


def test_pgm_scaling():
    text = cli.pgm_bytes(np.array([[0.0, -1.0], [0.5, 0.001]])).decode().split()
    assert text[4:] == ["0", "255", "128", "1"]


def test_lr_find_csv(corpus, tmp_path, capsys):
    args = ["lr-find", "--corpus", str(corpus), "--model", "rnn", "--n-points", "8",
            "--steps", "12", "--lr-min", "1e-5", "--lr-max", "1", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    chosen = float(capsys.readouterr().out.strip().splitlines()[-1])
    rows = _rows(tmp_path / "lr_scan.csv")
    assert rows[0] == ["step", "lr", "smoothed_loss"]
    lrs = np.array([float(r[1]) for r in rows[1:]])
    assert 1 <= len(lrs) <= 12
    ratio = (1 / 1e-5) ** (1 / 12)
    np.testing.assert_allclose(lrs, 1e-5 * ratio ** np.arange(len(lrs)), rtol=1e-12)
    assert 1e-5 <= chosen <= 1
    assert (tmp_path / "manifest.json").exists()


def _train(corpus, out, *extra):
    return cli.main(["train", "--corpus", str(corpus), "--model", "rnn", "--n-points", "8",
                     "--seed", "4", "--out", str(out), *extra])


def test_train_eval_round(corpus, tmp_path):
    out = tmp_path / "run"
    assert _train(corpus, out, "--epochs", "2", "--lr", "1e-2", "--train-fraction", "0.5", "--track-test") == 0
    rows = _rows(out / "loss.csv")
    assert rows[0] == ["epoch", "mean_train_loss", "lr", "test_accuracy"]
    assert len(rows) == 3
    assert float(rows[2][2]) == pytest.approx(1e-2 * 0.95)
    for name in ("model.svmd", "manifest.json"):
        assert (out / name).exists()

    ev = tmp_path / "eval"
    assert cli.main(["eval", "--checkpoint", str(out / "model.svmd"), "--corpus", str(corpus), "--out", str(ev)]) == 0
    m = json.loads((ev / "metrics.json").read_text())
    assert set(m) >= {"tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "f1", "threshold", "seed"}
    assert m["seed"] == 4 and m["tp"] + m["fp"] + m["tn"] + m["fn"] == 4
    from sigverify.pipeline import Metrics

    again = Metrics(m["tp"], m["fp"], m["tn"], m["fn"])
    assert again.to_dict() == {k: m[k] for k in again.to_dict()}
    assert (ev / "manifest.json").exists()


def test_train_is_deterministic(corpus, tmp_path):
    for name in ("a", "b"):
        assert _train(corpus, tmp_path / name, "--epochs", "2") == 0
    assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()
    assert (tmp_path / "a" / "model.svmd").read_bytes() == (tmp_path / "b" / "model.svmd").read_bytes()


def test_train_zero_epochs(corpus, tmp_path):
    out = tmp_path / "z"
    assert _train(corpus, out, "--epochs", "0") == 0
    assert _rows(out / "loss.csv") == [["epoch", "mean_train_loss", "lr"]]
    from sigverify.estimators import load_network

    net, _ = load_network(out / "model.svmd")
    init = build_rnn_points(ModelConfig(kind="rnn_points", resample_n=8), seed=4)
    for a, b in zip(net.parameters(), init.parameters()):
        assert a.data.tobytes() == b.data.tobytes()


def test_train_from_features(corpus, tmp_path):
    feat = tmp_path / "feat"
    assert cli.main(["extract", "--corpus", str(corpus), "--variant", "temporal", "--out", str(feat)]) == 0
    out = tmp_path / "run"
    args = ["train", "--features", str(feat), "--variant", "temporal", "--model", "cnn-lstm",
            "--epochs", "1", "--out", str(out)]
    assert cli.main(args) == 0
    assert cli.main(args[:-4] + ["--variant", "original", "--epochs", "1", "--out", str(out)]) == 1


def test_eval_empty_selection(tmp_path):
    small = tmp_path / "c"
    assert cli.main(["synth", "--n-pairs", "2", "--out", str(small)]) == 0
    out = tmp_path / "run"
    assert _train(small, out, "--epochs", "0") == 0
    assert cli.main(["eval", "--checkpoint", str(out / "model.svmd"), "--corpus", str(small), "--out", str(out)]) == 1


def test_numeric_failure_exit_code(corpus, tmp_path, monkeypatch):
    from sigverify import pipeline

    def boom(*a, **k):
        raise pipeline.NonFiniteLoss(0, 0)

    monkeypatch.setattr(pipeline, "train", boom)
    assert _train(corpus, tmp_path, "--epochs", "1") == 3


def test_config_file(corpus, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# training setup\nepochs = 1\nlr=0.01\ntrack-test=true\n")
    out = tmp_path / "run"
    assert _train(corpus, out, "--config", str(cfg)) == 0
    assert len(_rows(out / "loss.csv")) == 2
    assert _rows(out / "loss.csv")[0][-1] == "test_accuracy"
    # explicit flags beat the file
    assert _train(corpus, out, "--config", str(cfg), "--epochs", "2") == 0
    assert len(_rows(out / "loss.csv")) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["epochs"] == 2 and manifest["config"]["lr"] == "0.01"
    cfg.write_text("colour=blue\n")
    assert _train(corpus, out, "--config", str(cfg)) == 1
    cfg.write_text("epochs=many\n")
    assert _train(corpus, out, "--config", str(cfg)) == 1


def test_default_seed_is_zero_and_deterministic(corpus, tmp_path):
    for name in ("a", "b"):
        args = ["train", "--corpus", str(corpus), "--model", "rnn", "--n-points", "8",
                "--epochs", "1", "--out", str(tmp_path / name)]
        assert cli.main(args) == 0
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 0
    assert (tmp_path / "a" / "model.svmd").read_bytes() == (tmp_path / "b" / "model.svmd").read_bytes()
    ev = tmp_path / "ev"
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "a" / "model.svmd"), "--corpus", str(corpus),
                     "--out", str(ev)]) == 0
    assert json.loads((ev / "metrics.json").read_text())["seed"] == 0
