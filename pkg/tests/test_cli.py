import csv
import json
import subprocess
import sys

import pytest

from bayescnn.cli import run
from bayescnn.triage import read_curve

RUN_CFG = "optimizer = adam\nlearning_rate = 3e-4\nepochs = 2\nmc_samples = 5\n"


def run_json(capsys, argv):
    code = run(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 and out.strip() else None)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, cfg, model = root / "data", root / "run.cfg", root / "model.bvar"
    cfg.write_text(RUN_CFG)
    assert run(["synth", "--out", str(data), "--n", "50", "--size", "16", "--seed", "7"]) == 0
    code = run(["train", "--data", str(data), "--arch", "modified_bayesian_cnn", "--config", str(cfg),
                "--out", str(model), "--seed", "7"])
    assert code == 0
    return root


def test_train_outputs(trained):
    assert (trained / "model.bvar").stat().st_size > 0
    rows = list(csv.reader(open(trained / "model.trace.csv")))
    assert rows[0] == ["epoch", "train_loss", "train_acc", "val_acc"]
    assert len(rows) == 3


def test_eval_reports_kappa(trained, capsys):
    code, out = run_json(capsys, ["eval", "--model", str(trained / "model.bvar"), "--data", str(trained / "data")])
    assert code == 0
    assert set(out) == {"accuracy", "precision", "recall", "f1", "kappa", "tp", "fp", "fn", "tn"}
    assert out["tp"] + out["fp"] + out["fn"] + out["tn"] == 20


def test_eval_train_split_matches_trace(trained, capsys):
    code, out = run_json(capsys, ["eval", "--model", str(trained / "model.bvar"), "--data", str(trained / "data"),
                                  "--split", "train"])
    assert code == 0
    rows = list(csv.DictReader(open(trained / "model.trace.csv")))
    vals = [float(r["val_acc"]) for r in rows]
    selected = rows[vals.index(max(vals))]  # the checkpoint holds the earliest best-validation epoch
    assert out["accuracy"] == float(selected["train_acc"])


def test_eval_final_row_single_epoch(tmp_path, trained, capsys):
    cfg = tmp_path / "one.cfg"
    cfg.write_text(RUN_CFG.replace("epochs = 2", "epochs = 1"))
    model = tmp_path / "one.bvar"
    assert run(["train", "--data", str(trained / "data"), "--config", str(cfg), "--out", str(model)]) == 0
    capsys.readouterr()
    _, out = run_json(capsys, ["eval", "--model", str(model), "--data", str(trained / "data"), "--split", "train"])
    last = list(csv.DictReader(open(tmp_path / "one.trace.csv")))[-1]
    assert out["accuracy"] == float(last["train_acc"])


def test_eval_deterministic(trained, capsys):
    argv = ["eval", "--model", str(trained / "model.bvar"), "--data", str(trained / "data"), "--n", "3", "--seed", "2"]
    assert run_json(capsys, argv) == run_json(capsys, argv)


def test_predict_triage_bands_embed(trained, capsys):
    model, data = str(trained / "model.bvar"), str(trained / "data")
    unc, curve = trained / "unc.csv", trained / "curve.csv"
    code, out = run_json(capsys, ["predict", "--model", model, "--data", data, "--n", "25", "--out", str(unc)])
    assert code == 0 and out["records"] == 20
    code, _ = run_json(capsys, ["triage", "--records", str(unc), "--field", "aleatoric", "--grid", "50",
                                "--out", str(curve)])
    assert code == 0
    rows = read_curve(curve)
    assert len(rows) == 50
    assert rows[0]["threshold"] == 0.0
    assert rows[-1]["retained_frac"] == 1.0 and rows[-1]["referred_frac"] == 0.0
    recs = list(csv.DictReader(open(unc)))
    overall = sum(r["pred"] == r["label"] for r in recs) / len(recs)
    assert rows[-1]["retained_acc"] == overall
    assert all(a["retained_frac"] <= b["retained_frac"] for a, b in zip(rows, rows[1:]))

    code, bands = run_json(capsys, ["bands", "--records", str(unc), "--out", str(trained / "bands.csv")])
    assert code == 0
    assert sum(b["count"] for b in bands.values()) == 20

    emb = trained / "emb.csv"
    code, _ = run_json(capsys, ["embed", "--data", data, "--model", model, "--records", str(unc),
                                "--iterations", "50", "--out", str(emb)])
    assert code == 0
    rows = list(csv.DictReader(open(emb)))
    assert len(rows) == 20 and list(rows[0]) == ["id", "y1", "y2", "y3", "label", "band"]
    assert all(r["band"] in {"low", "medium", "high"} for r in rows)


def test_embed_features_csv(tmp_path, capsys):
    feats = tmp_path / "f.csv"
    lines = ["id,a,b,label"] + [f"p{i},{i % 3},{(i * 7) % 5},{i % 2}" for i in range(12)]
    feats.write_text("\n".join(lines) + "\n")
    code, out = run_json(capsys, ["embed", "--features", str(feats), "--iterations", "30", "--out",
                                  str(tmp_path / "e.csv")])
    assert code == 0 and out["points"] == 12


def test_triage_explicit_thresholds(trained, capsys, tmp_path):
    unc = tmp_path / "u.csv"
    assert run(["predict", "--model", str(trained / "model.bvar"), "--data", str(trained / "data"), "--n", "5",
                "--out", str(unc)]) == 0
    assert run(["triage", "--records", str(unc), "--thresholds", "0.5,0.1", "--out", str(tmp_path / "c.csv")]) == 1
    assert run(["triage", "--records", str(unc), "--thresholds", "0.1,0.5", "--out", str(tmp_path / "c.csv")]) == 0


def test_truncated_checkpoint_exit_2(trained, tmp_path, capsys):
    bad = tmp_path / "bad.bvar"
    bad.write_bytes((trained / "model.bvar").read_bytes()[:100])
    assert run(["eval", "--model", str(bad), "--data", str(trained / "data")]) == 2
    assert "truncated" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [[], ["bogus"], ["train"], ["eval", "--model", "x"], ["synth", "--out", "o", "--n", "abc"]],
)
def test_usage_errors_exit_1(argv, capsys):
    assert run(argv) == 1


def test_missing_data_exit_1(tmp_path, trained):
    assert run(["eval", "--model", str(trained / "model.bvar"), "--data", str(tmp_path / "none")]) == 1


def test_bad_config_exit_1(tmp_path, trained):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("unknown_key = 3\n")
    assert run(["train", "--data", str(trained / "data"), "--config", str(cfg), "--out", str(tmp_path / "m")]) == 1


def test_help_exit_0(capsys):
    assert run(["--help"]) == 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bayescnn", "synth", "--out", str(tmp_path / "d"), "--n", "2"],
                          capture_output=True, text=True, env={"BVAR_THREADS": "1", "PATH": ""})
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["images"] == 4
