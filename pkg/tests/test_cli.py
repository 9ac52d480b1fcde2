import json

import numpy as np
import pytest

from ipcae import cli
from ipcae.data import load_csv


def config_file(tmp_path, **kw):
    cfg = {"task": "classification", "K": 2, "epochs": 1, "batch_size": 32, "hidden": [8],
           "seeds": [11, 22],
           "synthetic": {"task": "classification", "N": 150, "D": 6, "k_true": 2, "n_classes": 2, "seed": 1}}
    cfg.update(kw)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def csv_config(tmp_path, **kw):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"task": "classification", "N": 150, "D": 6, "k_true": 2, "n_classes": 2, "seed": 1}))
    assert cli.main(["gen-synth", "--spec", str(spec), "--out", str(tmp_path / "d.csv")]) == 0
    return config_file(tmp_path, synthetic=None, data={"path": str(tmp_path / "d.csv"), "label": "label",
                                                       "impute": "none"}, **kw)


def test_train_smoke(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(config_file(tmp_path)), "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"metrics.csv", "summary.json", "checkpoint.npz"}


def test_unknown_key(tmp_path, capsys):
    assert cli.main(["train", "--config", str(config_file(tmp_path, bogus=3))]) == 1
    assert "bogus" in capsys.readouterr().err


def test_flags_override(tmp_path):
    out = tmp_path / "run"
    cli.main(["train", "--config", str(config_file(tmp_path)), "--seed", "22", "--variant", "direct",
              "--lambda", "0.05", "--out", str(out)])
    summary = json.loads((out / "summary.json").read_text())
    assert summary["runs"][0]["seed"] == 22
    cfg = json.loads(str(np.load(out / "checkpoint.npz")["__config__"]))["config"]
    assert cfg["variant"] == "direct" and cfg["lambda"] == 0.05


def test_seed_twice_byte_identical(tmp_path):
    cfg = config_file(tmp_path, epochs=2)
    for name in ("a", "b"):
        assert cli.main(["train", "--config", str(cfg), "--seed", "11", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_eval_matches_summary(tmp_path, capsys):
    cfg = csv_config(tmp_path, epochs=3)
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    capsys.readouterr()
    summary = json.loads((out / "summary.json").read_text())["runs"][0]
    assert cli.main(["eval", "--checkpoint", str(out / "checkpoint.npz"), "--data", str(tmp_path / "d.csv"),
                     "--split", "test"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["value"] == summary["test_metric"] and rec["selection"] == summary["selection"]
    cli.main(["eval", "--checkpoint", str(out / "checkpoint.npz"), "--data", str(tmp_path / "d.csv"),
              "--split", "val"])
    assert json.loads(capsys.readouterr().out)["value"] == summary["best_val_metric"]


def test_eval_wrong_width(tmp_path, capsys):
    cfg = csv_config(tmp_path)
    out = tmp_path / "run"
    cli.main(["train", "--config", str(cfg), "--out", str(out)])
    other = tmp_path / "wide.csv"
    other.write_text("a,b,c,label\n1,2,3,0\n4,5,6,1\n")
    assert cli.main(["eval", "--checkpoint", str(out / "checkpoint.npz"), "--data", str(other)]) == 1
    assert "D=6" in capsys.readouterr().err


def test_sweep_cli(tmp_path, capsys):
    cfg = config_file(tmp_path, task="reconstruction",
                      synthetic={"task": "reconstruction", "N": 120, "D": 8, "k_true": 3, "seed": 1})
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--config", str(cfg), "--axis", "lambda", "--values", "0,0.05", "--out", str(out)]) == 0
    rows = json.loads((out / "sweep.json").read_text())
    assert [r["value"] for r in rows] == [0.0, 0.05] and all(r["n_runs"] == 2 for r in rows)
    assert "+-" in capsys.readouterr().out


@pytest.mark.parametrize("axis,values", [("depth", "1"), ("K", "two"), ("variant", "full,nope")])
def test_sweep_bad_input(tmp_path, axis, values):
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--config", str(config_file(tmp_path)), "--axis", axis, "--values", values,
                     "--out", str(out)]) == 1
    assert not out.exists()


def test_oracle_check_default(capsys):
    assert cli.main(["oracle-check"]) == 0
    assert capsys.readouterr().out.count(" ok") == 3


def test_oracle_check_single_deterministic(capsys):
    cli.main(["oracle-check", "--dims", "2", "--trials", "1"])
    first = capsys.readouterr().out
    cli.main(["oracle-check", "--dims", "2", "--trials", "1"])
    assert capsys.readouterr().out == first


def test_oracle_check_corrupted():
    assert cli.main(["oracle-check", "--trials", "2", "--corrupt", "1e-6"]) == 2


def test_gen_synth(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"task": "classification", "N": 60, "D": 7, "k_true": 3, "n_classes": 8,
                                "noise": 0.0, "seed": 5}))
    assert cli.main(["gen-synth", "--spec", str(spec), "--out", str(tmp_path / "s.csv")]) == 0
    truth = json.loads((tmp_path / "s.truth.json").read_text())
    ds = load_csv(tmp_path / "s.csv", label="label")
    assert ds.X.shape == (60, 7) and len(truth["informative"]) == 3
    # noise free: informative columns alone identify the class
    keys = {tuple(r) for r in ds.X[:, truth["informative"]]}
    assert len(keys) == 8


def test_gen_synth_bad_spec(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"N": 10, "sigma": 1}))
    assert cli.main(["gen-synth", "--spec", str(spec), "--out", str(tmp_path / "s.csv")]) == 1


def test_missing_config(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "nope.json")]) == 1


def test_no_command():
    assert cli.main([]) == 1
