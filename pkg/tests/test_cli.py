import json

import pytest

from poissonlearn import cli
from poissonlearn import artifacts as A

TINY = ["--trajectories", "4", "--gt-trajectories", "3", "--steps", "10", "--hidden", "4", "--epochs", "2"]


def run(tmp_path, *args):
    return cli.main([*args, *TINY, "--out", str(tmp_path)])


def test_precedence_defaults_file_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lr": 0.01, "hidden": 7, "tau": 0.2}))
    rc = cli.build_run_config(json.loads(cfg.read_text()), {"hidden": 9, "system": "rbdis"})
    assert rc.train.lr == 0.01 and rc.train.hidden == 9 and rc.train.epochs == 300
    assert rc.spec.tau == 0.2 and rc.train.system == "RBdis"


def test_config_errors_exit_2(tmp_path, capsys):
    assert run(tmp_path, "train", "--system", "P2D", "--flavor", "IJ") == 2
    assert "IJ flavor is 3D-only" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"learning_rate": 1}))
    assert run(tmp_path, "train", "--config", str(bad)) == 2
    assert "learning_rate" in capsys.readouterr().err
    assert run(tmp_path, "train", "--system", "XYZ") == 2
    assert run(tmp_path, "evaluate", "--checkpoint", str(tmp_path / "missing.json")) == 2
    assert run(tmp_path, "report-merge") == 2
    with pytest.raises(SystemExit):
        cli.main(["nonsense"])


def test_train_layout_and_losses(tmp_path):
    assert run(tmp_path, "train", "--system", "RB", "--flavor", "SJ", "--seed", "1") == 0
    d = tmp_path / "RB" / "SJ" / "1"
    names = {p.relative_to(d).as_posix() for p in d.rglob("*") if p.is_file()}
    assert {"checkpoint.json", "losses.csv", "manifest.json", "report.json", "report.csv",
            "histograms/delta_M.csv", "histograms/det.csv"} <= names
    losses = A.read_losses(d / "losses.csv")
    assert [r["epoch"] for r in losses] == [1, 2]
    assert set(losses[0]) == {"epoch", "train_loss", "val_loss", "val_jacobiator"}
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["config"]["flavor"] == "SJ" and manifest["config"]["hidden"] == 4
    assert manifest["outputs"]["checkpoint.json"] == A.git_blob_sha1((d / "checkpoint.json").read_bytes())
    assert "time" not in json.dumps(manifest)


def test_repeated_train_is_byte_identical(tmp_path):
    for sub in ("a", "b"):
        assert run(tmp_path / sub, "train", "--system", "RB", "--flavor", "IJ") == 0
    for f in ("checkpoint.json", "losses.csv", "report.json", "report.csv"):
        a = (tmp_path / "a" / "RB" / "IJ" / "0" / f).read_bytes()
        assert a == (tmp_path / "b" / "RB" / "IJ" / "0" / f).read_bytes()
    ha = json.loads((tmp_path / "a" / "RB" / "IJ" / "0" / "manifest.json").read_text())["input_hash"]
    hb = json.loads((tmp_path / "b" / "RB" / "IJ" / "0" / "manifest.json").read_text())["input_hash"]
    assert ha == hb


def test_full_pipeline(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--system", "HT") == 0
    recs = A.read_trajectories(tmp_path / "HT" / "simulate" / "0" / "trajectories.jsonl")
    assert len(recs) == 4 and recs[0]["states"].shape == (11, 6)
    for f in ("WJ", "SJ", "IJ"):
        assert run(tmp_path, "train", "--system", "RB", "--flavor", f, "--no-evaluate") == 0
        assert not (tmp_path / "RB" / f / "0" / "report.json").exists()
        assert run(tmp_path, "evaluate", "--system", "RB", "--flavor", f, "--plot") == 0
    assert (tmp_path / "RB" / "WJ" / "0" / "plots" / "trajectory.dat").exists()
    capsys.readouterr()
    assert run(tmp_path, "classify", "--system", "RB") == 0
    verdict = json.loads((tmp_path / "RB" / "classify" / "0" / "verdict.json").read_text())
    assert verdict["verdict"] in ("hamiltonian-consistent", "non-hamiltonian-consistent", "inconclusive")
    assert set(verdict["errors"]) == {"WJ", "SJ", "IJ"}
    assert verdict["verdict"] in capsys.readouterr().out
    assert run(tmp_path, "report-merge") == 0
    lines = (tmp_path / "results.csv").read_text().splitlines()
    assert lines[0].startswith("system,flavor,seed,delta_M")
    assert len(lines) == 4


def test_classify_rejects_mixed_or_single_reports(tmp_path):
    assert run(tmp_path, "train", "--system", "RB", "--flavor", "WJ") == 0
    rep = str(tmp_path / "RB" / "WJ" / "0" / "report.json")
    assert run(tmp_path, "classify", rep) == 2
    assert run(tmp_path, "classify", rep, "--metric", "delta_r") == 2


def test_evaluate_dimension_mismatch(tmp_path):
    assert run(tmp_path, "train", "--system", "RB", "--no-evaluate") == 0
    ckpt = str(tmp_path / "RB" / "WJ" / "0" / "checkpoint.json")
    assert run(tmp_path, "evaluate", "--system", "P2D", "--checkpoint", ckpt) == 2


def test_divergence_exits_3(tmp_path, monkeypatch):
    from poissonlearn.train import TrainingDiverged

    def boom(config, spec=None):
        raise TrainingDiverged("validation loss is not finite", None, [])
    monkeypatch.setattr(cli, "train", boom)
    assert run(tmp_path, "train") == 3
    assert (tmp_path / "RB" / "WJ" / "0" / "losses.csv").exists()


def test_config_round_trip_matches_echo(tmp_path):
    rc = cli.build_run_config({"system": "HT", "mgl": 2.0, "r_radius": [0.2, 0.9], "epochs": 5}, {"seed": 4})
    echo = json.loads(json.dumps(rc.to_dict()))
    again = cli.build_run_config(echo, {})
    assert again.to_dict() == rc.to_dict()
    assert again.spec == rc.spec
