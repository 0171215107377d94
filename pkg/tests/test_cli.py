"""Command-line workflow: simulate, train, calibrate, infer, evaluate, report."""

import json

import pytest

from idfusion.cli import main
from idfusion.data import load_dataset
from idfusion.evaluation import load_report


SIM_SECTION = {
    "n_identities": 6,
    "feature_dim": 8,
    "bg_feature_dim": 6,
    "grid": {"origin": [0.0, 0.0], "cell_size_km": 5.0, "n_cells_x": 2, "n_cells_y": 2},
    "home_range_cells": 0.5,
    "migration_prob": 0.2,
    "fg_noise": 1.0,
    "obs_rate": 10.0,
    "duration_days": 240.0,
}


@pytest.fixture
def config_path(tmp_path):
    cfg = {
        "seed": 5,
        "sim": SIM_SECTION,
        "train": {"epochs": 15, "learning_rate": 0.05, "batch_size": 16},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


def test_full_pipeline(tmp_path, config_path, capsys):
    data = str(tmp_path / "data")
    model = str(tmp_path / "model.json")
    bg_model = str(tmp_path / "bg.json")
    preds = str(tmp_path / "preds")
    calib = str(tmp_path / "calibration.json")
    report = str(tmp_path / "report.json")

    assert main(["simulate", "--config", config_path, "--out", data]) == 0
    out = capsys.readouterr().out
    assert "train" in out and "test" in out
    ds = load_dataset(data)
    assert ds.n_identities == 6

    assert main(["train", "--data", data, "--config", config_path, "--loss", "pits",
                 "--out", model]) == 0
    assert "pits/foreground model" in capsys.readouterr().out

    assert main(["train", "--data", data, "--config", config_path,
                 "--model-kind", "background", "--out", bg_model]) == 0
    assert "background location model" in capsys.readouterr().out

    assert main(["calibrate", "--data", data, "--model", model, "--out", calib]) == 0
    out = capsys.readouterr().out
    assert "fitted global temperature" in out
    fitted = json.loads((tmp_path / "calibration.json").read_text())
    assert fitted["temperature"] > 0
    assert "ece_before" in fitted and "ece_after" in fitted

    assert main(["infer", "--data", data, "--model", model,
                 "--prior", "migrating_location", "--out", preds]) == 0
    assert "predictions" in capsys.readouterr().out
    assert (tmp_path / "preds" / "predictions.jsonl").exists()

    assert main(["evaluate", "--data", data, "--predictions", preds, "--out", report]) == 0
    out = capsys.readouterr().out
    assert "overall accuracy" in out and "ece (fused)" in out
    rep = load_report(report)
    assert 0.0 <= rep.overall_accuracy <= 1.0
    assert rep.prior_config["kind"] == "migrating_location"

    csv_out = str(tmp_path / "rows.csv")
    assert main(["report", report, report, "--out", csv_out]) == 0
    out = capsys.readouterr().out
    assert "foreground_pits_migrating_location" in out
    assert (tmp_path / "rows.csv").read_text().startswith("row,")


def test_infer_is_deterministic_across_runs(tmp_path, config_path, capsys):
    data = str(tmp_path / "data")
    model = str(tmp_path / "model.json")
    assert main(["simulate", "--config", config_path, "--out", data]) == 0
    assert main(["train", "--data", data, "--config", config_path, "--out", model]) == 0
    for d in ("p1", "p2"):
        assert main(["infer", "--data", data, "--model", model,
                     "--prior", "time_decay", "--out", str(tmp_path / d)]) == 0
    capsys.readouterr()
    assert (tmp_path / "p1" / "predictions.jsonl").read_bytes() == \
        (tmp_path / "p2" / "predictions.jsonl").read_bytes()


def test_simulate_preset_with_overrides(tmp_path, capsys):
    cfg = {"sim": {"obs_rate": 8.0, "duration_days": 365.0, "n_identities": 8}}
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
    data = str(tmp_path / "lynxish")
    assert main(["simulate", "--preset", "lynx", "--config", str(cfg_path),
                 "--seed", "3", "--out", data]) == 0
    capsys.readouterr()
    ds = load_dataset(data)
    assert ds.n_identities == 8
    assert ds.grid.n_cells == 9
    meta = json.loads((tmp_path / "lynxish" / "dataset.json").read_text())
    assert meta["sim_config"]["seed"] == 3
    assert meta["sim_config"]["obs_rate"] == 8.0


def test_seed_changes_simulated_data(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"sim": SIM_SECTION}), encoding="utf-8")
    for seed, name in ((1, "a"), (2, "b"), (1, "a2")):
        assert main(["simulate", "--config", str(cfg_path), "--seed", str(seed),
                     "--out", str(tmp_path / name)]) == 0
    capsys.readouterr()
    obs = {n: (tmp_path / n / "observations.jsonl").read_bytes() for n in ("a", "b", "a2")}
    assert obs["a"] == obs["a2"]
    assert obs["a"] != obs["b"]


def test_report_runs_standard_grid_from_data(tmp_path, config_path, capsys):
    data = str(tmp_path / "data")
    assert main(["simulate", "--config", config_path, "--out", data]) == 0
    capsys.readouterr()
    assert main(["report", "--data", data, "--config", config_path]) == 0
    out = capsys.readouterr().out
    assert "fg_pits_time" in out
    assert "bg_ce_uniform" in out


def test_error_paths_exit_one(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "m")]) == 1
    assert "error:" in capsys.readouterr().err

    assert main(["report"]) == 1
    assert "error:" in capsys.readouterr().err

    rep = tmp_path / "r.json"
    rep.write_text("{}", encoding="utf-8")
    assert main(["report", str(rep), "--data", str(tmp_path / "d")]) == 1
    assert "not both" in capsys.readouterr().err

    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text("[1, 2]", encoding="utf-8")
    assert main(["simulate", "--config", str(bad_cfg), "--out", str(tmp_path / "x")]) == 1
    assert "JSON object" in capsys.readouterr().err


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
