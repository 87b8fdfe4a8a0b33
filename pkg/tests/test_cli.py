import json

import numpy as np
import pytest

from swing_spinn.cli import main
from swing_spinn.dataset import Dataset
from swing_spinn.simulator import Trajectory
from swing_spinn.training import TrainedModel

TINY = {
    "sampler": {"n_seen": 3, "n_unseen": 2, "n_labeled": 30, "n_collocation": 20},
    "train": {"epochs": 3, "hidden": [6], "n_batches": 2},
    "experiment": {"seeds": [0], "epochs": 2, "d1": 5, "n_test": 2, "grid": {"n_oc": [3]}, "id": "oc_scaling"},
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return str(p)


def test_unknown_config_key_rejected(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"train": {"epochs": 3, "learning_rate": 0.1}}))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "t.json")]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_unknown_config_section_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"optimizer": {}}))
    assert main(["sample", "--config", str(p)]) == 2


def test_simulate(tmp_path, capsys):
    out = tmp_path / "nominal.json"
    assert main(["simulate", "--out", str(out)]) == 0
    tr = Trajectory.load(out)
    assert tr.states.shape == (501, 6)
    assert (tmp_path / "nominal.csv").exists()
    assert "[PASS]" in capsys.readouterr().out


def test_flags_after_or_before_subcommand(tmp_path, cfg_file):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["--config", cfg_file, "--seed", "3", "simulate", "--oc", "1", "--out", str(a)]) == 0
    assert main(["simulate", "--oc", "1", "--config", cfg_file, "--seed", "3", "--out", str(b)]) == 0
    assert a.read_text() == b.read_text()


def test_sample_train_predict_eval(tmp_path, cfg_file):
    ds_path, model_path = tmp_path / "ds.json", tmp_path / "m.json"
    assert main(["sample", "--config", cfg_file, "--seed", "5", "--csv", "--out", str(ds_path)]) == 0
    ds = Dataset.load(ds_path)
    assert len(ds.labeled) == 30 and ds.sampler_config.seed == 5
    assert (tmp_path / "ds" / "labeled.csv").exists()

    assert main(["train", "--config", cfg_file, "--dataset", str(ds_path), "--out", str(model_path)]) == 0
    model = TrainedModel.load(model_path)
    assert model.fingerprint == ds.fingerprint() and model.epochs_run == 3

    pred = tmp_path / "pred.json"
    assert main(["predict", "--model", str(model_path), "--dataset", str(ds_path), "--oc-id", "4",
                 "--t-end", "2", "--out", str(pred)]) == 0
    tr = Trajectory.load(pred)
    assert tr.oc_id == 4 and tr.states.shape == (201, 6)

    ev = tmp_path / "eval"
    assert main(["eval", "--config", cfg_file, "--model", str(model_path), "--dataset", str(ds_path),
                 "--out", str(ev)]) == 0
    lines = (ev / "eval.csv").read_text().splitlines()
    assert lines[0].startswith("oc_id,interp_pct") and len(lines) == 3


def test_train_pinn_mode_picks_reference(tmp_path, cfg_file):
    ds_path, model_path = tmp_path / "ds.json", tmp_path / "p.json"
    assert main(["sample", "--config", cfg_file, "--out", str(ds_path)]) == 0
    assert main(["train", "--config", cfg_file, "--dataset", str(ds_path), "--mode", "pinn",
                 "--out", str(model_path)]) == 0
    model = TrainedModel.load(model_path)
    assert model.config.mode == "pinn" and model.bundle.pinn_physics.oc_id == 0


def test_missing_dataset_file(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "nope.json")]) == 2


def test_experiment_exit_code_follows_assertions(tmp_path, cfg_file):
    code = main(["experiment", "oc_scaling", "--config", cfg_file, "--out", str(tmp_path)])
    out = tmp_path / "oc_scaling"
    rows = (out / "oc_scaling_assertions.csv").read_text().splitlines()[1:]
    passed = all(r.split(",")[1] == "True" for r in rows)
    assert code == (0 if passed else 1)
    assert (out / "oc_scaling.csv").exists()


def test_experiment_with_foreign_grid_uses_defaults(tmp_path, cfg_file):
    # the config grid belongs to oc_scaling; speed falls back to its own horizons
    assert main(["experiment", "speed", "--config", cfg_file, "--out", str(tmp_path)]) in (0, 1)
    lines = (tmp_path / "speed" / "speed.csv").read_text().splitlines()
    assert len(lines) == 6


def test_bench_speed_with_model(tmp_path, cfg_file):
    ds_path, model_path = tmp_path / "ds.json", tmp_path / "m.json"
    main(["sample", "--config", cfg_file, "--out", str(ds_path)])
    main(["train", "--config", cfg_file, "--dataset", str(ds_path), "--out", str(model_path)])
    code = main(["bench-speed", "--config", cfg_file, "--model", str(model_path), "--out", str(tmp_path / "b")])
    rows = (tmp_path / "b" / "speed.csv").read_text().splitlines()
    assert len(rows) == 6
    ratio = float(rows[-1].split(",")[3])
    assert code == (0 if ratio >= 5 else 1)
    assert np.isfinite(ratio)
