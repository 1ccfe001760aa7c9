"""
End-to-end tests of the command line, the experiment service and the
file formats behind it.
"""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_array_equal
from pydantic import ValidationError

from rnnrecon.app.exceptions import DataSchemaError
from rnnrecon.app.main import main
from rnnrecon.app.models.gr4j import synthetic_catchment
from rnnrecon.app.models.rnn import AdamState, init_params
from rnnrecon.app.schemas.config import (
    SITE1_PARAMS,
    ExperimentConfig,
    HydroSettings,
    LorenzParams,
    LorenzSettings,
    RnnConfig,
    SwarmConfig,
    SwarmSettings,
    SweepSpec,
    preset,
)
from rnnrecon.app.services import datasets
from rnnrecon.app.services.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from rnnrecon.app.services.experiment import ExperimentService, read_config, write_config
from rnnrecon.app.services.sweep import run_sweep


def tiny_config(experiment: str, **settings) -> ExperimentConfig:
    if experiment == "lorenz":
        section = LorenzSettings(params=LorenzParams(steps=20), n_orbits=5, n_train=4, **settings)
        rnn = RnnConfig(seq_len=20, input_size=3, output_size=3, num_layers=2, hidden_size=4,
                        learning_rate=0.01, max_epochs=4, hidden_activation="relu")
    elif experiment == "swarm":
        section = SwarmSettings(swarm=SwarmConfig(n_agents=6, steps=15), n_train=4, **settings)
        rnn = RnnConfig(seq_len=15, input_size=2, output_size=2, num_layers=2, hidden_size=4,
                        learning_rate=0.001, max_epochs=3, batch_mode="instance")
    else:
        section = HydroSettings(window_len=10, n_days=120, n_train_days=90, calibration_points=4, **settings)
        rnn = RnnConfig(seq_len=10, input_size=2, output_size=1, num_layers=2, hidden_size=4,
                        learning_rate=0.01, max_epochs=3)
    return ExperimentConfig(experiment=experiment, seed=3, rnn=rnn, **{experiment: section})


def config_file(tmp_path: Path, config: ExperimentConfig) -> str:
    return str(write_config(tmp_path / "cfg" / config.experiment, config))


def error_report(err: str) -> dict:
    return json.loads(err[err.index('{\n  "status"'):])


def test_presets_follow_parameter_table():
    lorenz = preset("lorenz")
    assert (lorenz.rnn.num_layers, lorenz.rnn.hidden_size, lorenz.rnn.learning_rate) == (3, 128, 0.01)
    assert (lorenz.rnn.max_epochs, lorenz.rnn.hidden_activation, lorenz.rnn.batch_mode) == (1000, "relu", "full")
    assert (lorenz.lorenz.n_orbits, lorenz.lorenz.n_train, lorenz.rnn.seq_len) == (500, 400, 5000)

    swarm = preset("swarm")
    assert (swarm.rnn.num_layers, swarm.rnn.hidden_size, swarm.rnn.learning_rate) == (2, 64, 0.0005)
    assert (swarm.rnn.max_epochs, swarm.rnn.hidden_activation, swarm.rnn.batch_mode) == (15000, "tanh", "instance")
    assert (swarm.swarm.swarm.n_agents, swarm.swarm.n_train, swarm.rnn.seq_len) == (30, 24, 201)

    hydro = preset("hydro")
    assert (hydro.rnn.num_layers, hydro.rnn.hidden_size, hydro.rnn.learning_rate) == (3, 512, 0.001)
    assert (hydro.rnn.max_epochs, hydro.hydro.window_len, hydro.hydro.n_train_days) == (100000, 45, 2557)
    assert preset("hydro", variant="table").rnn.num_layers == 4


def test_config_echo_round_trips(tmp_path):
    for experiment in ("lorenz", "swarm", "hydro"):
        config = preset(experiment, desk=True, seed=7)
        assert read_config(write_config(tmp_path / experiment, config)) == config


def test_window_override_follows_into_network():
    config = preset("hydro").with_overrides(window=120)
    assert config.hydro.window_len == 120 and config.rnn.seq_len == 120


@pytest.mark.parametrize("experiment", ["lorenz", "swarm", "hydro"])
def test_generate_is_byte_identical(tmp_path, experiment):
    cfg = config_file(tmp_path, tiny_config(experiment))
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "manifest.json" in names and "config.json" in names
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_eval_verify_lorenz(tmp_path, capsys):
    cfg = config_file(tmp_path, tiny_config("lorenz"))
    data, run = str(tmp_path / "data"), tmp_path / "run"
    assert main(["generate", "--config", cfg, "--out", data]) == 0
    capsys.readouterr()
    assert main(["train", "--config", cfg, "--data", data, "--out", str(run)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["status"] == "success"

    report = json.loads((run / "report.json").read_text())
    assert report["best_epoch"] == int(np.argmin(report["loss_history"])) + 1
    assert len(report["loss_history"]) == 4
    for name in ("checkpoint.npz", "loss_history.csv", "predictions_train.csv", "predictions_test.csv"):
        assert (run / name).is_file()

    assert main(["eval", "--checkpoint", str(run / "checkpoint.npz"), "--data", data,
                 "--out", str(tmp_path / "eval")]) == 0
    evaluation = json.loads((tmp_path / "eval" / "eval.json").read_text())
    assert evaluation["rmse"]["test"] == pytest.approx(report["test_rmse"], rel=1e-12)
    assert evaluation["baseline_rmse"] == pytest.approx(report["baseline_rmse"], rel=1e-12)
    capsys.readouterr()

    assert main(["verify-report", str(run)]) == 0
    checked = json.loads(capsys.readouterr().out)["checked"]
    assert {"train_rmse", "test_rmse", "baseline_rmse"} <= set(checked)


def test_verify_report_catches_tampering(tmp_path, capsys):
    config = tiny_config("swarm")
    run = tmp_path / "run"
    ExperimentService(config).run(run)
    report = json.loads((run / "report.json").read_text())
    report["test_rmse"] += 0.01
    (run / "report.json").write_text(json.dumps(report))
    assert main(["verify-report", str(run)]) == 2
    assert error_report(capsys.readouterr().err)["exit_code"] == 2


def test_hydro_run_reports_gr4j_baseline(tmp_path):
    run = tmp_path / "run"
    report = ExperimentService(tiny_config("hydro")).run(run)
    assert report.baseline_rmse is not None
    assert report.test_rmse == report.test_rmse_per_step
    frame = pd.read_csv(run / "predictions.csv")
    assert list(frame.columns) == ["date", "split", "q_obs", "q_model", "residual", "q_gr4j"]
    assert (frame["split"] == "train").sum() == 90
    assert json.loads((run / "gr4j_best.json").read_text())["forecast_rmse"] == report.baseline_rmse
    assert main(["verify-report", str(run)]) == 0


def test_calibrate_command(tmp_path, capsys):
    config = tiny_config("hydro")
    cfg = config_file(tmp_path, config)
    data, out = tmp_path / "data", tmp_path / "cal"
    ExperimentService(config).generate(data)
    assert main(["calibrate", "--config", cfg, "--data", str(data), "--points", "6", "--out", str(out)]) == 0
    table = pd.read_csv(out / "calibration.csv")
    assert list(table["rank"]) == [1, 2, 3, 4, 5, 6]
    assert np.all(np.diff(table["rmse"].to_numpy()) >= 0)
    best = json.loads((out / "gr4j_best.json").read_text())
    assert best["rmse"] == table["rmse"][0]
    assert best["params"]["x1"] == table["x1"][0]


def test_sweep_keeps_failed_cells_and_is_reproducible(tmp_path):
    cfg = config_file(tmp_path, tiny_config("lorenz"))
    for name in ("a", "b"):
        assert main(["sweep", "eta", "--config", cfg, "--values", "25", "1", "--out", str(tmp_path / name)]) == 0
    table = pd.read_csv(tmp_path / "a" / "sweep.csv")
    assert list(table["value"]) == [1.0, 25.0]
    assert list(table["status"]) == ["ok", "failed"]
    assert table["error"][1]
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_network_axis_sweep_overrides_rnn_config(tmp_path):
    rows = run_sweep(tiny_config("lorenz"), SweepSpec(axis="hidden_size", values=[5, 3]), tmp_path / "s")
    assert [row.value for row in rows] == [3, 5]
    assert [row.status for row in rows] == ["ok", "ok"]
    for size in (3, 5):
        echo = read_config(tmp_path / "s" / f"hidden_size_{size}" / "config.json")
        assert echo.rnn.hidden_size == size
        assert echo.rnn.num_layers == 2 and echo.experiment == "lorenz"
    table = pd.read_csv(tmp_path / "s" / "sweep.csv")
    assert list(table["value"]) == [3, 5]


def test_activation_sweep_from_command_line(tmp_path, capsys):
    out = tmp_path / "act"
    cfg = config_file(tmp_path, tiny_config("swarm"))
    assert main(["sweep", "activation", "--config", cfg, "--values", "relu", "tanh", "--out", str(out)]) == 0
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert [(row["value"], row["status"]) for row in rows] == [("relu", "ok"), ("tanh", "ok")]
    assert read_config(out / "activation_relu" / "config.json").rnn.hidden_activation == "relu"


def test_network_axis_needs_an_experiment(capsys):
    assert main(["sweep", "learning_rate", "--values", "0.01"]) == 1
    assert error_report(capsys.readouterr().err)["exit_code"] == 1


def test_sweep_values_are_cast_to_the_axis_type():
    assert SweepSpec(axis="learning_rate", values=["1e-3", 0.01]).values == [0.001, 0.01]
    assert SweepSpec(axis="num_layers", values=["2", 3.0]).values == [2, 3]
    assert SweepSpec(axis="eta", values=["4"]).experiment == "lorenz"
    assert SweepSpec(axis="hidden_size", values=[8]).experiment is None
    with pytest.raises(ValidationError):
        SweepSpec(axis="activation", values=["sigmoid"])
    with pytest.raises(ValidationError):
        SweepSpec(axis="num_layers", values=[1.5])
    with pytest.raises(ValidationError):
        SweepSpec(axis="learning_rate", values=["fast"])


def test_usage_error_exit_code(capsys):
    assert main(["train"]) == 1
    report = error_report(capsys.readouterr().err)
    assert report["status"] == "error" and report["exit_code"] == 1


def test_jobs_must_be_positive(tmp_path):
    assert main(["generate", "lorenz", "--jobs", "0", "--out", str(tmp_path)]) == 1


def test_option_for_wrong_experiment_is_config_error(tmp_path, capsys):
    assert main(["generate", "swarm", "--eta", "3", "--out", str(tmp_path)]) == 1
    assert "ConfigError" in error_report(capsys.readouterr().err)["message"]


def test_missing_data_exit_code(tmp_path, capsys):
    cfg = config_file(tmp_path, tiny_config("lorenz"))
    assert main(["train", "--config", cfg, "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "r")]) == 2
    assert error_report(capsys.readouterr().err)["exit_code"] == 2


def test_unwritable_output_exit_code(tmp_path, capsys):
    cfg = config_file(tmp_path, tiny_config("lorenz"))
    data = tmp_path / "data"
    assert main(["generate", "--config", cfg, "--out", str(data)]) == 0
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    capsys.readouterr()

    assert main(["train", "--config", cfg, "--data", str(data), "--out", str(blocker / "run")]) == 2
    report = error_report(capsys.readouterr().err)
    assert report["exit_code"] == 2
    assert report["message"].startswith("DataSchemaError")
    assert main(["generate", "--config", cfg, "--out", str(blocker / "data")]) == 2


def test_dataset_of_another_experiment_rejected(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["generate", "--config", config_file(tmp_path, tiny_config("lorenz")), "--out", str(data)]) == 0
    capsys.readouterr()
    swarm_cfg = config_file(tmp_path, tiny_config("swarm"))
    assert main(["train", "--config", swarm_cfg, "--data", str(data), "--out", str(tmp_path / "r")]) == 2
    assert "lorenz dataset" in error_report(capsys.readouterr().err)["message"]


def test_dataset_without_manifest_rejected(tmp_path):
    config = tiny_config("lorenz")
    data = tmp_path / "data"
    ExperimentService(config).generate(data)
    (data / datasets.MANIFEST_FILE).unlink()
    with pytest.raises(DataSchemaError):
        ExperimentService(config).load(data)


def test_divergence_exit_code(tmp_path):
    config = tiny_config("lorenz", integrator="euler")
    config = ExperimentConfig.model_validate({**config.model_dump(), "lorenz": {
        **config.lorenz.model_dump(), "params": {"delta": 10.0, "steps": 20}}})
    cfg = config_file(tmp_path, config)
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "d")]) == 3


def test_checkpoint_round_trip(tmp_path):
    config = tiny_config("lorenz")
    params = init_params(config.rnn, seed=5)
    optimizer = AdamState.fresh(params)
    path = save_checkpoint(tmp_path / "ckpt.npz", Checkpoint(params=params, config=config, epoch=3,
                                                              optimizer=optimizer, metadata={"note": [1.5]}))
    loaded = load_checkpoint(path)
    for name, value in params.as_dict().items():
        assert_array_equal(loaded.params.as_dict()[name], value)
    assert loaded.config == config
    assert loaded.epoch == 3
    assert loaded.metadata == {"note": [1.5]}
    assert loaded.optimizer.step_count == optimizer.step_count

    with pytest.raises(DataSchemaError):
        load_checkpoint(tmp_path / "absent.npz")


def test_orbit_csv_round_trip(tmp_path):
    orbits = np.random.default_rng(0).normal(scale=10.0, size=(3, 7, 3))
    path = datasets.write_orbits(tmp_path / "orbits.csv", orbits)
    assert_array_equal(datasets.read_orbits(path), orbits)
    with pytest.raises(DataSchemaError):
        datasets.read_trajectories(path)


def test_hydro_csv_keeps_missing_flow(tmp_path):
    series = synthetic_catchment(30, SITE1_PARAMS, seed=0)
    flow = series.flow.copy()
    flow[[3, 17]] = np.nan
    path = datasets.write_hydro(tmp_path / "hydro.csv", series.with_flow(flow))
    loaded = datasets.read_hydro(path)
    assert_array_equal(loaded.precip, series.precip)
    assert_array_equal(np.isnan(loaded.flow), np.isnan(flow))
    assert_array_equal(loaded.dates, series.dates)


def test_hydro_csv_needs_consecutive_days(tmp_path):
    path = datasets.write_hydro(tmp_path / "hydro.csv", synthetic_catchment(10, SITE1_PARAMS, seed=0))
    frame = pd.read_csv(path).drop(index=4)
    frame.to_csv(path, index=False)
    with pytest.raises(DataSchemaError):
        datasets.read_hydro(path)


@pytest.mark.slow
@pytest.mark.parametrize("experiment", ["lorenz", "swarm"])
def test_desk_run_beats_uncorrected_input(tmp_path, experiment):
    report = ExperimentService(preset(experiment, desk=True)).run(tmp_path)
    assert report.test_rmse < report.baseline_rmse
