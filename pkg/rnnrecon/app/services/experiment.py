"""
Experiment service orchestrating data generation, training and evaluation.

Pipeline per run:
1. Generate (or import) the dataset and write it as CSV with a manifest
2. Standardize with training statistics
3. Two-pass RNN training
4. Predict both splits, score them and write every artifact of the report
"""

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Union

import numpy as np
import pandas as pd

from rnnrecon.app.exceptions import ConfigError, DataSchemaError, ShapeMismatchError
from rnnrecon.app.models.gr4j import HydroSeries, daily_rmse, synthetic_catchment
from rnnrecon.app.models.lorenz import generate_lorenz_dataset
from rnnrecon.app.models.rnn import SequenceBatch, predict, rmse, rmse_per_step, train_two_pass
from rnnrecon.app.models.scaling import Standardizer
from rnnrecon.app.models.swarm import add_noise, simulate_swarm, spiral_schedule
from rnnrecon.app.schemas.config import ExperimentConfig
from rnnrecon.app.schemas.report import EvalReport, Manifest, RunReport
from rnnrecon.app.services import datasets
from rnnrecon.app.services.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from rnnrecon.app.services.hydro_pipeline import (
    hydro_pipeline,
    model_flow,
    network_predictor,
    score_spans,
)


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DATA_FILES = {
    "lorenz": {"truth": "orbits_true.csv", "input": "orbits_erroneous.csv"},
    "swarm": {"truth": "trajectories_clean.csv", "input": "trajectories_noisy.csv"},
    "hydro": {"record": "hydro.csv"},
}
CONFIG_FILE = "config.json"
REPORT_FILE = "report.json"
EVAL_FILE = "eval.json"
CHECKPOINT_FILE = "checkpoint.npz"
LOSS_FILE = "loss_history.csv"
GR4J_FILE = "gr4j_best.json"
HYDRO_PREDICTION_COLUMNS = ["date", "split", "q_obs", "q_model", "residual", "q_gr4j"]

# stream index of the position-noise draws, kept apart from the simulation stream
SWARM_NOISE_STREAM = 1


@dataclass(eq=False)
class SequenceData:
    """Input/label sequence pairs; the first ``n_train`` sequences train."""
    inputs: np.ndarray
    labels: np.ndarray
    n_train: int

    def split(self, name: str):
        part = slice(None, self.n_train) if name == "train" else slice(self.n_train, None)
        return self.inputs[part], self.labels[part]


def write_config(directory: PathLike, config: ExperimentConfig) -> Path:
    return datasets.write_text(Path(directory) / CONFIG_FILE, config.model_dump_json(indent=2))


def read_config(path: PathLike) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return ExperimentConfig.model_validate_json(path.read_text())


def write_loss_history(path: PathLike, history) -> Path:
    frame = pd.DataFrame({"epoch": np.arange(1, len(history) + 1), "loss": np.asarray(history)})
    return datasets.write_frame(frame, path)


class ExperimentService:
    """
    Runs one experiment configuration end to end.
    """

    def __init__(self, config: ExperimentConfig, jobs: int = 1):
        """
        Args:
            config: Validated experiment configuration
            jobs: Worker processes for parallel stages (GR4J calibration)
        """
        self.config = config
        self.experiment = config.experiment
        self.jobs = jobs

    # generation

    def generate(self, out_dir: PathLike) -> Manifest:
        """Write the dataset CSVs, the manifest and the config echo into ``out_dir``."""
        out_dir = Path(out_dir)
        files = DATA_FILES[self.experiment]
        if self.experiment == "lorenz":
            settings = self.config.lorenz
            truth, erroneous = generate_lorenz_dataset(
                settings.n_orbits, settings.corruption, settings.params, self.config.seed,
                settings.integrator, settings.init_low, settings.init_high,
            )
            datasets.write_orbits(out_dir / files["truth"], truth)
            datasets.write_orbits(out_dir / files["input"], erroneous)
            counts = {"orbits": settings.n_orbits, "train": settings.n_train}
        elif self.experiment == "swarm":
            settings = self.config.swarm
            clean = simulate_swarm(settings.swarm, spiral_schedule(settings.swarm.steps))
            noise_seed = np.random.SeedSequence([self.config.seed, SWARM_NOISE_STREAM])
            noisy = add_noise(clean, settings.sigma, noise_seed)
            datasets.write_trajectories(out_dir / files["truth"], clean.trajectories)
            datasets.write_trajectories(out_dir / files["input"], noisy.trajectories)
            counts = {"agents": settings.swarm.n_agents, "train": settings.n_train}
        else:
            settings = self.config.hydro
            if settings.data_file:
                series = datasets.read_hydro(settings.data_file)
            else:
                series = synthetic_catchment(settings.n_days, settings.catchment, settings.catchment_seed,
                                             settings.flow_noise)
            datasets.write_hydro(out_dir / files["record"], series)
            counts = {"days": len(series), "train_days": settings.n_train_days}

        manifest = Manifest(experiment=self.experiment, seed=self.config.seed, config=self.config,
                            files=dict(files), counts=counts)
        datasets.write_manifest(out_dir, manifest)
        write_config(out_dir, self.config)
        logger.info("wrote %s dataset to %s", self.experiment, out_dir)
        return manifest

    # loading

    def load(self, data_dir: PathLike) -> Union[SequenceData, HydroSeries]:
        """Read a dataset directory and check it against the configuration."""
        data_dir = Path(data_dir)
        manifest = datasets.read_manifest(data_dir)
        if manifest.experiment != self.experiment:
            raise DataSchemaError(f"{data_dir} holds a {manifest.experiment} dataset, not {self.experiment}")
        files = DATA_FILES[self.experiment]
        if self.experiment == "hydro":
            return datasets.read_hydro(data_dir / files["record"])

        if self.experiment == "lorenz":
            truth = datasets.read_orbits(data_dir / files["truth"])
            erroneous = datasets.read_orbits(data_dir / files["input"])
            n_train, length = self.config.lorenz.n_train, self.config.lorenz.params.steps + 1
        else:
            truth = datasets.read_trajectories(data_dir / files["truth"])
            erroneous = datasets.read_trajectories(data_dir / files["input"])
            n_train, length = self.config.swarm.n_train, self.config.swarm.swarm.steps

        if truth.shape != erroneous.shape:
            raise ShapeMismatchError(f"truth {truth.shape} and input {erroneous.shape} files differ")
        if truth.shape[1] != length:
            raise ShapeMismatchError(f"sequences have {truth.shape[1]} points, config expects {length}")
        if truth.shape[0] <= n_train:
            raise ShapeMismatchError(f"{truth.shape[0]} sequences leave no test set after {n_train} training ones")

        if self.experiment == "lorenz":
            # row 0 is the initial condition; the network sees steps 1..T
            return SequenceData(erroneous[:, 1:], truth[:, 1:], n_train)
        return SequenceData(erroneous, truth, n_train)

    # training

    def train(self, data_dir: PathLike, out_dir: PathLike) -> RunReport:
        """Two-pass training on ``data_dir``; checkpoint, predictions and report go to ``out_dir``."""
        out_dir = datasets.ensure_dir(out_dir)
        started = time.perf_counter()
        data = self.load(data_dir)
        if self.experiment == "hydro":
            report = self._train_hydro(data, out_dir, started)
        else:
            report = self._train_sequences(data, out_dir, started)
        write_config(out_dir, self.config)
        datasets.write_text(out_dir / REPORT_FILE, report.model_dump_json(indent=2))
        logger.info("%s run finished: train RMSE %.4f, test RMSE %.4f",
                    self.experiment, report.train_rmse, report.test_rmse)
        return report

    def _train_sequences(self, data: SequenceData, out_dir: Path, started: float) -> RunReport:
        rnn = self.config.rnn
        train_in, train_lab = data.split("train")
        test_in, test_lab = data.split("test")
        if self.config.standardize:
            scaler = Standardizer.fit(train_in, train_lab)
        else:
            scaler = Standardizer.identity(rnn.input_size, rnn.output_size)

        result = train_two_pass(rnn, SequenceBatch(scaler.inputs(train_in), scaler.labels(train_lab)))
        pred_train = scaler.restore(predict(result.params, rnn, scaler.inputs(train_in)))
        pred_test = scaler.restore(predict(result.params, rnn, scaler.inputs(test_in)))

        save_checkpoint(out_dir / CHECKPOINT_FILE, Checkpoint(
            params=result.params, config=self.config, epoch=result.best_epoch, optimizer=result.optimizer,
            metadata={"standardizer": scaler.to_dict()},
        ))
        write_loss_history(out_dir / LOSS_FILE, result.loss_history)
        datasets.write_sequence_predictions(out_dir / "predictions_train.csv", self.experiment,
                                            pred_train, train_lab, train_in)
        datasets.write_sequence_predictions(out_dir / "predictions_test.csv", self.experiment,
                                            pred_test, test_lab, test_in)

        return RunReport(
            experiment=self.experiment,
            best_epoch=result.best_epoch,
            loss_history=result.loss_history,
            train_rmse=rmse(pred_train, train_lab),
            test_rmse=rmse(pred_test, test_lab),
            train_rmse_per_step=rmse_per_step(pred_train, train_lab),
            test_rmse_per_step=rmse_per_step(pred_test, test_lab),
            baseline_rmse=rmse(test_in, test_lab),
            wall_clock_seconds=time.perf_counter() - started,
            config=self.config,
            artifacts={
                "checkpoint": CHECKPOINT_FILE,
                "loss_history": LOSS_FILE,
                "predictions_train": "predictions_train.csv",
                "predictions_test": "predictions_test.csv",
            },
        )

    def _train_hydro(self, series: HydroSeries, out_dir: Path, started: float) -> RunReport:
        settings = self.config.hydro
        outcome = hydro_pipeline(series, settings, self.config.rnn, seed=self.config.seed,
                                 standardize=self.config.standardize, jobs=self.jobs)
        training = outcome.training

        save_checkpoint(out_dir / CHECKPOINT_FILE, Checkpoint(
            params=outcome.params, config=self.config, epoch=training.best_epoch, optimizer=training.optimizer,
            metadata={"standardizer": outcome.standardizer.to_dict()},
        ))
        write_loss_history(out_dir / LOSS_FILE, training.loss_history)
        write_hydro_predictions(out_dir / "predictions.csv", series, outcome.q_model, settings.n_train_days,
                                outcome.q_gr4j)
        artifacts = {"checkpoint": CHECKPOINT_FILE, "loss_history": LOSS_FILE, "predictions": "predictions.csv"}
        if outcome.gr4j_params is not None:
            datasets.write_json(out_dir / GR4J_FILE, {
                "params": outcome.gr4j_params.model_dump(),
                "train_rmse": outcome.gr4j_train_rmse,
                "forecast_rmse": outcome.gr4j_forecast_rmse,
            })
            artifacts["gr4j"] = GR4J_FILE

        return RunReport(
            experiment="hydro",
            best_epoch=training.best_epoch,
            loss_history=training.loss_history,
            train_rmse=outcome.train_rmse,
            test_rmse=outcome.forecast_rmse,
            train_rmse_per_step=outcome.train_rmse,
            test_rmse_per_step=outcome.forecast_rmse,
            baseline_rmse=outcome.gr4j_forecast_rmse,
            wall_clock_seconds=time.perf_counter() - started,
            config=self.config,
            artifacts=artifacts,
        )

    def run(self, out_dir: PathLike) -> RunReport:
        """Generate into ``out_dir/data`` and train into ``out_dir``."""
        out_dir = Path(out_dir)
        self.generate(out_dir / "data")
        return self.train(out_dir / "data", out_dir)


def write_hydro_predictions(path: PathLike, series: HydroSeries, q_model: np.ndarray, n_train_days: int,
                            q_gr4j=None) -> Path:
    """Observed and modelled flow per day, with the |observed - modelled| residual."""
    split = np.where(np.arange(len(series)) < n_train_days, "train", "forecast")
    frame = pd.DataFrame({
        "date": pd.to_datetime(series.dates).strftime("%Y-%m-%d"),
        "split": split,
        "q_obs": series.flow,
        "q_model": q_model,
        "residual": np.abs(series.flow - q_model),
        "q_gr4j": np.full(len(series), np.nan) if q_gr4j is None else q_gr4j,
    })
    return datasets.write_frame(frame, path)


def evaluate_checkpoint(checkpoint_path: PathLike, data_dir: PathLike, out_dir: PathLike) -> EvalReport:
    """
    Predict a dataset with a saved network and score both splits.

    The checkpoint's own config decides the splits and the data layout.
    """
    checkpoint = load_checkpoint(checkpoint_path)
    config, params = checkpoint.config, checkpoint.params
    service = ExperimentService(config)
    scaler = Standardizer.from_dict(checkpoint.metadata["standardizer"])
    out_dir = datasets.ensure_dir(out_dir)
    data = service.load(data_dir)

    if config.experiment == "hydro":
        n_train = config.hydro.n_train_days
        q_model = model_flow(data, config.hydro.window_len, network_predictor(params, config.rnn, scaler))
        train_rmse, forecast_rmse = score_spans(q_model, data, n_train)
        write_hydro_predictions(out_dir / "predictions.csv", data, q_model, n_train)
        report = EvalReport(
            experiment="hydro",
            rmse={"train": train_rmse, "forecast": forecast_rmse},
            rmse_per_step={"train": train_rmse, "forecast": forecast_rmse},
            artifacts={"predictions": "predictions.csv"},
        )
    else:
        scores, per_step, artifacts = {}, {}, {}
        for split in ("train", "test"):
            inputs, labels = data.split(split)
            predicted = scaler.restore(predict(params, config.rnn, scaler.inputs(inputs)))
            datasets.write_sequence_predictions(out_dir / f"predictions_{split}.csv", config.experiment,
                                                predicted, labels, inputs)
            scores[split] = rmse(predicted, labels)
            per_step[split] = rmse_per_step(predicted, labels)
            artifacts[f"predictions_{split}"] = f"predictions_{split}.csv"
        test_in, test_lab = data.split("test")
        report = EvalReport(experiment=config.experiment, rmse=scores, rmse_per_step=per_step,
                            baseline_rmse=rmse(test_in, test_lab), artifacts=artifacts)

    datasets.write_text(out_dir / EVAL_FILE, report.model_dump_json(indent=2))
    return report


def _check(name: str, reported, recomputed, checked: Dict[str, float]) -> None:
    if reported is None:
        return
    if not np.isclose(reported, recomputed, rtol=1e-9, atol=1e-12):
        raise DataSchemaError(f"report value '{name}'={reported!r} disagrees with artifacts ({recomputed!r})")
    checked[name] = recomputed


def verify_report(run_dir: PathLike) -> Dict[str, float]:
    """
    Recompute every score of a run report from its prediction files.

    Returns:
        Name -> recomputed value; raises DataSchemaError on the first disagreement
    """
    run_dir = Path(run_dir)
    path = run_dir / REPORT_FILE
    if not path.is_file():
        raise DataSchemaError(f"no {REPORT_FILE} in {run_dir}")
    report = RunReport.model_validate_json(path.read_text())
    checked: Dict[str, float] = {}

    history = datasets.read_frame(run_dir / report.artifacts["loss_history"], ["epoch", "loss"])
    if not np.array_equal(history["loss"].to_numpy(), np.asarray(report.loss_history)):
        raise DataSchemaError("loss history file disagrees with the report")
    if report.best_epoch != int(np.argmin(report.loss_history)) + 1:
        raise DataSchemaError("best_epoch is not the first minimum of the loss history")

    if report.experiment == "hydro":
        frame = datasets.read_frame(run_dir / report.artifacts["predictions"], HYDRO_PREDICTION_COLUMNS)
        observed = frame["q_obs"].to_numpy(dtype=np.float64)
        train = (frame["split"] == "train").to_numpy() & np.isfinite(observed)
        forecast = (frame["split"] == "forecast").to_numpy() & np.isfinite(observed)
        q_model = frame["q_model"].to_numpy(dtype=np.float64)
        _check("train_rmse", report.train_rmse, daily_rmse(q_model[train], observed[train]), checked)
        _check("test_rmse", report.test_rmse, daily_rmse(q_model[forecast], observed[forecast]), checked)
        if report.baseline_rmse is not None:
            q_gr4j = frame["q_gr4j"].to_numpy(dtype=np.float64)
            _check("baseline_rmse", report.baseline_rmse, daily_rmse(q_gr4j[forecast], observed[forecast]), checked)
        return checked

    for split in ("train", "test"):
        arrays = datasets.read_sequence_predictions(run_dir / report.artifacts[f"predictions_{split}"],
                                                    report.experiment)
        _check(f"{split}_rmse", getattr(report, f"{split}_rmse"), rmse(arrays["pred"], arrays["true"]), checked)
        _check(f"{split}_rmse_per_step", getattr(report, f"{split}_rmse_per_step"),
               rmse_per_step(arrays["pred"], arrays["true"]), checked)
        if split == "test":
            _check("baseline_rmse", report.baseline_rmse, rmse(arrays["input"], arrays["true"]), checked)
    return checked
