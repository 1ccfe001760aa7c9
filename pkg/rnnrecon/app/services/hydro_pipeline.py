"""
Streamflow modelling with windowed RNN training, overlap-averaged
reconstruction and a grid-calibrated GR4J benchmark.

Days [0, n_train_days) form the training span; the remaining days are the
forecast span. Only windows lying entirely inside the training span are used
for training, while every window of the record is predicted.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from rnnrecon.app.exceptions import ConfigError, DataSchemaError
from rnnrecon.app.models.gr4j import (
    CalibrationResult,
    HydroSeries,
    Records,
    as_series,
    calibrate_grid,
    daily_rmse,
    run_gr4j,
)
from rnnrecon.app.models.rnn import RnnParams, SequenceBatch, TrainingResult, predict, train_two_pass
from rnnrecon.app.models.scaling import Standardizer
from rnnrecon.app.models.windows import WindowSet, make_windows, reconstruct_from_windows
from rnnrecon.app.schemas.config import Gr4jParams, HydroSettings, RnnConfig


logger = logging.getLogger(__name__)

Predictor = Callable[[WindowSet], np.ndarray]


@dataclass(eq=False)
class HydroOutcome:
    """Modelled flow over the whole record and its scores on both spans."""
    q_model: np.ndarray
    train_rmse: float
    forecast_rmse: float
    standardizer: Standardizer
    params: Optional[RnnParams] = None
    training: Optional[TrainingResult] = None
    q_gr4j: Optional[np.ndarray] = None
    gr4j_params: Optional[Gr4jParams] = None
    gr4j_train_rmse: Optional[float] = None
    gr4j_forecast_rmse: Optional[float] = None
    calibration: Optional[CalibrationResult] = None


def span_masks(series: HydroSeries, n_train_days: int, skip_days: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Observed days of the training span (after ``skip_days``) and of the forecast span."""
    observed = np.isfinite(series.flow)
    train = np.zeros(len(series), dtype=bool)
    train[skip_days:n_train_days] = True
    forecast = np.zeros(len(series), dtype=bool)
    forecast[n_train_days:] = True
    return train & observed, forecast & observed


def score_spans(q_model: np.ndarray, series: HydroSeries, n_train_days: int,
                skip_days: int = 0) -> Tuple[float, float]:
    """Daily RMSE on the training span and on the forecast span."""
    train, forecast = span_masks(series, n_train_days, skip_days)
    if not train.any() or not forecast.any():
        raise DataSchemaError("both the training and the forecast span need observed flow")
    return (daily_rmse(q_model[train], series.flow[train]),
            daily_rmse(q_model[forecast], series.flow[forecast]))


def fit_standardizer(series: HydroSeries, n_train_days: int, enabled: bool = True) -> Standardizer:
    if not enabled:
        return Standardizer.identity(2, 1)
    forcing = np.stack([series.precip, series.pet], axis=1)[:n_train_days]
    return Standardizer.fit(forcing, series.flow[:n_train_days, None])


def training_batch(series: HydroSeries, window_len: int, n_train_days: int, scaler: Standardizer) -> SequenceBatch:
    windows = make_windows(series, window_len, (0, n_train_days))
    if np.isnan(windows.labels).any():
        raise DataSchemaError("observed flow is missing inside the training span")
    return SequenceBatch(scaler.inputs(windows.inputs), scaler.labels(windows.labels))


def network_predictor(params: RnnParams, rnn: RnnConfig, scaler: Standardizer) -> Predictor:
    def predictor(windows: WindowSet) -> np.ndarray:
        return scaler.restore(predict(params, rnn, scaler.inputs(windows.inputs)))
    return predictor


def model_flow(series: HydroSeries, window_len: int, predictor: Predictor) -> np.ndarray:
    """Predict every window of the record and average the overlaps day by day."""
    windows = make_windows(series, window_len)
    predictions = np.asarray(predictor(windows), dtype=np.float64)
    return reconstruct_from_windows(predictions, windows.start_indices, len(series))


def hydro_pipeline(
    records: Records,
    settings: HydroSettings,
    rnn: RnnConfig,
    seed: int = 0,
    standardize: bool = True,
    predictor: Optional[Predictor] = None,
    jobs: int = 1,
) -> HydroOutcome:
    """
    Train on the training span, model the whole record and score both spans.

    Args:
        records: Daily record with observed flow on the training span
        settings: Window length, spans and benchmark controls
        rnn: Network configuration; ``seq_len`` must equal the window length
        seed: Seed of the calibration grid
        standardize: Standardize channels with training-span statistics
        predictor: Replaces the trained network when given (no training happens)
        jobs: Worker processes for the GR4J calibration

    Returns:
        HydroOutcome
    """
    series = as_series(records)
    window_len, n_train = settings.window_len, settings.n_train_days
    if rnn.seq_len != window_len:
        raise ConfigError(f"rnn.seq_len={rnn.seq_len} differs from the window length {window_len}")
    if len(series) <= n_train:
        raise DataSchemaError(f"record of {len(series)} days leaves no forecast span after {n_train} training days")

    scaler = fit_standardizer(series, n_train, standardize)
    params, training = None, None
    if predictor is None:
        batch = training_batch(series, window_len, n_train, scaler)
        logger.info("training on %d windows of %d days", len(batch), window_len)
        training = train_two_pass(rnn, batch)
        params = training.params
        predictor = network_predictor(params, rnn, scaler)

    q_model = model_flow(series, window_len, predictor)
    train_rmse, forecast_rmse = score_spans(q_model, series, n_train)
    logger.info("L=%d: training RMSE %.4f, forecast RMSE %.4f", window_len, train_rmse, forecast_rmse)

    outcome = HydroOutcome(
        q_model=q_model,
        train_rmse=train_rmse,
        forecast_rmse=forecast_rmse,
        standardizer=scaler,
        params=params,
        training=training,
    )
    if settings.benchmark:
        calibration = calibrate_grid(series, settings.calibration_points, seed, jobs=jobs,
                                     span=(0, n_train), warmup_days=settings.warmup_days)
        q_gr4j = run_gr4j(series, calibration.best, settings.warmup_days)
        skip = settings.warmup_days if n_train > settings.warmup_days else 0
        outcome.gr4j_train_rmse, outcome.gr4j_forecast_rmse = score_spans(q_gr4j, series, n_train, skip)
        outcome.q_gr4j = q_gr4j
        outcome.gr4j_params = calibration.best
        outcome.calibration = calibration
        logger.info("GR4J benchmark forecast RMSE %.4f", outcome.gr4j_forecast_rmse)
    return outcome
