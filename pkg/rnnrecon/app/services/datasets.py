"""
CSV readers and writers for orbits, trajectories, hydro records and
prediction tables, plus the dataset manifest.

Floats are written with 17 significant digits so files round-trip exactly.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Sequence, Union

import numpy as np
import pandas as pd

from rnnrecon.app.exceptions import DataSchemaError
from rnnrecon.app.models.gr4j import HydroSeries
from rnnrecon.app.schemas.report import Manifest


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.17g"
ORBIT_COLUMNS = ["orbit_id", "t", "y1", "y2", "y3"]
TRAJECTORY_COLUMNS = ["agent_id", "t", "x", "y"]
HYDRO_COLUMNS = ["date", "p_mm", "pet_mm", "temp_c", "q_mm"]
CHANNELS = {"lorenz": ["y1", "y2", "y3"], "swarm": ["x", "y"]}

MANIFEST_FILE = "manifest.json"


def ensure_dir(path: PathLike) -> Path:
    """Create ``path`` and its parents; an unwritable location is a data error."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataSchemaError(f"cannot create directory {path}: {exc}") from exc
    return path


def write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    try:
        path.write_text(text)
    except OSError as exc:
        raise DataSchemaError(f"cannot write {path}: {exc}") from exc
    return path


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")
    except OSError as exc:
        raise DataSchemaError(f"cannot write {path}: {exc}") from exc
    return path


def read_frame(path: PathLike, columns: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataSchemaError(f"data file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise DataSchemaError(f"cannot parse {path}: {exc}") from exc
    if list(frame.columns) != list(columns):
        raise DataSchemaError(f"{path.name}: header {list(frame.columns)} does not match {list(columns)}")
    return frame


def _stack_frame(array: np.ndarray, id_column: str, channels: Sequence[str]) -> pd.DataFrame:
    n, t, d = array.shape
    frame = pd.DataFrame(array.reshape(n * t, d), columns=list(channels))
    frame.insert(0, "t", np.tile(np.arange(t), n))
    frame.insert(0, id_column, np.repeat(np.arange(n), t))
    return frame


def _unstack_frame(frame: pd.DataFrame, id_column: str, channels: Sequence[str], name: str) -> np.ndarray:
    frame = frame.sort_values([id_column, "t"], kind="stable")
    ids = frame[id_column].to_numpy()
    n = len(np.unique(ids))
    if n == 0 or len(frame) % n:
        raise DataSchemaError(f"{name}: sequences have unequal lengths")
    t = len(frame) // n
    if not (np.array_equal(np.unique(ids), np.arange(n))
            and np.array_equal(frame["t"].to_numpy(), np.tile(np.arange(t), n))):
        raise DataSchemaError(f"{name}: ids must run 0..{n - 1} and every sequence needs steps 0..{t - 1}")
    values = frame[list(channels)].to_numpy(dtype=np.float64)
    if not np.isfinite(values).all():
        raise DataSchemaError(f"{name}: missing or non-finite values")
    return values.reshape(n, t, len(channels))


def write_orbits(path: PathLike, orbits: Union[np.ndarray, Sequence[np.ndarray]]) -> Path:
    """Orbits (n, steps + 1, 3) in long form, one row per point."""
    return write_frame(_stack_frame(np.asarray(orbits, dtype=np.float64), "orbit_id", ORBIT_COLUMNS[2:]), path)


def read_orbits(path: PathLike) -> np.ndarray:
    return _unstack_frame(read_frame(path, ORBIT_COLUMNS), "orbit_id", ORBIT_COLUMNS[2:], Path(path).name)


def write_trajectories(path: PathLike, trajectories: np.ndarray) -> Path:
    """Agent trajectories (N, T, 2) in long form."""
    return write_frame(_stack_frame(np.asarray(trajectories, dtype=np.float64), "agent_id", ["x", "y"]), path)


def read_trajectories(path: PathLike) -> np.ndarray:
    return _unstack_frame(read_frame(path, TRAJECTORY_COLUMNS), "agent_id", ["x", "y"], Path(path).name)


def write_hydro(path: PathLike, series: HydroSeries) -> Path:
    frame = pd.DataFrame({
        "date": pd.to_datetime(series.dates).strftime("%Y-%m-%d"),
        "p_mm": series.precip,
        "pet_mm": series.pet,
        "temp_c": series.temp,
        "q_mm": series.flow,
    })
    return write_frame(frame, path)


def read_hydro(path: PathLike) -> HydroSeries:
    """
    Read a daily hydro CSV. Dates must be consecutive days; q_mm may be empty.
    """
    frame = read_frame(path, HYDRO_COLUMNS)
    try:
        dates = pd.to_datetime(frame["date"], format="%Y-%m-%d").to_numpy().astype("datetime64[D]")
    except ValueError as exc:
        raise DataSchemaError(f"{Path(path).name}: bad date: {exc}") from exc
    if len(dates) == 0:
        raise DataSchemaError(f"{Path(path).name}: no rows")
    if len(dates) > 1 and not (np.diff(dates) == np.timedelta64(1, "D")).all():
        raise DataSchemaError(f"{Path(path).name}: dates must be consecutive days")
    forcing = frame[["p_mm", "pet_mm", "temp_c"]].to_numpy(dtype=np.float64)
    if not np.isfinite(forcing).all():
        raise DataSchemaError(f"{Path(path).name}: forcing columns must be complete")
    return HydroSeries(
        dates=dates,
        precip=forcing[:, 0],
        pet=forcing[:, 1],
        temp=forcing[:, 2],
        flow=frame["q_mm"].to_numpy(dtype=np.float64),
    )


def write_sequence_predictions(
    path: PathLike,
    experiment: str,
    predicted: np.ndarray,
    truth: np.ndarray,
    inputs: np.ndarray,
) -> Path:
    """
    Per-sequence predictions with their labels and raw inputs, one row per time-step.

    Columns: seq_id, t, then ``<ch>_pred``, ``<ch>_true``, ``<ch>_input`` per channel.
    """
    channels = CHANNELS[experiment]
    n, t, _ = predicted.shape
    columns = {"seq_id": np.repeat(np.arange(n), t), "t": np.tile(np.arange(t), n)}
    for suffix, array in (("pred", predicted), ("true", truth), ("input", inputs)):
        flat = np.asarray(array, dtype=np.float64).reshape(n * t, len(channels))
        for c, channel in enumerate(channels):
            columns[f"{channel}_{suffix}"] = flat[:, c]
    return write_frame(pd.DataFrame(columns), path)


def read_sequence_predictions(path: PathLike, experiment: str) -> Dict[str, np.ndarray]:
    """Inverse of ``write_sequence_predictions``: arrays keyed 'pred', 'true', 'input'."""
    channels = CHANNELS[experiment]
    columns = ["seq_id", "t"] + [f"{ch}_{s}" for s in ("pred", "true", "input") for ch in channels]
    frame = read_frame(path, columns)
    return {
        suffix: _unstack_frame(frame, "seq_id", [f"{ch}_{suffix}" for ch in channels], Path(path).name)
        for suffix in ("pred", "true", "input")
    }


def write_manifest(directory: PathLike, manifest: Manifest) -> Path:
    return write_text(Path(directory) / MANIFEST_FILE, manifest.model_dump_json(indent=2))


def read_manifest(directory: PathLike) -> Manifest:
    path = Path(directory) / MANIFEST_FILE
    if not path.is_file():
        raise DataSchemaError(f"no {MANIFEST_FILE} in {directory}")
    try:
        return Manifest.model_validate_json(path.read_text())
    except ValueError as exc:
        raise DataSchemaError(f"invalid manifest {path}: {exc}") from exc


def write_json(path: PathLike, payload) -> Path:
    return write_text(path, json.dumps(payload, indent=2))
