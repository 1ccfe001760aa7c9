"""
Overlapping sliding windows over a daily hydro record and overlap-averaged
reconstruction of a single series from per-window predictions.

Day indices are 0-based; spans are half-open ``(start, stop)`` ranges.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from rnnrecon.app.exceptions import ConfigError, ShapeMismatchError, WindowCoverageError
from rnnrecon.app.models.gr4j import Records, as_series


@dataclass(frozen=True, eq=False)
class WindowSet:
    """Windows (W, L, 2) of [precip, pet] with labels (W, L, 1) of flow."""
    window_len: int
    inputs: np.ndarray
    labels: np.ndarray
    start_indices: np.ndarray

    def __len__(self) -> int:
        return len(self.start_indices)


def window_starts(span: Tuple[int, int], window_len: int) -> np.ndarray:
    start, stop = span
    if stop - start < window_len:
        raise WindowCoverageError(
            f"span [{start}, {stop}) holds {stop - start} days, shorter than the window length {window_len}",
            day=start,
        )
    return np.arange(start, stop - window_len + 1)


def make_windows(records: Records, window_len: int, span: Optional[Tuple[int, int]] = None) -> WindowSet:
    """
    Every full-length window starting inside the span, one day apart.

    A span of M days yields M - L + 1 windows. Missing flow stays NaN in the labels.
    """
    if window_len < 1:
        raise ConfigError("window length must be positive")
    series = as_series(records)
    span = span if span is not None else (0, len(series))
    if span[0] < 0 or span[1] > len(series):
        raise WindowCoverageError(f"span {span} outside the record of {len(series)} days")
    starts = window_starts(span, window_len)

    forcing = np.stack([series.precip, series.pet], axis=1)
    index = starts[:, None] + np.arange(window_len)[None, :]
    return WindowSet(
        window_len=window_len,
        inputs=forcing[index],
        labels=series.flow[index][..., None],
        start_indices=starts,
    )


def reconstruct_from_windows(predictions: np.ndarray, starts: np.ndarray, total_len: int) -> np.ndarray:
    """
    Average the window predictions covering each day.

    Args:
        predictions: (W, L) or (W, L, 1) window values
        starts: First day of each window
        total_len: Length of the reconstructed series

    Returns:
        Series of shape (total_len,)
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.ndim == 3:
        if predictions.shape[2] != 1:
            raise ShapeMismatchError(f"expected single-channel windows, got shape {predictions.shape}")
        predictions = predictions[..., 0]
    starts = np.asarray(starts, dtype=np.int64)
    if predictions.ndim != 2 or predictions.shape[0] != len(starts):
        raise ShapeMismatchError(f"{len(starts)} starts for predictions of shape {predictions.shape}")

    window_len = predictions.shape[1]
    if len(starts) and (starts.min() < 0 or starts.max() + window_len > total_len):
        raise ShapeMismatchError(f"windows extend outside a series of {total_len} days")

    n_windows = len(starts)
    index = (starts[:, None] + np.arange(window_len)[None, :]).ravel()
    window_id = np.repeat(np.arange(n_windows), window_len)
    values = predictions.ravel()

    counts = np.zeros(total_len, dtype=np.int64)
    np.add.at(counts, index, 1)
    gaps = np.flatnonzero(counts == 0)
    if gaps.size:
        day = int(gaps[0])
        raise WindowCoverageError(f"day {day} is not covered by any window", day=day)

    # average deviations from the first covering window so equal values come back bit for bit
    owner = np.full(total_len, n_windows)
    np.minimum.at(owner, index, window_id)
    days = np.arange(total_len)
    reference = predictions[owner, days - starts[owner]]
    deviation = np.zeros(total_len)
    np.add.at(deviation, index, values - reference[index])
    return reference + deviation / counts
