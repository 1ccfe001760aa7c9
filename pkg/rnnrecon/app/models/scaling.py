"""
Per-channel standardization fitted on training data only.
"""

from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from rnnrecon.app.exceptions import ShapeMismatchError


def _moments(values: np.ndarray):
    values = np.asarray(values, dtype=np.float64)
    flat = values.reshape(-1, values.shape[-1])
    flat = flat[np.isfinite(flat).all(axis=1)]
    if flat.shape[0] == 0:
        raise ShapeMismatchError("no finite rows to fit a standardizer on")
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    # constant channels pass through centred but unscaled
    std[std == 0.0] = 1.0
    return mean, std


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Shift and scale for the input channels and the output channels."""
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    @classmethod
    def fit(cls, inputs: np.ndarray, labels: np.ndarray) -> "Standardizer":
        """Reduce over every axis but the last; rows with missing values are skipped."""
        in_mean, in_std = _moments(inputs)
        out_mean, out_std = _moments(labels)
        return cls(in_mean, in_std, out_mean, out_std)

    @classmethod
    def identity(cls, n_in: int, n_out: int) -> "Standardizer":
        return cls(np.zeros(n_in), np.ones(n_in), np.zeros(n_out), np.ones(n_out))

    def inputs(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.in_mean) / self.in_std

    def labels(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.out_mean) / self.out_std

    def restore(self, y: np.ndarray) -> np.ndarray:
        """Map network outputs back to physical units."""
        return np.asarray(y, dtype=np.float64) * self.out_std + self.out_mean

    def to_dict(self) -> Dict[str, List[float]]:
        return {name: getattr(self, name).tolist() for name in ("in_mean", "in_std", "out_mean", "out_std")}

    @classmethod
    def from_dict(cls, payload: Dict[str, List[float]]) -> "Standardizer":
        return cls(**{name: np.asarray(values, dtype=np.float64) for name, values in payload.items()})
