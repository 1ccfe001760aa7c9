"""
Lorenz orbit generation with a deliberate formulation error.

True orbits integrate the standard Lorenz system. Erroneous orbits drop the
-y2 term of the second equation; each erroneous point is produced by pushing
the matching true point through the erroneous system for ``eta`` steps.
"""

import logging
from typing import Callable, List, Tuple

import numpy as np

from rnnrecon.app.exceptions import ConfigError, DivergenceError
from rnnrecon.app.schemas.config import CorruptionSpec, LorenzParams


logger = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray, LorenzParams], np.ndarray]


def lorenz_true_derivative(y: np.ndarray, p: LorenzParams) -> np.ndarray:
    """
    Standard Lorenz vector field. Works on a 3-vector or any (..., 3) array.

    The published system prints ``y1 (rho - x3)`` in its second equation;
    x3 is read as y3, the standard Lorenz form.
    """
    y = np.asarray(y, dtype=np.float64)
    y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
    return np.stack([
        p.sigma * (y2 - y1),
        y1 * (p.rho - y3) - y2,
        y1 * y2 - p.beta * y3,
    ], axis=-1)


def lorenz_err_derivative(x: np.ndarray, p: LorenzParams) -> np.ndarray:
    """Mis-specified Lorenz field: the -x2 term of the second equation is removed."""
    x = np.asarray(x, dtype=np.float64)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([
        p.sigma * (x2 - x1),
        x1 * (p.rho - x3),
        x1 * x2 - p.beta * x3,
    ], axis=-1)


def rk4_step(derivative: VectorField, y: np.ndarray, p: LorenzParams) -> np.ndarray:
    h = p.delta
    k1 = derivative(y, p)
    k2 = derivative(y + 0.5 * h * k1, p)
    k3 = derivative(y + 0.5 * h * k2, p)
    k4 = derivative(y + h * k3, p)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def euler_step(derivative: VectorField, y: np.ndarray, p: LorenzParams) -> np.ndarray:
    return y + p.delta * derivative(y, p)


STEPPERS = {"rk4": rk4_step, "euler": euler_step}


def integrate(derivative: VectorField, y0: np.ndarray, p: LorenzParams, method: str = "rk4") -> np.ndarray:
    """
    Fixed-step integration for ``p.steps`` steps of size ``p.delta``.

    Args:
        derivative: Vector field, e.g. ``lorenz_true_derivative``
        y0: Initial condition (3,)
        p: Lorenz parameters
        method: "rk4" (default) or "euler"

    Returns:
        Orbit array of shape (steps + 1, 3); row 0 is y0
    """
    step = STEPPERS[method]
    orbit = np.empty((p.steps + 1, 3))
    orbit[0] = np.asarray(y0, dtype=np.float64)
    if not np.isfinite(orbit[0]).all():
        raise DivergenceError("initial condition is not finite", step=0)
    for t in range(1, p.steps + 1):
        orbit[t] = step(derivative, orbit[t - 1], p)
        if not np.isfinite(orbit[t]).all():
            raise DivergenceError(f"orbit diverged at step {t}", step=t)
    return orbit


def corrupt_orbit(true_orbit: np.ndarray, spec: CorruptionSpec, p: LorenzParams, method: str = "rk4") -> np.ndarray:
    """
    Push every point of a true orbit through the erroneous field for ``spec.eta`` steps.

    All rows are advanced together; the result has the same shape as the input.
    """
    if spec.eta >= p.steps:
        raise ConfigError(f"corruption level {spec.eta} must be below the step count {p.steps}")
    step = STEPPERS[method]
    points = np.array(true_orbit, dtype=np.float64, copy=True)
    for s in range(1, spec.eta + 1):
        points = step(lorenz_err_derivative, points, p)
        if not np.isfinite(points).all():
            raise DivergenceError(f"corruption push diverged at step {s}", step=s)
    return points


def orbit_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Per-orbit sub-seed, independent of generation order."""
    return np.random.SeedSequence([seed, index])


def initial_condition(seed: int, index: int, low: float = -15.0, high: float = 15.0) -> np.ndarray:
    return np.random.default_rng(orbit_seed(seed, index)).uniform(low, high, size=3)


def generate_lorenz_dataset(
    n_orbits: int,
    spec: CorruptionSpec,
    p: LorenzParams,
    seed: int,
    method: str = "rk4",
    low: float = -15.0,
    high: float = 15.0,
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """
    Generate paired true and erroneous orbits.

    Initial conditions are uniform on [low, high]^3, one sub-seed per orbit.

    Returns:
        (true orbits, erroneous orbits), each a list of (steps + 1, 3) arrays
    """
    if n_orbits < 1:
        raise ConfigError("n_orbits must be at least 1")
    true_orbits, erroneous = [], []
    for index in range(n_orbits):
        y0 = initial_condition(seed, index, low, high)
        orbit = integrate(lorenz_true_derivative, y0, p, method)
        true_orbits.append(orbit)
        erroneous.append(corrupt_orbit(orbit, spec, p, method))
    logger.info("generated %d orbits of %d steps at eta=%d", n_orbits, p.steps, spec.eta)
    return true_orbits, erroneous


def mean_displacement(true_orbit: np.ndarray, erroneous_orbit: np.ndarray) -> float:
    """Mean per-point Euclidean distance between paired orbits."""
    return float(np.linalg.norm(np.asarray(erroneous_orbit) - np.asarray(true_orbit), axis=1).mean())
