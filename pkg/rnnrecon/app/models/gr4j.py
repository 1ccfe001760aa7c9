"""
GR4J daily rainfall-runoff model with a degree-day snow module.

The snow routine partitions precipitation into pack and liquid water, melts
and refreezes with degree-day rates and releases the liquid water the pack
cannot hold. Its outflow feeds the standard four-parameter GR4J: production
store, percolation, 0.9/0.1 split over two unit hydrographs, groundwater
exchange and a non-linear routing store.

Also provides grid calibration over the 8 parameters and a synthetic
catchment generator used when no observed record is available.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numba import njit
from scipy.stats import qmc

from rnnrecon.app.exceptions import ConfigError, DataSchemaError, ParameterRangeError, ShapeMismatchError
from rnnrecon.app.models.rnn import rmse
from rnnrecon.app.schemas.config import GR4J_BOUNDS, GR4J_PARAM_NAMES, Gr4jParams


logger = logging.getLogger(__name__)

WARMUP_DAYS = 365
S_INIT_FRACTION = 0.3
R_INIT_FRACTION = 0.5


@dataclass(frozen=True)
class HydroRecord:
    """One day of forcing and (optionally) observed flow, all in mm/day and degC."""
    day_index: int
    precip: float
    pet: float
    temp: float
    flow: Optional[float] = None


@dataclass(frozen=True, eq=False)
class HydroSeries:
    """Column view of a daily record; missing flow is NaN."""
    dates: np.ndarray
    precip: np.ndarray
    pet: np.ndarray
    temp: np.ndarray
    flow: np.ndarray

    def __post_init__(self):
        n = len(self.dates)
        for name in ("precip", "pet", "temp", "flow"):
            column = np.asarray(getattr(self, name), dtype=np.float64)
            if column.shape != (n,):
                raise DataSchemaError(f"column '{name}' has shape {column.shape}, expected ({n},)")
            object.__setattr__(self, name, column)
        if (self.precip < 0).any() or (self.pet < 0).any():
            raise DataSchemaError("precipitation and PET must be non-negative")
        if (self.flow[~np.isnan(self.flow)] < 0).any():
            raise DataSchemaError("observed flow must be non-negative")

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def has_flow(self) -> bool:
        return bool(np.isfinite(self.flow).any())

    def with_flow(self, flow: np.ndarray) -> "HydroSeries":
        return replace(self, flow=np.asarray(flow, dtype=np.float64))

    def records(self) -> List[HydroRecord]:
        return [
            HydroRecord(i, float(p), float(e), float(t), None if np.isnan(q) else float(q))
            for i, (p, e, t, q) in enumerate(zip(self.precip, self.pet, self.temp, self.flow))
        ]

    @classmethod
    def from_records(cls, records: Sequence[HydroRecord], start: str = "2000-01-01") -> "HydroSeries":
        if not records:
            raise DataSchemaError("no hydro records")
        records = sorted(records, key=lambda r: r.day_index)
        first = records[0].day_index
        dates = np.datetime64(start, "D") + np.array([r.day_index - first for r in records])
        return cls(
            dates=dates,
            precip=np.array([r.precip for r in records]),
            pet=np.array([r.pet for r in records]),
            temp=np.array([r.temp for r in records]),
            flow=np.array([np.nan if r.flow is None else r.flow for r in records]),
        )


Records = Union[HydroSeries, Sequence[HydroRecord]]


def as_series(records: Records) -> HydroSeries:
    if isinstance(records, HydroSeries):
        return records
    return HydroSeries.from_records(records)


@dataclass(frozen=True, eq=False)
class Gr4jState:
    """
    Model stores in mm.

    ``uh1`` / ``uh2`` hold the routed water still to leave each unit
    hydrograph, index j due in j + 1 days.
    """
    s: float
    r: float
    uh1: np.ndarray
    uh2: np.ndarray
    snowpack: float = 0.0
    liquid: float = 0.0

    @classmethod
    def initial(cls, params: Gr4jParams) -> "Gr4jState":
        ord1, ord2 = unit_hydrographs(params.x4)
        return cls(
            s=S_INIT_FRACTION * params.x1,
            r=R_INIT_FRACTION * params.x3,
            uh1=np.zeros(len(ord1)),
            uh2=np.zeros(len(ord2)),
        )

    def storage(self) -> float:
        """Total water held in every store, including the snowpack."""
        return self.s + self.r + float(self.uh1.sum() + self.uh2.sum()) + self.snowpack + self.liquid


def validate_params(params: Gr4jParams) -> None:
    """Reject parameters outside the recommended ranges or with empty stores."""
    for name in GR4J_PARAM_NAMES:
        low, high = GR4J_BOUNDS[name]
        value = getattr(params, name)
        if not low <= value <= high:
            raise ParameterRangeError(f"{name}={value} outside [{low}, {high}]")
    if params.x1 <= 0 or params.x3 <= 0:
        raise ParameterRangeError("x1 and x3 must be strictly positive")


@njit
def _snow_kernel(snow, precip, temp, tt, cfmax, cfr, cwh):
    """Degree-day snow routine on ``snow = [pack, liquid]``, updated in place; returns the spill."""
    pack = snow[0]
    liquid = snow[1]
    if temp <= tt:
        pack += precip
    else:
        liquid += precip

    melt = min(pack, cfmax * max(temp - tt, 0.0))
    pack -= melt
    liquid += melt

    refreeze = min(liquid, cfr * cfmax * max(tt - temp, 0.0))
    liquid -= refreeze
    pack += refreeze

    spill = max(liquid - cwh * pack, 0.0)
    liquid -= spill
    snow[0] = pack
    snow[1] = liquid
    return spill


def snow_step(state: Gr4jState, params: Gr4jParams, precip: float, temp: float) -> Tuple[Gr4jState, float]:
    """
    Degree-day snow routine for one day.

    Returns:
        (updated state, water released to the soil in mm)
    """
    if precip < 0:
        raise DataSchemaError("precipitation must be non-negative")
    snow = np.array([state.snowpack, state.liquid], dtype=np.float64)
    spill = _snow_kernel(snow, float(precip), float(temp), params.tt, params.cfmax, params.cfr, params.cwh)
    return replace(state, snowpack=float(snow[0]), liquid=float(snow[1])), float(spill)


def _s_curve1(t: float, x4: float) -> float:
    if t <= 0:
        return 0.0
    if t < x4:
        return (t / x4) ** 2.5
    return 1.0


def _s_curve2(t: float, x4: float) -> float:
    if t <= 0:
        return 0.0
    if t <= x4:
        return 0.5 * (t / x4) ** 2.5
    if t < 2.0 * x4:
        return 1.0 - 0.5 * (2.0 - t / x4) ** 2.5
    return 1.0


@lru_cache(maxsize=4096)
def _ordinates(x4: float) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    n1 = int(math.ceil(x4))
    n2 = int(math.ceil(2.0 * x4))
    ord1 = tuple(_s_curve1(j, x4) - _s_curve1(j - 1, x4) for j in range(1, n1 + 1))
    ord2 = tuple(_s_curve2(j, x4) - _s_curve2(j - 1, x4) for j in range(1, n2 + 1))
    return ord1, ord2


def unit_hydrographs(x4: float) -> Tuple[np.ndarray, np.ndarray]:
    """Ordinates of UH1 (ceil(x4) days) and UH2 (ceil(2 x4) days); each sums to one."""
    ord1, ord2 = _ordinates(float(x4))
    return np.array(ord1), np.array(ord2)


@njit
def _gr4j_kernel(stores, uh1, uh2, x1, x2, x3, precip, pet, ord1, ord2):
    """
    One GR4J day. ``stores = [s, r]`` and the UH buffers are updated in place.

    Returns:
        (streamflow, actual evapotranspiration, exchange gain) in mm
    """
    s = stores[0]
    r_prev = stores[1]

    # interception: rainfall and PET cancel first
    if precip >= pet:
        p_n = precip - pet
        tws = math.tanh(p_n / x1)
        p_s = x1 * (1.0 - (s / x1) ** 2) * tws / (1.0 + s / x1 * tws)
        e_s = 0.0
    else:
        p_n = 0.0
        tws = math.tanh((pet - precip) / x1)
        e_s = s * (2.0 - s / x1) * tws / (1.0 + (1.0 - s / x1) * tws)
        p_s = 0.0

    s = s - e_s + p_s
    perc = s * (1.0 - (1.0 + (4.0 / 9.0 * s / x1) ** 4) ** -0.25)
    s -= perc
    p_r = perc + (p_n - p_s)

    for j in range(uh1.shape[0]):
        uh1[j] += ord1[j] * (0.9 * p_r)
    for j in range(uh2.shape[0]):
        uh2[j] += ord2[j] * (0.1 * p_r)
    q9 = uh1[0]
    q1 = uh2[0]
    for j in range(uh1.shape[0] - 1):
        uh1[j] = uh1[j + 1]
    uh1[uh1.shape[0] - 1] = 0.0
    for j in range(uh2.shape[0] - 1):
        uh2[j] = uh2[j + 1]
    uh2[uh2.shape[0] - 1] = 0.0

    exchange = x2 * (r_prev / x3) ** 3.5
    r = max(0.0, r_prev + q9 + exchange)
    exchange_r = r - (r_prev + q9)
    q_r = r * (1.0 - (1.0 + (r / x3) ** 4) ** -0.25)
    r -= q_r
    q_d = max(0.0, q1 + exchange)
    exchange_d = q_d - q1

    stores[0] = s
    stores[1] = r
    return q_r + q_d, (precip - p_n) + e_s, exchange_r + exchange_d


@njit
def _run_kernel(precip, pet, temp, stores, uh1, uh2, snow,
                x1, x2, x3, tt, cfmax, cfr, cwh, ord1, ord2, q, aet, gain):
    for day in range(precip.shape[0]):
        water = _snow_kernel(snow, precip[day], temp[day], tt, cfmax, cfr, cwh)
        flow, et, exch = _gr4j_kernel(stores, uh1, uh2, x1, x2, x3, water, pet[day], ord1, ord2)
        q[day] = flow
        aet[day] = et
        gain[day] = exch


def _check_state(state: Gr4jState, ord1: np.ndarray, ord2: np.ndarray) -> None:
    if len(state.uh1) != len(ord1) or len(state.uh2) != len(ord2):
        raise ShapeMismatchError(
            f"unit hydrograph stores of length ({len(state.uh1)}, {len(state.uh2)}) "
            f"do not match x4 ordinates ({len(ord1)}, {len(ord2)})"
        )


def _state_arrays(state: Gr4jState) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    return (
        np.array([state.s, state.r], dtype=np.float64),
        np.array(state.uh1, dtype=np.float64),
        np.array(state.uh2, dtype=np.float64),
        np.array([state.snowpack, state.liquid], dtype=np.float64),
    )


def _state_from_arrays(stores: np.ndarray, uh1: np.ndarray, uh2: np.ndarray, snow: np.ndarray) -> Gr4jState:
    return Gr4jState(s=float(stores[0]), r=float(stores[1]), uh1=uh1, uh2=uh2,
                     snowpack=float(snow[0]), liquid=float(snow[1]))


def gr4j_step(state: Gr4jState, params: Gr4jParams, net_precip: float, pet: float) -> Tuple[Gr4jState, float]:
    """
    One daily GR4J step on the water released by the snow routine.

    Args:
        state: Current stores
        params: Model parameters (validated against their ranges)
        net_precip: Water reaching the soil (mm)
        pet: Potential evapotranspiration (mm)

    Returns:
        (updated state, streamflow in mm)
    """
    validate_params(params)
    if net_precip < 0 or pet < 0:
        raise DataSchemaError("net precipitation and PET must be non-negative")
    ord1, ord2 = unit_hydrographs(params.x4)
    _check_state(state, ord1, ord2)
    stores, uh1, uh2, snow = _state_arrays(state)
    q, _, _ = _gr4j_kernel(stores, uh1, uh2, params.x1, params.x2, params.x3,
                           float(net_precip), float(pet), ord1, ord2)
    return _state_from_arrays(stores, uh1, uh2, snow), float(q)


@dataclass(eq=False)
class Gr4jRun:
    """Daily outputs of a simulation; the first ``warmup_days`` are initialization transients."""
    q: np.ndarray
    actual_et: np.ndarray
    exchange_gain: np.ndarray
    initial_state: Gr4jState
    final_state: Gr4jState
    warmup_days: int

    @property
    def warmup_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.q), dtype=bool)
        mask[:self.warmup_days] = True
        return mask


def simulate_gr4j(records: Records, params: Gr4jParams, warmup_days: int = WARMUP_DAYS,
                  state: Optional[Gr4jState] = None) -> Gr4jRun:
    """Run snow + GR4J day by day and keep every flux needed for a water balance."""
    series = as_series(records)
    if len(series) == 0:
        raise DataSchemaError("no hydro records")
    validate_params(params)
    ord1, ord2 = unit_hydrographs(params.x4)
    initial = Gr4jState.initial(params) if state is None else state
    _check_state(initial, ord1, ord2)

    n = len(series)
    q = np.empty(n)
    aet = np.empty(n)
    gain = np.empty(n)
    stores, uh1, uh2, snow = _state_arrays(initial)
    _run_kernel(series.precip, series.pet, series.temp, stores, uh1, uh2, snow,
                params.x1, params.x2, params.x3, params.tt, params.cfmax, params.cfr, params.cwh,
                ord1, ord2, q, aet, gain)

    return Gr4jRun(q=q, actual_et=aet, exchange_gain=gain, initial_state=initial,
                   final_state=_state_from_arrays(stores, uh1, uh2, snow), warmup_days=min(warmup_days, n))


def run_gr4j(records: Records, params: Gr4jParams, warmup_days: int = WARMUP_DAYS) -> np.ndarray:
    """Daily streamflow (mm), same length as the input record."""
    return simulate_gr4j(records, params, warmup_days).q


def score_mask(n_days: int, span: Optional[Tuple[int, int]], warmup_days: int, flow: np.ndarray) -> np.ndarray:
    """
    Days scored during calibration: inside span, after the warm-up, with observed flow.

    The warm-up is only dropped when the span extends beyond it.
    """
    start, stop = span if span is not None else (0, n_days)
    mask = np.zeros(n_days, dtype=bool)
    mask[start:stop] = True
    if stop - start > warmup_days:
        mask[:start + warmup_days] = False
    return mask & np.isfinite(flow)


def daily_rmse(simulated: np.ndarray, observed: np.ndarray) -> float:
    """RMSE with every day counted as one observation."""
    simulated = np.asarray(simulated, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    return rmse(simulated.reshape(-1, 1, 1), observed.reshape(-1, 1, 1))


def sample_parameter_grid(n_points: int, seed: int) -> np.ndarray:
    """Scrambled Halton points scaled onto the 8-dimensional parameter box, shape (n, 8)."""
    sampler = qmc.Halton(d=len(GR4J_PARAM_NAMES), scramble=True, seed=seed)
    unit = sampler.random(n_points)
    lows = [GR4J_BOUNDS[name][0] for name in GR4J_PARAM_NAMES]
    highs = [GR4J_BOUNDS[name][1] for name in GR4J_PARAM_NAMES]
    return qmc.scale(unit, lows, highs)


def params_from_vector(vector: Sequence[float]) -> Gr4jParams:
    return Gr4jParams(**dict(zip(GR4J_PARAM_NAMES, (float(v) for v in vector))))


def _score_chunk(args) -> List[float]:
    series, points, mask, warmup_days = args
    scores = []
    for vector in points:
        params = params_from_vector(vector)
        q = run_gr4j(series, params, warmup_days)
        scores.append(daily_rmse(q[mask], series.flow[mask]))
    return scores


@dataclass(eq=False)
class CalibrationResult:
    best: Gr4jParams
    best_rmse: float
    points: np.ndarray
    rmses: np.ndarray

    def ranking(self) -> np.ndarray:
        """Point indices sorted by RMSE; ties keep enumeration order."""
        return np.argsort(self.rmses, kind="stable")


def calibrate_grid(
    records: Records,
    n_points: int,
    seed: int,
    jobs: int = 1,
    span: Optional[Tuple[int, int]] = None,
    warmup_days: int = WARMUP_DAYS,
) -> CalibrationResult:
    """
    Evaluate ``n_points`` low-discrepancy parameter sets and keep the best.

    Args:
        records: Forcing with observed flow
        n_points: Number of grid points
        seed: Seed of the scrambled sequence
        jobs: Worker processes; results are gathered in enumeration order
        span: (start, stop) day range scored, defaults to the full record
        warmup_days: Leading days of the span left out of the score

    Returns:
        CalibrationResult; ties in RMSE go to the first point enumerated
    """
    series = as_series(records)
    if not series.has_flow:
        raise DataSchemaError("calibration needs observed flow")
    if n_points < 1:
        raise ConfigError("n_points must be at least 1")

    points = sample_parameter_grid(n_points, seed)
    mask = score_mask(len(series), span, warmup_days, series.flow)
    if not mask.any():
        raise DataSchemaError("no observed flow inside the calibration span")

    jobs = max(1, min(jobs, n_points))
    chunks = np.array_split(points, jobs)
    logger.info("calibrating GR4J on %d points with %d worker(s)", n_points, jobs)
    if jobs == 1:
        scores = _score_chunk((series, points, mask, warmup_days))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            parts = executor.map(_score_chunk, [(series, chunk, mask, warmup_days) for chunk in chunks])
            scores = [score for part in parts for score in part]

    rmses = np.asarray(scores)
    best_index = int(np.argmin(rmses))
    logger.info("best grid point %d with RMSE %.4f", best_index, rmses[best_index])
    return CalibrationResult(
        best=params_from_vector(points[best_index]),
        best_rmse=float(rmses[best_index]),
        points=points,
        rmses=rmses,
    )


def synthetic_catchment(
    n_days: int,
    params: Gr4jParams,
    seed: int,
    flow_noise: float = 0.0,
    start: str = "2000-01-01",
) -> HydroSeries:
    """
    Daily forcing with seasonal temperature and PET, intermittent gamma rainfall,
    and streamflow generated by GR4J with the given parameters.

    ``flow_noise`` is the standard deviation of a mean-one lognormal factor
    applied to the simulated flow.
    """
    rng = np.random.default_rng(seed)
    day = np.arange(n_days, dtype=np.float64)
    season = np.sin(2.0 * np.pi * (day - 105.0) / 365.25)

    temp = 8.0 + 12.0 * season + rng.normal(0.0, 2.5, n_days)
    pet = np.clip(2.5 + 2.0 * season + rng.normal(0.0, 0.3, n_days), 0.0, None)
    wet = rng.random(n_days) < 0.35
    precip = np.where(wet, rng.gamma(0.8, 9.0, n_days), 0.0)

    dates = np.datetime64(start, "D") + np.arange(n_days)
    series = HydroSeries(dates=dates, precip=precip, pet=pet, temp=temp, flow=np.full(n_days, np.nan))
    flow = run_gr4j(series, params)
    if flow_noise > 0:
        flow = flow * np.exp(rng.normal(-0.5 * flow_noise ** 2, flow_noise, n_days))
    return series.with_flow(flow)
