"""
Generalized Vicsek model driven by an Archimedean-spiral rotation schedule.

Agents move on a periodic square centred at the origin. At every step each
agent takes the mean of the rotated headings of its neighbours (itself
included, minimum-image distance <= r_d), adds angular noise, and moves with
constant speed along its rotated current heading.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.spatial import cKDTree

from rnnrecon.app.exceptions import ConfigError, ShapeMismatchError
from rnnrecon.app.schemas.config import SwarmConfig


logger = logging.getLogger(__name__)


def wrap_angle(theta: np.ndarray) -> np.ndarray:
    """Map angles into [-pi, pi)."""
    return (np.asarray(theta) + np.pi) % (2.0 * np.pi) - np.pi


def wrap_position(x: np.ndarray, side: float) -> np.ndarray:
    """Map positions into [-side/2, side/2)."""
    half = 0.5 * side
    return (np.asarray(x) + half) % side - half


def rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True, eq=False)
class SwarmFrame:
    positions: np.ndarray
    orientations: np.ndarray


@dataclass(frozen=True, eq=False)
class RotationSchedule:
    """Per-step rotation matrices (T, 2, 2), shared by all agents."""
    matrices: np.ndarray
    gamma: np.ndarray

    def __len__(self) -> int:
        return self.matrices.shape[0]

    @classmethod
    def identity(cls, steps: int) -> "RotationSchedule":
        return cls(np.tile(np.eye(2), (steps, 1, 1)), np.zeros(steps))


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """
    Unwrapped agent trajectories (N, T, 2).

    ``frames`` holds the wrapped simulation frames when requested.
    """
    trajectories: np.ndarray
    frames: Optional[list] = None

    @property
    def n_agents(self) -> int:
        return self.trajectories.shape[0]


def spiral_centroid(steps: int) -> np.ndarray:
    """Points c(t), t = 1..T, of the spiral with radius growing from 1 to 4."""
    t = np.arange(1, steps + 1, dtype=np.float64)
    radius = 1.0 + 3.0 * (t - 1.0) / (steps - 1.0)
    kappa = 3.0 * np.pi * (t - 1.0) / steps
    return np.stack([radius * np.cos(kappa), radius * np.sin(kappa)], axis=1)


def spiral_schedule(steps: int) -> RotationSchedule:
    """
    Rotation by -gamma(t), gamma(t) the direction of the spiral chord c(t-1) -> c(t).

    gamma(1) is undefined by the chord construction and copies gamma(2).
    """
    if steps < 2:
        raise ConfigError("a spiral schedule needs at least 2 steps")
    c = spiral_centroid(steps)
    chord = np.diff(c, axis=0)
    gamma = np.empty(steps)
    gamma[1:] = np.arctan2(chord[:, 1], chord[:, 0])
    gamma[0] = gamma[1]
    matrices = np.stack([rotation(-g) for g in gamma])
    return RotationSchedule(matrices=matrices, gamma=gamma)


def draw_angle_noise(rng: np.random.Generator, cfg: SwarmConfig) -> np.ndarray:
    if cfg.noise_kind == "gaussian":
        return rng.normal(0.0, cfg.angle_noise, size=cfg.n_agents)
    half = 0.5 * cfg.angle_noise
    return rng.uniform(-half, half, size=cfg.n_agents)


def neighbourhoods(positions: np.ndarray, cfg: SwarmConfig) -> list:
    """Indices of agents within r_d of each agent under periodic minimum image (self included)."""
    side = cfg.domain_side
    shifted = np.mod(np.asarray(positions) + 0.5 * side, side)
    # cKDTree requires points strictly inside [0, boxsize)
    shifted[shifted >= side] = 0.0
    tree = cKDTree(shifted, boxsize=[side, side])
    return tree.query_ball_point(shifted, r=cfg.radius)


def _displacement(R: np.ndarray, theta: np.ndarray, cfg: SwarmConfig) -> np.ndarray:
    headings = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return cfg.speed * (headings @ R.T) * cfg.delta


def step_swarm(frame: SwarmFrame, R: np.ndarray, cfg: SwarmConfig, noise_draws: np.ndarray) -> SwarmFrame:
    """
    Advance one step.

    Args:
        frame: Current wrapped frame
        R: 2x2 rotation applied to every agent at this step
        cfg: Simulation controls
        noise_draws: Angular noise, one value per agent

    Returns:
        Next wrapped frame. An agent whose mean rotated heading is exactly
        zero keeps its orientation.
    """
    theta = np.asarray(frame.orientations, dtype=np.float64)
    rotated = np.stack([np.cos(theta), np.sin(theta)], axis=1) @ R.T

    mean_heading = np.empty_like(rotated)
    for n, members in enumerate(neighbourhoods(frame.positions, cfg)):
        mean_heading[n] = rotated[members].mean(axis=0)

    degenerate = (mean_heading[:, 0] == 0.0) & (mean_heading[:, 1] == 0.0)
    new_theta = np.arctan2(mean_heading[:, 1], mean_heading[:, 0]) + noise_draws
    new_theta = np.where(degenerate, theta, wrap_angle(new_theta))

    new_positions = wrap_position(frame.positions + _displacement(R, theta, cfg), cfg.domain_side)
    return SwarmFrame(positions=new_positions, orientations=new_theta)


def initial_frame(cfg: SwarmConfig, rng: np.random.Generator) -> SwarmFrame:
    half = 0.5 * cfg.domain_side
    positions = rng.uniform(-half, half, size=(cfg.n_agents, 2))
    orientations = rng.uniform(-np.pi, np.pi, size=cfg.n_agents)
    return SwarmFrame(positions=positions, orientations=orientations)


def simulate_swarm(cfg: SwarmConfig, schedule: RotationSchedule, keep_frames: bool = False,
                   frame0: Optional[SwarmFrame] = None) -> TrajectorySet:
    """
    Simulate ``cfg.steps`` points per agent.

    Initial positions and orientations come from ``cfg.rng_seed`` unless a
    starting frame is given. Step t (1-based) uses ``schedule.matrices[t - 1]``.
    """
    if len(schedule) < cfg.steps:
        raise ShapeMismatchError(f"schedule has {len(schedule)} matrices, simulation needs {cfg.steps}")
    rng = np.random.default_rng(cfg.rng_seed)
    frame = initial_frame(cfg, rng) if frame0 is None else frame0

    unwrapped = np.empty((cfg.n_agents, cfg.steps, 2))
    unwrapped[:, 0] = frame.positions
    frames = [frame] if keep_frames else None

    for t in range(1, cfg.steps):
        R = schedule.matrices[t - 1]
        unwrapped[:, t] = unwrapped[:, t - 1] + _displacement(R, frame.orientations, cfg)
        frame = step_swarm(frame, R, cfg, draw_angle_noise(rng, cfg))
        if keep_frames:
            frames.append(frame)

    logger.info("simulated %d agents for %d steps", cfg.n_agents, cfg.steps)
    return TrajectorySet(trajectories=unwrapped, frames=frames)


def add_noise(traj: TrajectorySet, sigma: float, seed: Union[int, np.random.SeedSequence]) -> TrajectorySet:
    """Copy of the trajectories with i.i.d. N(0, sigma^2) added to every coordinate."""
    if sigma < 0:
        raise ConfigError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=traj.trajectories.shape) if sigma > 0 else 0.0
    return TrajectorySet(trajectories=traj.trajectories + noise)
