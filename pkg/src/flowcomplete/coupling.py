"""Couplings between the initial cloud and the completion target.

The initial cloud is the scan tiled several times with local Gaussian
jitter. Each initial point is paired with its nearest neighbor in the
target cloud, which yields a straight path and a constant per-point
velocity for the regression target. Also provides the time and
condition draws used when assembling training batches.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import as_cloud, nearest_neighbor_map, tile_cloud


@dataclass(frozen=True)
class NoiseConfig:
    """Per-axis Gaussian jitter applied to the tiled scan.

    scale is the standard deviation in meters per axis; 0 disables the
    jitter entirely so the initial cloud equals the tiled scan.
    """
    scale: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("noise scale must be >= 0")


@dataclass(frozen=True)
class FlowSample:
    """One training sample of the interpolation path at time t.

    x_t is the interpolated cloud, v_target the per-point velocity the
    field should regress. x0/x1 are the path endpoints, kept so the
    chamfer term of the objective can be evaluated without recomputing
    the coupling. condition is the scan cloud or None when dropped.
    """
    t: float
    x_t: np.ndarray
    v_target: np.ndarray
    condition: np.ndarray | None
    x0: np.ndarray
    x1: np.ndarray


@dataclass(frozen=True)
class ConditionDraw:
    """Outcome of one Bernoulli condition draw.

    outcome is the scan itself when kept, or None for the null token.
    """
    keep_probability: float
    outcome: np.ndarray | None

    @property
    def is_null(self) -> bool:
        return self.outcome is None


def noisy_initial_cloud(scan, copies: int, noise: NoiseConfig) -> np.ndarray:
    """Tile the scan `copies` times and add independent Gaussian offsets.

    Deterministic given noise.seed; output has copies * len(scan) points.

    Raises:
        ValueError: on an empty scan.
    """
    pts = as_cloud(scan)
    if len(pts) == 0:
        raise ValueError("empty scan")
    tiled = tile_cloud(pts, copies)
    if noise.scale == 0:
        return tiled
    rng = np.random.default_rng(noise.seed)
    return tiled + rng.normal(scale=noise.scale, size=tiled.shape)


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time must be in [0, 1], got {t}")
    return t


def straight_flow(x0, x1, t: float):
    """Point-level straight path: position t*x1 + (1-t)*x0, velocity x1 - x0.

    Works elementwise on arrays of matching shape.
    """
    t = _check_time(t)
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    return t * x1 + (1.0 - t) * x0, x1 - x0


def nearest_neighbor_flow(x0, x1, t: float, condition=None) -> FlowSample:
    """Straight flow from each x0 point toward its nearest neighbor in x1.

    The correspondence is recomputed from the inputs on every call (x0 is
    re-jittered per training iteration, so caching would go stale). The
    velocity target is independent of t.
    """
    t = _check_time(t)
    src = as_cloud(x0)
    tgt = as_cloud(x1)
    if len(src) == 0:
        raise ValueError("empty initial cloud")
    matched = tgt[nearest_neighbor_map(src, tgt)]
    x_t, v = straight_flow(src, matched, t)
    return FlowSample(t=t, x_t=x_t, v_target=v, condition=condition, x0=src, x1=tgt)


def sample_time(rng: np.random.Generator) -> float:
    """One uniform draw on [0, 1] from the caller's stream."""
    return float(rng.uniform(0.0, 1.0))


def draw_condition(scan, p_null: float, rng: np.random.Generator) -> ConditionDraw:
    """Drop the scan condition with probability p_null, else keep it."""
    if not 0.0 <= p_null <= 1.0:
        raise ValueError("p_null must be in [0, 1]")
    keep = float(rng.uniform()) >= p_null
    return ConditionDraw(
        keep_probability=1.0 - p_null,
        outcome=as_cloud(scan) if keep else None,
    )
