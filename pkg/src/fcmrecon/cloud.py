"""Colored point clouds, noise schedules, and the closed-form forward diffusion.

The diffusion state is the flattened concatenation of point positions and
per-point features, so geometry and color receive noise jointly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ColoredPointCloud",
    "NoiseSchedule",
    "make_linear_schedule",
    "q_sample",
    "q_sample_state",
]


def _as_locked(values, name, dtype=np.float64):
    arr = np.array(values, dtype=dtype)
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ColoredPointCloud:
    """N points with 3D positions and a per-point feature (color) vector.

    Arrays are copied and write-locked on construction; treat instances as
    immutable values.
    """

    positions: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        pos = _as_locked(self.positions, "positions")
        feat = _as_locked(self.features, "features")
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must have shape (N, 3), got {pos.shape}")
        if feat.ndim != 2:
            raise ValueError(f"features must have shape (N, C), got {feat.shape}")
        if pos.shape[0] != feat.shape[0]:
            raise ValueError(
                f"point count mismatch: {pos.shape[0]} positions, {feat.shape[0]} feature rows"
            )
        if pos.shape[0] < 1:
            raise ValueError("cloud needs at least one point")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feat)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    def state(self) -> np.ndarray:
        """Flatten to the 1-D optimization/diffusion state [positions, features]."""
        return np.concatenate([self.positions.ravel(), self.features.ravel()])

    @staticmethod
    def state_dim(n: int, channels: int) -> int:
        return n * (3 + channels)

    @staticmethod
    def from_state(state: np.ndarray, n: int, channels: int) -> "ColoredPointCloud":
        state = np.asarray(state, dtype=np.float64)
        want = ColoredPointCloud.state_dim(n, channels)
        if state.shape != (want,):
            raise ValueError(f"state must have shape ({want},), got {state.shape}")
        return ColoredPointCloud(
            positions=state[: 3 * n].reshape(n, 3),
            features=state[3 * n :].reshape(n, channels),
        )


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise rates beta_t and their cumulative signal products.

    alpha_bars[t-1] = prod_{s<=t} (1 - beta_s) for t = 1..T, with the t = 0
    boundary pinned to 1 so the clean state is reachable.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        betas = _as_locked(self.betas, "betas")
        bars = _as_locked(self.alpha_bars, "alpha_bars")
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if bars.shape != betas.shape:
            raise ValueError("alpha_bars must match betas in shape")
        if not ((betas > 0.0) & (betas < 1.0)).all():
            raise ValueError("betas must lie strictly inside (0, 1)")
        if not ((bars > 0.0) & (bars < 1.0)).all():
            raise ValueError("alpha_bars must lie strictly inside (0, 1)")
        if not (np.diff(bars) < 0.0).all():
            raise ValueError("alpha_bars must be strictly decreasing")
        prev = np.concatenate([[1.0], bars[:-1]])
        if np.max(np.abs(bars - prev * (1.0 - betas))) > 1e-12:
            raise ValueError("alpha_bars inconsistent with betas")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", bars)

    @property
    def T(self) -> int:
        return self.betas.size

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction at step t, with alpha_bar(0) = 1."""
        if not isinstance(t, (int, np.integer)):
            raise TypeError(f"t must be an integer, got {type(t).__name__}")
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise ValueError(f"t must lie in [0, {self.T}], got {t}")
        return float(self.alpha_bars[t - 1])


def make_linear_schedule(T: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    """Linear beta ramp from beta_min to beta_max over T steps."""
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not (np.isfinite(beta_min) and np.isfinite(beta_max)):
        raise ValueError("beta range must be finite")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    betas = np.linspace(beta_min, beta_max, T)
    return NoiseSchedule(betas=betas, alpha_bars=np.cumprod(1.0 - betas))


def q_sample_state(x0: np.ndarray, t: int, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Forward-diffuse a flat state: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {noise.shape} does not match state shape {x0.shape}")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def q_sample(cloud: ColoredPointCloud, t: int, noise: np.ndarray, schedule: NoiseSchedule) -> ColoredPointCloud:
    """Forward-diffuse a cloud; noise is a flat vector over [positions, features]."""
    noisy = q_sample_state(cloud.state(), t, noise, schedule)
    return ColoredPointCloud.from_state(noisy, cloud.n, cloud.channels)
