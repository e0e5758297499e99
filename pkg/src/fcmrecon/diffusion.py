"""DDIM posterior sampling with an analytic Gaussian-mixture score.

The prior over flattened cloud states is a Gaussian mixture, so the diffused
score at every timestep is available in closed form and the noise predictor
is exact rather than learned. Measurement guidance refines the clean-state
estimate inside the sampling loop before each DDIM update, which keeps the
update's noise direction and the refinement decoupled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import ColoredPointCloud, NoiseSchedule
from .fcm import FCMConfig, FCMStepRecord, fcm_refine
from .renderer import measurement_objective

__all__ = [
    "DivergenceError",
    "GaussianMixturePrior",
    "GuidanceConfig",
    "SamplerConfig",
    "TimestepTrace",
    "oracle_epsilon",
    "predict_x0",
    "ddim_sigma",
    "ddim_step",
    "sample_posterior",
    "write_trace_csv",
]


class DivergenceError(RuntimeError):
    """A sampler state or refinement became non-finite."""


@dataclass(frozen=True)
class GaussianMixturePrior:
    """Isotropic Gaussian mixture over flat states."""

    weights: np.ndarray  # (J,)
    means: np.ndarray    # (J, D)
    stds: np.ndarray     # (J,)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        m = np.array(self.means, dtype=np.float64)
        s = np.array(self.stds, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError(f"means must be (J, D), got {m.shape}")
        j = m.shape[0]
        if w.shape != (j,) or s.shape != (j,):
            raise ValueError("weights, means, stds must agree on component count")
        if not (np.isfinite(w).all() and np.isfinite(m).all() and np.isfinite(s).all()):
            raise ValueError("prior parameters must be finite")
        if not (w > 0.0).all():
            raise ValueError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        if not (s > 0.0).all():
            raise ValueError("stds must be positive")
        for arr in (w, m, s):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @staticmethod
    def single(mean, std) -> "GaussianMixturePrior":
        mean = np.asarray(mean, dtype=np.float64)
        return GaussianMixturePrior(weights=np.array([1.0]), means=mean[None, :], stds=np.array([float(std)]))


def _diffused_components(prior: GaussianMixturePrior, ab: float):
    means_t = math.sqrt(ab) * prior.means
    vars_t = ab * prior.stds**2 + (1.0 - ab)
    return means_t, vars_t


def oracle_epsilon(x_t, t: int, prior: GaussianMixturePrior, schedule: NoiseSchedule) -> np.ndarray:
    """Exact noise prediction -sqrt(1 - abar_t) * score of the diffused mixture."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (prior.dim,):
        raise ValueError(f"state must have shape ({prior.dim},), got {x_t.shape}")
    if t < 1:
        raise ValueError(f"t must be at least 1, got {t}")
    ab = schedule.alpha_bar(t)
    means_t, vars_t = _diffused_components(prior, ab)
    diff = x_t[None, :] - means_t                       # (J, D)
    sq = np.sum(diff * diff, axis=1)                    # (J,)
    log_resp = (
        np.log(prior.weights)
        - 0.5 * sq / vars_t
        - 0.5 * prior.dim * np.log(2.0 * np.pi * vars_t)
    )
    log_resp -= log_resp.max()
    resp = np.exp(log_resp)
    resp /= resp.sum()
    score = -np.sum((resp / vars_t)[:, None] * diff, axis=0)
    return -math.sqrt(1.0 - ab) * score


def predict_x0(x_t, epsilon_hat, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Invert the closed-form forward marginal: clean-state estimate at step t."""
    if t < 1:
        raise ValueError(f"t must be at least 1, got {t}")
    ab = schedule.alpha_bar(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    epsilon_hat = np.asarray(epsilon_hat, dtype=np.float64)
    return (x_t - math.sqrt(1.0 - ab) * epsilon_hat) / math.sqrt(ab)


def ddim_sigma(t: int, schedule: NoiseSchedule, eta: float) -> float:
    """Stochasticity scale: 0 at eta=0; at t=1 the previous level is clean."""
    if not (0.0 <= eta <= 1.0):
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if t < 1:
        raise ValueError(f"t must be at least 1, got {t}")
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t - 1)
    return eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_prev)


def ddim_step(x_t, epsilon_hat, x0_hat, t: int, schedule: NoiseSchedule, eta: float, rng=None) -> np.ndarray:
    """One reverse update to level t-1 from the predicted noise and clean state.

    At t=1 the coefficients collapse so the result is x0_hat exactly. rng is
    consulted only when the stochastic scale is positive.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    epsilon_hat = np.asarray(epsilon_hat, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    ab_prev = schedule.alpha_bar(t - 1)
    sigma = ddim_sigma(t, schedule, eta)
    resid_var = 1.0 - ab_prev - sigma * sigma
    if resid_var < -1e-12:
        raise ValueError(f"negative direction variance {resid_var} at t={t}")
    out = math.sqrt(ab_prev) * x0_hat + math.sqrt(max(resid_var, 0.0)) * epsilon_hat
    if sigma > 0.0:
        if rng is None:
            raise ValueError("eta > 0 requires an rng for the stochastic term")
        out = out + sigma * rng.standard_normal(x_t.shape)
    return out


@dataclass(frozen=True)
class GuidanceConfig:
    """Measurement-guidance policy: none, curvature-matched, or fixed-step."""

    mode: str = "fcm"
    fcm: FCMConfig = field(default_factory=FCMConfig)
    gamma: float = 0.05
    k_inner: int = 4

    def __post_init__(self):
        if self.mode not in ("none", "fcm", "dps"):
            raise ValueError(f"mode must be none|fcm|dps, got {self.mode!r}")
        if not (np.isfinite(self.gamma) and self.gamma >= 0.0):
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if not (isinstance(self.k_inner, (int, np.integer)) and self.k_inner >= 1):
            raise ValueError(f"k_inner must be a positive integer, got {self.k_inner}")


@dataclass(frozen=True)
class SamplerConfig:
    n_points: int
    channels: int
    T: int
    eta: float = 0.0
    seed: int = 0
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)

    def __post_init__(self):
        if not (isinstance(self.n_points, (int, np.integer)) and self.n_points >= 1):
            raise ValueError(f"n_points must be a positive integer, got {self.n_points}")
        if not (isinstance(self.channels, (int, np.integer)) and self.channels >= 1):
            raise ValueError(f"channels must be a positive integer, got {self.channels}")
        if not (isinstance(self.T, (int, np.integer)) and self.T >= 1):
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")


@dataclass(frozen=True)
class TimestepTrace:
    t: int
    residual_before: float
    residual_after: float
    records: tuple


def _dps_refine(x0, loss_fn, grad_fn, gamma, k_inner):
    x = np.asarray(x0, dtype=np.float64)
    raw = []
    for _ in range(k_inner):
        val, g = grad_fn(x)
        g = np.asarray(g, dtype=np.float64)
        raw.append((float(val), float(np.linalg.norm(g))))
        x = x - gamma * g
    final_loss = float(loss_fn(x))
    records = []
    for k, (val, gn) in enumerate(raw):
        after = raw[k + 1][0] if k + 1 < len(raw) else final_loss
        records.append(
            FCMStepRecord(
                delta_k=float("nan"),
                alpha_raw=float("nan"),
                alpha_final=gamma,
                halved=False,
                g_norm=gn,
                loss_before=val,
                loss_after=after,
                forward_evals=1,
                gradient_evals=1,
            )
        )
    return x, records


def sample_posterior(measurements, prior: GaussianMixturePrior, schedule: NoiseSchedule,
                     cfg: SamplerConfig, on_step=None):
    """Run the guided reverse chain from pure noise down to the clean state.

    Draw order is documented and fixed: the initial state first, then one
    stochastic draw per step only when eta > 0. Returns the final cloud and
    a per-timestep trace (residuals are NaN when no measurements are given).
    Raises DivergenceError if any state goes non-finite.
    """
    if cfg.T != schedule.T:
        raise ValueError(f"config T={cfg.T} does not match schedule T={schedule.T}")
    dim = ColoredPointCloud.state_dim(cfg.n_points, cfg.channels)
    if prior.dim != dim:
        raise ValueError(f"prior dimension {prior.dim} does not match state dimension {dim}")
    guided = len(measurements) > 0 and cfg.guidance.mode != "none"
    loss_fn = grad_fn = None
    if len(measurements) > 0:
        loss_fn, grad_fn = measurement_objective(measurements, cfg.n_points, cfg.channels)

    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal(dim)
    trace = []
    for t in range(schedule.T, 0, -1):
        eps_hat = oracle_epsilon(x, t, prior, schedule)
        x0_hat = predict_x0(x, eps_hat, t, schedule)
        records = ()
        if guided and cfg.guidance.mode == "fcm":
            x0_ref, recs = fcm_refine(x0_hat, loss_fn, grad_fn, cfg.guidance.fcm)
            records = tuple(recs)
            res_before = records[0].loss_before if records else float(loss_fn(x0_hat))
            res_after = records[-1].loss_after if records else res_before
        elif guided and cfg.guidance.mode == "dps":
            x0_ref, recs = _dps_refine(x0_hat, loss_fn, grad_fn, cfg.guidance.gamma, cfg.guidance.k_inner)
            records = tuple(recs)
            res_before = records[0].loss_before
            res_after = records[-1].loss_after
        elif loss_fn is not None:
            x0_ref = x0_hat
            res_before = res_after = float(loss_fn(x0_hat))
        else:
            x0_ref = x0_hat
            res_before = res_after = float("nan")
        if not np.isfinite(x0_ref).all():
            raise DivergenceError(f"refined clean-state estimate diverged at t={t}")
        if on_step is not None:
            on_step(t, x0_ref)
        x = ddim_step(x, eps_hat, x0_ref, t, schedule, cfg.eta, rng)
        if not np.isfinite(x).all():
            raise DivergenceError(f"sampler state diverged at t={t}")
        trace.append(TimestepTrace(t=t, residual_before=res_before, residual_after=res_after, records=records))

    return ColoredPointCloud.from_state(x, cfg.n_points, cfg.channels), trace


_RECORD_COLS = (
    "loss_before",
    "loss_after",
    "g_norm",
    "delta_k",
    "alpha_raw",
    "alpha_final",
    "halved",
    "forward_evals",
    "gradient_evals",
)


def write_trace_csv(trace, path) -> None:
    """Flatten a sampling trace: one row per timestep, inner records inline."""
    k_max = max((len(row.records) for row in trace), default=0)
    header = ["t", "residual_before_fcm", "residual_after_fcm"]
    for k in range(k_max):
        header += [f"k{k}_{col}" for col in _RECORD_COLS]
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in trace:
            out = [row.t, repr(row.residual_before), repr(row.residual_after)]
            for k in range(k_max):
                if k < len(row.records):
                    rec = row.records[k]
                    out += [
                        repr(rec.loss_before),
                        repr(rec.loss_after),
                        repr(rec.g_norm),
                        repr(rec.delta_k),
                        repr(rec.alpha_raw),
                        repr(rec.alpha_final),
                        int(rec.halved),
                        rec.forward_evals,
                        rec.gradient_evals,
                    ]
                else:
                    out += [""] * len(_RECORD_COLS)
            writer.writerow(out)
