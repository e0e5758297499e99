"""Curvature-matched adaptive gradient steps with a capped BB ratio.

A forward probe along the current gradient measures curvature at the scale
the step will actually take, giving a Barzilai-Borwein style step size that
is capped at 1/L and backed by a single Armijo halving. Gradient callables
follow the value-and-gradient convention (they return ``(loss, grad)``), so
each gradient evaluation carries one forward pass: a non-skipped step costs
exactly two backward and three forward passes, four forward when halved.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FCMConfig",
    "FCMStepRecord",
    "StationaryGradientError",
    "curvature_probe",
    "bb_step_size",
    "fcm_step",
    "fcm_refine",
    "dps_step",
    "write_records_csv",
]


class StationaryGradientError(ValueError):
    """Signals a gradient under the stationarity floor: skip the update."""


@dataclass(frozen=True)
class FCMConfig:
    delta0: float = 2e-2
    eta_fcm: float = 1e-4
    lipschitz: float = 2.0 / 3.0
    epsilon: float = 1e-12
    k_fcm: int = 4
    grad_floor: float = 1e-10

    def __post_init__(self):
        for name in ("delta0", "eta_fcm", "lipschitz", "epsilon"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if not (isinstance(self.k_fcm, (int, np.integer)) and self.k_fcm >= 1):
            raise ValueError(f"k_fcm must be a positive integer, got {self.k_fcm}")
        if not (np.isfinite(self.grad_floor) and self.grad_floor >= 0.0):
            raise ValueError(f"grad_floor must be non-negative, got {self.grad_floor}")


@dataclass(frozen=True)
class FCMStepRecord:
    delta_k: float
    alpha_raw: float
    alpha_final: float
    halved: bool
    g_norm: float
    loss_before: float
    loss_after: float
    forward_evals: int
    gradient_evals: int
    skipped: bool = False
    diverged: bool = False


def curvature_probe(x, g, grad_fn, delta0, grad_floor=0.0):
    """Probe curvature along g: returns (delta_k, h) with h ~ Hessian @ g.

    delta_k = delta0 * ||x|| / ||g|| scales the probe with the state, so the
    finite difference sees curvature at the step's own magnitude. Costs one
    gradient evaluation. Raises StationaryGradientError when ||g|| is at or
    under grad_floor.
    """
    g_norm = float(np.linalg.norm(g))
    if g_norm <= grad_floor:
        raise StationaryGradientError(f"gradient norm {g_norm:.3e} under floor {grad_floor:.3e}")
    x_norm = float(np.linalg.norm(x))
    # Degenerate origin state: fall back to unit reference scale.
    delta_k = delta0 * (x_norm if x_norm > 0.0 else 1.0) / g_norm
    _, g_probe = grad_fn(x - delta_k * g)
    h = (g - g_probe) / delta_k
    return delta_k, h


def bb_step_size(g, h, epsilon, lipschitz):
    """Raw BB ratio ||g||^2 / (<g, h> + epsilon) and its value capped at 1/L.

    Non-positive curvature makes the raw ratio +inf and the cap binds.
    """
    denom = float(np.dot(g, h)) + epsilon
    g_sq = float(np.dot(g, g))
    if denom <= 0.0:
        alpha_raw = float("inf")
    else:
        alpha_raw = g_sq / denom
    return alpha_raw, min(alpha_raw, 1.0 / lipschitz)


def fcm_step(x, loss_fn, grad_fn, cfg: FCMConfig):
    """One curvature-matched descent step. Returns (x_next, FCMStepRecord).

    grad_fn(x) must return (loss, grad). The Armijo check halves alpha at
    most once and then accepts; a non-finite trial after the halving aborts
    the step (diverged record, x unchanged). A gradient at or below
    cfg.grad_floor skips the update, paying only the detecting evaluation.
    """
    n_fwd = 0
    n_grad = 0

    def eval_loss(p):
        nonlocal n_fwd
        n_fwd += 1
        return float(loss_fn(p))

    def eval_grad(p):
        nonlocal n_fwd, n_grad
        n_fwd += 1
        n_grad += 1
        val, grad = grad_fn(p)
        return float(val), np.asarray(grad, dtype=np.float64)

    loss_before, g = eval_grad(x)
    g_norm = float(np.linalg.norm(g))
    if g_norm <= cfg.grad_floor:
        return x, FCMStepRecord(
            delta_k=float("nan"),
            alpha_raw=float("nan"),
            alpha_final=0.0,
            halved=False,
            g_norm=g_norm,
            loss_before=loss_before,
            loss_after=loss_before,
            forward_evals=n_fwd,
            gradient_evals=n_grad,
            skipped=True,
        )

    delta_k, h = curvature_probe(x, g, eval_grad, cfg.delta0, cfg.grad_floor)
    alpha_raw, alpha = bb_step_size(g, h, cfg.epsilon, cfg.lipschitz)

    trial = eval_loss(x - alpha * g)
    halved = False
    # NaN compares false everywhere, so test acceptance, not failure.
    if not (np.isfinite(trial) and trial <= loss_before - cfg.eta_fcm * alpha * g_norm**2):
        alpha *= 0.5
        halved = True
        trial = eval_loss(x - alpha * g)
        if not np.isfinite(trial):
            return x, FCMStepRecord(
                delta_k=delta_k,
                alpha_raw=alpha_raw,
                alpha_final=alpha,
                halved=True,
                g_norm=g_norm,
                loss_before=loss_before,
                loss_after=loss_before,
                forward_evals=n_fwd,
                gradient_evals=n_grad,
                diverged=True,
            )

    return x - alpha * g, FCMStepRecord(
        delta_k=delta_k,
        alpha_raw=alpha_raw,
        alpha_final=alpha,
        halved=halved,
        g_norm=g_norm,
        loss_before=loss_before,
        loss_after=trial,
        forward_evals=n_fwd,
        gradient_evals=n_grad,
    )


def fcm_refine(x0, loss_fn, grad_fn, cfg: FCMConfig):
    """Up to cfg.k_fcm curvature-matched steps; stops early on skip or abort."""
    x = np.asarray(x0, dtype=np.float64)
    records = []
    for _ in range(cfg.k_fcm):
        x, rec = fcm_step(x, loss_fn, grad_fn, cfg)
        records.append(rec)
        if rec.skipped or rec.diverged:
            break
    return x, records


def dps_step(x, grad_fn, gamma):
    """Plain fixed-step posterior-guidance update x - gamma * grad."""
    if not (np.isfinite(gamma) and gamma >= 0.0):
        raise ValueError(f"gamma must be non-negative and finite, got {gamma}")
    _, g = grad_fn(x)
    return x - gamma * np.asarray(g, dtype=np.float64)


_CSV_FIELDS = (
    "step",
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


def write_records_csv(records, path) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for step, rec in enumerate(records):
            writer.writerow(
                [
                    step,
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
            )
