"""Set-to-set reconstruction metrics over point positions."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cloud import ColoredPointCloud

__all__ = ["EMD_MAX_POINTS", "MetricReport", "chamfer_l1", "emd", "fscore", "evaluate_pair"]

EMD_MAX_POINTS = 512


def _positions(cloud) -> np.ndarray:
    if isinstance(cloud, ColoredPointCloud):
        return cloud.positions
    arr = np.asarray(cloud, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected (N, 3) positions, got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("need at least one point")
    if not np.isfinite(arr).all():
        raise ValueError("positions must be finite")
    return arr


def chamfer_l1(a, b) -> float:
    """Symmetric mean nearest-neighbor L1 distance, halved."""
    pa, pb = _positions(a), _positions(b)
    d = np.abs(pa[:, None, :] - pb[None, :, :]).sum(axis=2)
    return 0.5 * (float(d.min(axis=1).mean()) + float(d.min(axis=0).mean()))


def emd(a, b) -> float:
    """Exact assignment cost: min over bijections of the mean L2 match distance."""
    pa, pb = _positions(a), _positions(b)
    if pa.shape[0] != pb.shape[0]:
        raise ValueError(f"point counts differ: {pa.shape[0]} vs {pb.shape[0]}")
    if pa.shape[0] > EMD_MAX_POINTS:
        raise ValueError(
            f"{pa.shape[0]} points exceeds the exact-assignment limit {EMD_MAX_POINTS}; "
            "subsample both clouds first"
        )
    cost = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2))
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def fscore(a, b, tau: float) -> float:
    """Harmonic mean of coverage fractions at distance tau; 0 when both sides miss."""
    if not (np.isfinite(tau) and tau > 0.0):
        raise ValueError(f"tau must be positive, got {tau}")
    pa, pb = _positions(a), _positions(b)
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2))
    precision = float((d.min(axis=1) <= tau).mean())
    recall = float((d.min(axis=0) <= tau).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class MetricReport:
    chamfer_l1: float
    emd: float
    fscore: float
    tau: float

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["chamfer_l1", "emd", "fscore", "tau"])
            writer.writerow([repr(self.chamfer_l1), repr(self.emd), repr(self.fscore), repr(self.tau)])


def evaluate_pair(pred, ref, tau: float) -> MetricReport:
    return MetricReport(
        chamfer_l1=chamfer_l1(pred, ref),
        emd=emd(pred, ref),
        fscore=fscore(pred, ref, tau),
        tau=float(tau),
    )
