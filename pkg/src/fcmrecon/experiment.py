"""Drivers shared by the CLI and the experiment scripts."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .cloud import ColoredPointCloud, NoiseSchedule, make_linear_schedule
from .config import ExperimentConfig
from .diffusion import (
    GaussianMixturePrior,
    GuidanceConfig,
    SamplerConfig,
    sample_posterior,
)
from .fileio import read_ply
from .metrics import MetricReport, evaluate_pair
from .renderer import MeasurementLoss, RasterConfig, loss, render_color, render_depth
from .scenes import builtin_scene, make_scene_mixture_prior, orbit_camera

__all__ = [
    "ReconstructionResult",
    "build_scene",
    "build_cameras",
    "build_raster",
    "build_schedule",
    "build_measurements",
    "build_prior",
    "build_sampler_config",
    "run_reconstruction",
    "finite_difference_state_gradient",
]


def build_scene(cfg: ExperimentConfig) -> ColoredPointCloud:
    if cfg.scene.ply is not None:
        return read_ply(cfg.scene.ply)
    return builtin_scene(cfg.scene.builtin, cfg.scene.n_points, cfg.scene.seed)


def build_cameras(cfg: ExperimentConfig) -> list[tuple[Camera, str]]:
    return [
        (
            orbit_camera(c.azimuth_deg, c.elevation_deg, c.distance, c.focal_px, c.resolution),
            c.operator,
        )
        for c in cfg.cameras
    ]


def build_raster(cfg: ExperimentConfig) -> RasterConfig:
    return RasterConfig(
        radius=cfg.raster.radius,
        points_per_pixel=cfg.raster.points_per_pixel,
        background_color=cfg.raster.background_color,
        background_depth=cfg.raster.background_depth,
    )


def build_schedule(cfg: ExperimentConfig) -> NoiseSchedule:
    return make_linear_schedule(cfg.schedule.steps, cfg.schedule.beta_min, cfg.schedule.beta_max)


def build_measurements(gt: ColoredPointCloud, cfg: ExperimentConfig) -> list[MeasurementLoss]:
    """Self-test observations: render the ground-truth scene from each view."""
    raster = build_raster(cfg)
    out = []
    for camera, kind in build_cameras(cfg):
        ref = render_color(gt, camera, raster) if kind == "color" else render_depth(gt, camera, raster)
        out.append(MeasurementLoss(camera=camera, raster=raster, kind=kind, reference=ref))
    return out


def build_prior(gt: ColoredPointCloud, cfg: ExperimentConfig) -> GaussianMixturePrior:
    return make_scene_mixture_prior(
        gt, cfg.prior.distractors, cfg.prior.std, seed=cfg.prior.distractor_seed
    )


def build_sampler_config(cfg: ExperimentConfig, gt: ColoredPointCloud,
                         seed=None, guidance: GuidanceConfig | None = None) -> SamplerConfig:
    g = cfg.sampler.guidance
    if guidance is None:
        guidance = GuidanceConfig(
            mode=g.mode, fcm=g.fcm_config(), gamma=g.gamma, k_inner=g.k_inner
        )
    return SamplerConfig(
        n_points=gt.n,
        channels=gt.channels,
        T=cfg.schedule.steps,
        eta=cfg.sampler.eta,
        seed=cfg.sampler.seed if seed is None else seed,
        guidance=guidance,
    )


@dataclass(frozen=True)
class ReconstructionResult:
    cloud: ColoredPointCloud
    trace: tuple
    final_residual: float
    report: MetricReport


def run_reconstruction(cfg: ExperimentConfig, seed=None, guidance: GuidanceConfig | None = None,
                       on_step=None) -> ReconstructionResult:
    """Self-test reconstruction: observe the configured scene, then invert it."""
    gt = build_scene(cfg)
    measurements = build_measurements(gt, cfg)
    prior = build_prior(gt, cfg)
    schedule = build_schedule(cfg)
    sampler_cfg = build_sampler_config(cfg, gt, seed=seed, guidance=guidance)
    cloud, trace = sample_posterior(measurements, prior, schedule, sampler_cfg, on_step=on_step)
    final_residual = float(np.mean([loss(cloud, m) for m in measurements]))
    report = evaluate_pair(cloud, gt, cfg.metrics.tau)
    return ReconstructionResult(cloud=cloud, trace=tuple(trace), final_residual=final_residual, report=report)


def with_views(cfg: ExperimentConfig, n_views: int) -> ExperimentConfig:
    """Spread n_views copies of the first camera evenly around the orbit."""
    base = cfg.cameras[0]
    cams = tuple(
        dataclasses.replace(base, azimuth_deg=base.azimuth_deg + 360.0 * k / n_views)
        for k in range(n_views)
    )
    return dataclasses.replace(cfg, cameras=cams)


def finite_difference_state_gradient(loss_fn, state: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences over every state component."""
    fd = np.zeros_like(state)
    for i in range(state.size):
        hi = state.copy()
        lo = state.copy()
        hi[i] += step
        lo[i] -= step
        fd[i] = (loss_fn(hi) - loss_fn(lo)) / (2.0 * step)
    return fd
