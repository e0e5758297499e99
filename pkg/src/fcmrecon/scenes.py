"""Synthetic scenes, camera rigs, and prior construction for experiments.

World coordinates are roughly normalized to [-0.5, 0.5]^3 with z up. Cameras
orbit the origin.
"""

from __future__ import annotations

import numpy as np

from .camera import Camera, look_at
from .cloud import ColoredPointCloud
from .diffusion import GaussianMixturePrior
from .renderer import RasterConfig, rasterize

__all__ = [
    "BUILTIN_SCENES",
    "axis_cube_8",
    "sphere_shell",
    "two_spheres",
    "random_blob",
    "builtin_scene",
    "ring_cameras",
    "perturbed_clone",
    "make_scene_mixture_prior",
    "boundary_safe_scene",
]


def axis_cube_8() -> ColoredPointCloud:
    """Eight splats on cube corners, colors binary-coded from corner signs."""
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    return ColoredPointCloud(positions=0.25 * signs, features=(signs + 1.0) / 2.0)


def sphere_shell(n: int, seed: int = 0, radius: float = 0.3, center=(0.0, 0.0, 0.0)) -> ColoredPointCloud:
    """Points on a sphere shell, colored by height band."""
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pos = radius * dirs + np.asarray(center, dtype=np.float64)
    z01 = (dirs[:, 2] + 1.0) / 2.0
    feat = np.stack([0.85 * z01 + 0.1, 0.25 + 0.4 * (1.0 - z01), 0.9 - 0.7 * z01], axis=1)
    return ColoredPointCloud(positions=pos, features=feat)


def two_spheres(n: int = 256, seed: int = 0) -> ColoredPointCloud:
    """Two offset shells with warm and cool color families."""
    n_a = n // 2
    n_b = n - n_a
    rng = np.random.default_rng(seed)

    def shell(count, radius, center, base, span):
        dirs = rng.standard_normal((count, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        mix = (dirs[:, 2:3] + 1.0) / 2.0
        return radius * dirs + np.asarray(center), np.asarray(base) + mix * np.asarray(span)

    pos_a, col_a = shell(n_a, 0.20, (-0.16, 0.0, 0.02), (0.85, 0.25, 0.12), (0.1, 0.35, 0.08))
    pos_b, col_b = shell(n_b, 0.15, (0.19, 0.04, -0.04), (0.10, 0.35, 0.80), (0.1, 0.3, 0.15))
    return ColoredPointCloud(
        positions=np.concatenate([pos_a, pos_b]),
        features=np.clip(np.concatenate([col_a, col_b]), 0.0, 1.0),
    )


def random_blob(n: int = 256, seed: int = 0) -> ColoredPointCloud:
    rng = np.random.default_rng(seed)
    pos = np.clip(0.16 * rng.standard_normal((n, 3)), -0.45, 0.45)
    return ColoredPointCloud(positions=pos, features=rng.uniform(0.05, 0.95, (n, 3)))


BUILTIN_SCENES = ("axis_cube_8", "two_spheres", "random_blob", "sphere")


def builtin_scene(name: str, n_points: int = 256, seed: int = 0) -> ColoredPointCloud:
    if name == "axis_cube_8":
        return axis_cube_8()
    if name == "two_spheres":
        return two_spheres(n_points, seed)
    if name == "random_blob":
        return random_blob(n_points, seed)
    if name == "sphere":
        return sphere_shell(n_points, seed)
    raise ValueError(f"unknown scene {name!r}; choose from {BUILTIN_SCENES}")


def orbit_camera(azimuth_deg: float, elevation_deg: float, distance: float,
                 focal_px: float, resolution, target=(0.0, 0.0, 0.0)) -> Camera:
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    target = np.asarray(target, dtype=np.float64)
    eye = target + distance * np.array(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
    )
    return look_at(eye, target, focal_px=focal_px, resolution=tuple(resolution))


def ring_cameras(n_views: int, distance: float = 1.7, elevation_deg: float = 18.0,
                 focal_px: float = 80.0, resolution=(64, 64)) -> list[Camera]:
    """Evenly spaced orbit views around the origin."""
    return [
        orbit_camera(360.0 * k / n_views, elevation_deg, distance, focal_px, resolution)
        for k in range(n_views)
    ]


def perturbed_clone(cloud: ColoredPointCloud, seed: int, rotate_deg: float = 140.0,
                    offset_scale: float = 0.12) -> ColoredPointCloud:
    """Distractor variant: rotated about z, shifted, colors channel-rolled."""
    rng = np.random.default_rng(seed)
    ang = np.deg2rad(rotate_deg + rng.uniform(-20.0, 20.0))
    c, s = np.cos(ang), np.sin(ang)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    offset = rng.uniform(-offset_scale, offset_scale, 3)
    return ColoredPointCloud(
        positions=cloud.positions @ rot.T + offset,
        features=np.roll(cloud.features, 1, axis=1),
    )


def make_scene_mixture_prior(cloud: ColoredPointCloud, n_distractors: int, std: float,
                             seed: int = 101) -> GaussianMixturePrior:
    """Mixture prior whose first mode is the true scene state."""
    means = [cloud.state()]
    for k in range(n_distractors):
        means.append(perturbed_clone(cloud, seed + k).state())
    j = len(means)
    return GaussianMixturePrior(
        weights=np.full(j, 1.0 / j),
        means=np.stack(means),
        stds=np.full(j, float(std)),
    )


def _safety_violations(cloud, camera, raster, band: float, depth_gap: float):
    """Point indices breaking footprint-boundary or depth-tie safety."""
    u, v, depth = camera.project(cloud.positions)
    bad = set(np.flatnonzero(~(depth > 0.1)).tolist())

    w, h = camera.resolution
    s = camera.ndc_scale()
    r = raster.radius
    r_pix = r / s
    for p in range(cloud.n):
        if p in bad or not np.isfinite(u[p]):
            continue
        i_lo = int(np.floor(u[p] - 0.5 - r_pix)) - 1
        j_lo = int(np.floor(v[p] - 0.5 - r_pix)) - 1
        span = int(np.ceil(2 * r_pix)) + 3
        ii = np.clip(np.arange(i_lo, i_lo + span), 0, w - 1)
        jj = np.clip(np.arange(j_lo, j_lo + span), 0, h - 1)
        du = u[p] - (ii + 0.5)
        dv = v[p] - (jj + 0.5)
        rho = s * np.sqrt(du[:, None] ** 2 + dv[None, :] ** 2)
        if np.any(np.abs(rho - r) < band * r):
            bad.add(p)

    # Depth ordering and the K-cut must be stable: check gaps between
    # consecutive fragments one rank past the kept limit.
    probe = RasterConfig(
        radius=raster.radius,
        points_per_pixel=min(cloud.n, raster.points_per_pixel + 1),
        background_color=raster.background_color,
        background_depth=raster.background_depth,
    )
    fb = rasterize(cloud, camera, probe)
    counts = fb.counts.ravel()
    pidx = fb.point_index.reshape(-1, probe.points_per_pixel)
    d = fb.depth.reshape(-1, probe.points_per_pixel)
    for pix in np.flatnonzero(counts > 1):
        c = counts[pix]
        gaps = np.diff(d[pix, :c])
        for k in np.flatnonzero(gaps < depth_gap):
            bad.add(int(pidx[pix, k + 1]))
    return bad


def boundary_safe_scene(n_points: int, camera: Camera, raster: RasterConfig, seed: int,
                        band: float = 0.05, depth_gap: float = 1e-3,
                        max_rounds: int = 200) -> ColoredPointCloud:
    """Random scene with every splat clear of coverage and ordering boundaries.

    Finite differences on such scenes never flip a fragment selection, so the
    frozen-selection analytic gradient is comparable. Offending points are
    resampled until the safety predicate holds.
    """
    rng = np.random.default_rng(seed)

    def draw(count):
        return 0.7 * (rng.random((count, 3)) - 0.5)

    positions = draw(n_points)
    features = rng.uniform(0.05, 0.95, (n_points, 3))
    for _ in range(max_rounds):
        cloud = ColoredPointCloud(positions=positions, features=features)
        bad = _safety_violations(cloud, camera, raster, band, depth_gap)
        if not bad:
            return cloud
        idx = sorted(bad)
        positions = positions.copy()
        positions[idx] = draw(len(idx))
    raise RuntimeError(f"could not build a boundary-safe scene in {max_rounds} rounds")
