"""JSON experiment configuration with strict schema validation.

Unknown keys are rejected with the offending path so typos cannot silently
fall back to defaults. parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .fcm import FCMConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "serialize_config"]


class ConfigError(ValueError):
    pass


class _Section:
    """Dict wrapper that tracks consumed keys and rejects leftovers."""

    def __init__(self, data, path):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
        self.data = dict(data)
        self.path = path

    def child(self, key):
        return _Section(self.data.pop(key, {}), f"{self.path}.{key}" if self.path else key)

    def take(self, key, kind, default=None, required=False):
        if key not in self.data:
            if required:
                raise ConfigError(f"{self.path}: missing required key {key!r}")
            return default
        value = self.data.pop(key)
        where = f"{self.path}.{key}" if self.path else key
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}: expected a number, got {value!r}")
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where}: expected an integer, got {value!r}")
            return value
        if kind is str:
            if not isinstance(value, str):
                raise ConfigError(f"{where}: expected a string, got {value!r}")
            return value
        if kind is list:
            if not isinstance(value, list):
                raise ConfigError(f"{where}: expected a list, got {value!r}")
            return value
        raise AssertionError(kind)

    def close(self):
        if self.data:
            extra = ", ".join(sorted(map(repr, self.data)))
            raise ConfigError(f"{self.path or 'config'}: unknown key(s) {extra}")


def _number_list(values, length, path):
    if len(values) != length or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
        raise ConfigError(f"{path}: expected {length} numbers, got {values!r}")
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class SceneSpec:
    builtin: str | None = "two_spheres"
    ply: str | None = None
    n_points: int = 256
    seed: int = 0


@dataclass(frozen=True)
class CameraSpec:
    azimuth_deg: float = 0.0
    elevation_deg: float = 18.0
    distance: float = 1.7
    focal_px: float = 80.0
    resolution: tuple[int, int] = (64, 64)
    operator: str = "color"


@dataclass(frozen=True)
class ScheduleSpec:
    steps: int = 64
    beta_min: float = 1e-3
    beta_max: float = 0.25


@dataclass(frozen=True)
class GuidanceSpec:
    mode: str = "fcm"
    delta0: float = 2e-2
    eta_fcm: float = 1e-4
    lipschitz: float = 2.0 / 3.0
    epsilon: float = 1e-12
    k_fcm: int = 4
    grad_floor: float = 1e-10
    gamma: float = 0.05
    k_inner: int = 4

    def fcm_config(self) -> FCMConfig:
        return FCMConfig(
            delta0=self.delta0,
            eta_fcm=self.eta_fcm,
            lipschitz=self.lipschitz,
            epsilon=self.epsilon,
            k_fcm=self.k_fcm,
            grad_floor=self.grad_floor,
        )


@dataclass(frozen=True)
class SamplerSpec:
    eta: float = 0.0
    seed: int = 0
    snapshot_every: int = 0
    guidance: GuidanceSpec = field(default_factory=GuidanceSpec)


@dataclass(frozen=True)
class RasterSpec:
    radius: float = 0.08
    points_per_pixel: int = 8
    background_color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    background_depth: float = 0.0


@dataclass(frozen=True)
class PriorSpec:
    std: float = 0.05
    distractors: int = 2
    distractor_seed: int = 101


@dataclass(frozen=True)
class MetricsSpec:
    tau: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    cameras: tuple[CameraSpec, ...] = (CameraSpec(),)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    raster: RasterSpec = field(default_factory=RasterSpec)
    prior: PriorSpec = field(default_factory=PriorSpec)
    metrics: MetricsSpec = field(default_factory=MetricsSpec)
    output_dir: str = "out"


def parse_config(doc: dict) -> ExperimentConfig:
    root = _Section(doc, "")

    scene_s = root.child("scene")
    scene = SceneSpec(
        builtin=scene_s.take("builtin", str),
        ply=scene_s.take("ply", str),
        n_points=scene_s.take("n_points", int, 256),
        seed=scene_s.take("seed", int, 0),
    )
    scene_s.close()
    if scene.builtin is None and scene.ply is None:
        scene = SceneSpec(builtin="two_spheres", ply=None, n_points=scene.n_points, seed=scene.seed)
    if scene.builtin is not None and scene.ply is not None:
        raise ConfigError("scene: 'builtin' and 'ply' are mutually exclusive")
    if scene.n_points < 1:
        raise ConfigError("scene.n_points: must be positive")

    cam_list = root.take("cameras", list, None)
    cameras = []
    if cam_list is None:
        cameras = [CameraSpec()]
    else:
        if not cam_list:
            raise ConfigError("cameras: need at least one view")
        for idx, entry in enumerate(cam_list):
            sec = _Section(entry, f"cameras[{idx}]")
            res = sec.take("resolution", list, [64, 64])
            res_t = _number_list(res, 2, f"cameras[{idx}].resolution")
            if any(v != int(v) or v < 1 for v in res_t):
                raise ConfigError(f"cameras[{idx}].resolution: must be positive integers")
            cam = CameraSpec(
                azimuth_deg=sec.take("azimuth_deg", float, 0.0),
                elevation_deg=sec.take("elevation_deg", float, 18.0),
                distance=sec.take("distance", float, 1.7),
                focal_px=sec.take("focal_px", float, 80.0),
                resolution=(int(res_t[0]), int(res_t[1])),
                operator=sec.take("operator", str, "color"),
            )
            sec.close()
            if cam.operator not in ("color", "depth"):
                raise ConfigError(f"cameras[{idx}].operator: must be 'color' or 'depth', got {cam.operator!r}")
            if cam.distance <= 0 or cam.focal_px <= 0:
                raise ConfigError(f"cameras[{idx}]: distance and focal_px must be positive")
            cameras.append(cam)

    sched_s = root.child("schedule")
    schedule = ScheduleSpec(
        steps=sched_s.take("steps", int, 64),
        beta_min=sched_s.take("beta_min", float, 1e-3),
        beta_max=sched_s.take("beta_max", float, 0.25),
    )
    sched_s.close()
    if schedule.steps < 1:
        raise ConfigError("schedule.steps: must be positive")
    if not (0.0 < schedule.beta_min <= schedule.beta_max < 1.0):
        raise ConfigError("schedule: need 0 < beta_min <= beta_max < 1")

    sampler_s = root.child("sampler")
    guidance_s = sampler_s.child("guidance")
    guidance = GuidanceSpec(
        mode=guidance_s.take("mode", str, "fcm"),
        delta0=guidance_s.take("delta0", float, 2e-2),
        eta_fcm=guidance_s.take("eta_fcm", float, 1e-4),
        lipschitz=guidance_s.take("lipschitz", float, 2.0 / 3.0),
        epsilon=guidance_s.take("epsilon", float, 1e-12),
        k_fcm=guidance_s.take("k_fcm", int, 4),
        grad_floor=guidance_s.take("grad_floor", float, 1e-10),
        gamma=guidance_s.take("gamma", float, 0.05),
        k_inner=guidance_s.take("k_inner", int, 4),
    )
    guidance_s.close()
    if guidance.mode not in ("none", "fcm", "dps"):
        raise ConfigError(f"sampler.guidance.mode: must be none|fcm|dps, got {guidance.mode!r}")
    for name in ("delta0", "eta_fcm", "lipschitz", "epsilon"):
        if getattr(guidance, name) <= 0:
            raise ConfigError(f"sampler.guidance.{name}: must be positive")
    if guidance.k_fcm < 1 or guidance.k_inner < 1:
        raise ConfigError("sampler.guidance: k_fcm and k_inner must be positive")
    if guidance.gamma < 0:
        raise ConfigError("sampler.guidance.gamma: must be non-negative")
    sampler = SamplerSpec(
        eta=sampler_s.take("eta", float, 0.0),
        seed=sampler_s.take("seed", int, 0),
        snapshot_every=sampler_s.take("snapshot_every", int, 0),
        guidance=guidance,
    )
    sampler_s.close()
    if not (0.0 <= sampler.eta <= 1.0):
        raise ConfigError(f"sampler.eta: must lie in [0, 1], got {sampler.eta}")
    if sampler.snapshot_every < 0:
        raise ConfigError("sampler.snapshot_every: must be non-negative")

    raster_s = root.child("raster")
    bg = raster_s.take("background_color", list, [1.0, 1.0, 1.0])
    raster = RasterSpec(
        radius=raster_s.take("radius", float, 0.08),
        points_per_pixel=raster_s.take("points_per_pixel", int, 8),
        background_color=_number_list(bg, 3, "raster.background_color"),
        background_depth=raster_s.take("background_depth", float, 0.0),
    )
    raster_s.close()
    if raster.radius <= 0:
        raise ConfigError("raster.radius: must be positive")
    if raster.points_per_pixel < 1:
        raise ConfigError("raster.points_per_pixel: must be positive")

    prior_s = root.child("prior")
    prior = PriorSpec(
        std=prior_s.take("std", float, 0.05),
        distractors=prior_s.take("distractors", int, 2),
        distractor_seed=prior_s.take("distractor_seed", int, 101),
    )
    prior_s.close()
    if prior.std <= 0:
        raise ConfigError("prior.std: must be positive")
    if prior.distractors < 0:
        raise ConfigError("prior.distractors: must be non-negative")

    metrics_s = root.child("metrics")
    metrics = MetricsSpec(tau=metrics_s.take("tau", float, 0.05))
    metrics_s.close()
    if metrics.tau <= 0:
        raise ConfigError("metrics.tau: must be positive")

    output_dir = root.take("output_dir", str, "out")
    root.close()
    return ExperimentConfig(
        scene=scene,
        cameras=tuple(cameras),
        schedule=schedule,
        sampler=sampler,
        raster=raster,
        prior=prior,
        metrics=metrics,
        output_dir=output_dir,
    )


def serialize_config(cfg: ExperimentConfig) -> str:
    scene = {"n_points": cfg.scene.n_points, "seed": cfg.scene.seed}
    if cfg.scene.builtin is not None:
        scene["builtin"] = cfg.scene.builtin
    if cfg.scene.ply is not None:
        scene["ply"] = cfg.scene.ply
    doc = {
        "scene": scene,
        "cameras": [
            {
                "azimuth_deg": c.azimuth_deg,
                "elevation_deg": c.elevation_deg,
                "distance": c.distance,
                "focal_px": c.focal_px,
                "resolution": list(c.resolution),
                "operator": c.operator,
            }
            for c in cfg.cameras
        ],
        "schedule": {
            "steps": cfg.schedule.steps,
            "beta_min": cfg.schedule.beta_min,
            "beta_max": cfg.schedule.beta_max,
        },
        "sampler": {
            "eta": cfg.sampler.eta,
            "seed": cfg.sampler.seed,
            "snapshot_every": cfg.sampler.snapshot_every,
            "guidance": {
                "mode": cfg.sampler.guidance.mode,
                "delta0": cfg.sampler.guidance.delta0,
                "eta_fcm": cfg.sampler.guidance.eta_fcm,
                "lipschitz": cfg.sampler.guidance.lipschitz,
                "epsilon": cfg.sampler.guidance.epsilon,
                "k_fcm": cfg.sampler.guidance.k_fcm,
                "grad_floor": cfg.sampler.guidance.grad_floor,
                "gamma": cfg.sampler.guidance.gamma,
                "k_inner": cfg.sampler.guidance.k_inner,
            },
        },
        "raster": {
            "radius": cfg.raster.radius,
            "points_per_pixel": cfg.raster.points_per_pixel,
            "background_color": list(cfg.raster.background_color),
            "background_depth": cfg.raster.background_depth,
        },
        "prior": {
            "std": cfg.prior.std,
            "distractors": cfg.prior.distractors,
            "distractor_seed": cfg.prior.distractor_seed,
        },
        "metrics": {"tau": cfg.metrics.tau},
        "output_dir": cfg.output_dir,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc)
