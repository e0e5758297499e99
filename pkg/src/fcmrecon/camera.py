"""Pinhole cameras and world-to-pixel projection.

Camera frame: x right, y down, z forward (view depth). Pixel (i, j) has its
center at (i + 0.5, j + 0.5) with i the column along u and j the row along v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Camera", "look_at"]


@dataclass(frozen=True)
class Camera:
    rotation: np.ndarray          # (3, 3) world -> camera
    translation: np.ndarray       # (3,)
    focal: tuple[float, float]    # (fx, fy) in pixels
    principal_point: tuple[float, float]
    resolution: tuple[int, int]   # (W, H)

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64)
        tr = np.array(self.translation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be (3, 3), got {rot.shape}")
        if tr.shape != (3,):
            raise ValueError(f"translation must be (3,), got {tr.shape}")
        if not (np.isfinite(rot).all() and np.isfinite(tr).all()):
            raise ValueError("camera pose must be finite")
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal")
        fx, fy = (float(v) for v in self.focal)
        if not (fx > 0 and fy > 0):
            raise ValueError("focal lengths must be positive")
        w, h = self.resolution
        if not (isinstance(w, (int, np.integer)) and isinstance(h, (int, np.integer)) and w >= 1 and h >= 1):
            raise ValueError(f"resolution must be positive integers, got {self.resolution}")
        rot.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)
        object.__setattr__(self, "focal", (fx, fy))
        object.__setattr__(self, "principal_point", tuple(float(v) for v in self.principal_point))
        object.__setattr__(self, "resolution", (int(w), int(h)))

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]

    def ndc_scale(self) -> float:
        """NDC units per pixel: the shorter image side spans [-1, 1]."""
        return 2.0 / min(self.resolution)

    def to_camera_frame(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def project(self, points: np.ndarray):
        """Project world points to pixel coordinates.

        Returns (u, v, depth). depth is the camera-frame z; entries with
        depth <= 0 get NaN pixel coordinates and must be treated as invisible.
        """
        cam = self.to_camera_frame(points)
        depth = cam[:, 2]
        fx, fy = self.focal
        cx, cy = self.principal_point
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(depth > 0.0, fx * cam[:, 0] / depth + cx, np.nan)
            v = np.where(depth > 0.0, fy * cam[:, 1] / depth + cy, np.nan)
        return u, v, depth


def look_at(eye, target, focal_px: float, resolution: tuple[int, int], up=(0.0, 0.0, 1.0)) -> Camera:
    """Camera at `eye` looking toward `target`, z-up world by default."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    forward = target - eye
    nf = np.linalg.norm(forward)
    if nf < 1e-12:
        raise ValueError("eye and target coincide")
    forward = forward / nf
    right = np.cross(forward, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        raise ValueError("view direction is parallel to up")
    right = right / nr
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    w, h = resolution
    return Camera(
        rotation=rot,
        translation=-rot @ eye,
        focal=(focal_px, focal_px),
        principal_point=(w / 2.0, h / 2.0),
        resolution=(w, h),
    )
