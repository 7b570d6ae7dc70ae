"""Pinhole camera model.

Convention: x right, y down, z forward (points with z > 0 are in front of
the camera). ``rotation`` maps world to camera coordinates; the world-space
camera center is ``-R^T t``. Pixel (ix, iy) samples the ray through its
center (ix + 0.5, iy + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DataError


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform plus pinhole intrinsics."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise DataError("camera pose contains non-finite values")
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-6:
            raise DataError("camera rotation is not orthonormal within 1e-6")
        if self.fx <= 0 or self.fy <= 0:
            raise DataError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise DataError("image dimensions must be positive")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Transform world points (..., 3) into camera coordinates."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def project(self, cam_points: np.ndarray) -> np.ndarray:
        """Perspective-project camera-space points (..., 3) to pixels (..., 2)."""
        pts = np.asarray(cam_points, dtype=np.float64)
        z = pts[..., 2]
        u = self.fx * pts[..., 0] / z + self.cx
        v = self.fy * pts[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1)

    def to_dict(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "translation": [float(v) for v in self.translation],
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        try:
            return cls(
                rotation=np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
                translation=np.asarray(d["translation"], dtype=np.float64),
                fx=float(d["fx"]),
                fy=float(d["fy"]),
                cx=float(d["cx"]),
                cy=float(d["cy"]),
                width=int(d["width"]),
                height=int(d["height"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed camera record: {e}") from e


def look_at(
    position: np.ndarray,
    target: np.ndarray,
    fx: float,
    fy: float,
    width: int,
    height: int,
    up: np.ndarray = (0.0, 1.0, 0.0),
    cx: float | None = None,
    cy: float | None = None,
) -> CameraPose:
    """Camera at ``position`` looking at ``target``.

    ``up`` is the world direction that should map to image-up (negative v).
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)

    forward = target - position
    fn = np.linalg.norm(forward)
    if fn < 1e-12:
        raise ArgumentError("look_at target coincides with camera position")
    forward = forward / fn

    right = np.cross(forward, up)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise ArgumentError("look_at up direction is parallel to the view direction")
    right = right / rn
    down = np.cross(forward, right)  # y points down in camera space

    rotation = np.stack([right, down, forward], axis=0)
    translation = -rotation @ position
    return CameraPose(
        rotation=rotation,
        translation=translation,
        fx=fx,
        fy=fy,
        cx=width / 2.0 if cx is None else cx,
        cy=height / 2.0 if cy is None else cy,
        width=width,
        height=height,
    )
