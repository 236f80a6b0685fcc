"""Pinhole camera model.

Camera space follows the OpenCV convention: +x right, +y down, +z forward;
a point is visible when its camera-space z exceeds the near plane.  Pixel
coordinates are u = fx * x / z + cx, v = fy * y / z + cy with pixel centers
sampled at half-integer offsets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray  # 4x4 rigid transform, row-major

    def __post_init__(self):
        self.fx = float(self.fx)
        self.fy = float(self.fy)
        self.cx = float(self.cx)
        self.cy = float(self.cy)
        self.width = int(self.width)
        self.height = int(self.height)
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        self.validate()

    def validate(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DataError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise DataError("image dimensions must be positive")
        if not np.isfinite(self.world_to_camera).all():
            raise DataError("world_to_camera contains non-finite values")
        r = self.world_to_camera[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-5):
            raise DataError("world_to_camera rotation block is not orthonormal")
        if not np.allclose(self.world_to_camera[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise DataError("world_to_camera last row must be [0, 0, 0, 1]")

    @property
    def rotation(self):
        return self.world_to_camera[:3, :3]

    @property
    def translation(self):
        return self.world_to_camera[:3, 3]

    def to_camera(self, points):
        """Map world-space points (..., 3) into camera space."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def to_json(self) -> str:
        return json.dumps({
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "world_to_camera": [float(v) for v in self.world_to_camera.reshape(16)],
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Camera":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid camera JSON: {exc}") from exc
        required = ["fx", "fy", "cx", "cy", "width", "height", "world_to_camera"]
        missing = [key for key in required if key not in obj]
        if missing:
            raise DataError(f"camera JSON missing keys: {', '.join(missing)}")
        w2c = np.asarray(obj["world_to_camera"], dtype=np.float64)
        if w2c.size != 16:
            raise DataError(f"world_to_camera must hold 16 numbers, got {w2c.size}")
        return cls(obj["fx"], obj["fy"], obj["cx"], obj["cy"],
                   obj["width"], obj["height"], w2c.reshape(4, 4))


def look_at(eye, target, up=(0.0, 1.0, 0.0), fov_deg=50.0, width=64, height=64) -> Camera:
    """Convenience constructor: camera at ``eye`` looking toward ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise DataError("eye and target coincide")
    forward = forward / norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        up = np.array([0.0, 0.0, 1.0])
        right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)  # +y in camera space points down
    rot = np.stack([right, down, forward])
    w2c = np.eye(4)
    w2c[:3, :3] = rot
    w2c[:3, 3] = -rot @ eye
    fx = 0.5 * width / np.tan(0.5 * np.deg2rad(fov_deg))
    fy = fx
    return Camera(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
                  width=width, height=height, world_to_camera=w2c)
