"""Pinhole cameras on a viewing sphere (z-up world) and random view sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    radius: float = 3.0
    azimuth: float = 0.0  # degrees
    elevation: float = 15.0  # degrees
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.0)
    fov: float = 40.0  # vertical, degrees
    resolution: int = 32

    def __post_init__(self):
        if not self.radius > 0:
            raise CameraError(f"camera radius must be positive, got {self.radius}")

    def position(self) -> np.ndarray:
        az, el = math.radians(self.azimuth), math.radians(self.elevation)
        offset = self.radius * np.array([math.cos(el) * math.cos(az),
                                         math.cos(el) * math.sin(az), math.sin(el)])
        return np.asarray(self.look_at, dtype=np.float64) + offset

    def basis(self):
        pos = self.position()
        fwd = np.asarray(self.look_at, dtype=np.float64) - pos
        n = np.linalg.norm(fwd)
        if n < 1e-12:
            raise CameraError("degenerate camera: zero viewing direction")
        fwd = fwd / n
        up = np.array([0.0, 0.0, 1.0])
        if abs(fwd @ up) > 1 - 1e-9:
            up = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        cam_up = np.cross(right, fwd)
        return pos, fwd, right, cam_up

    def rays(self, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
        """Ray origins and unit directions, each (H*W, 3), row-major from the top-left pixel."""
        pos, fwd, right, cam_up = self.basis()
        res = self.resolution
        half = math.tan(math.radians(self.fov) / 2)
        c = ((np.arange(res) + 0.5) / res * 2 - 1) * half
        yy, xx = np.meshgrid(-c, c, indexing="ij")
        dirs = fwd[None, None] + xx[..., None] * right + yy[..., None] * cam_up
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        dirs = torch.from_numpy(dirs.reshape(-1, 3)).to(dtype)
        origins = torch.from_numpy(np.broadcast_to(pos, (res * res, 3)).copy()).to(dtype)
        return origins, dirs

    def embedding(self) -> torch.Tensor:
        """Compact view descriptor used as camera conditioning."""
        az, el = math.radians(self.azimuth), math.radians(self.elevation)
        return torch.tensor([math.sin(az), math.cos(az), math.sin(el), math.cos(el)])


@dataclass(frozen=True)
class CameraPolicy:
    azimuth_range: tuple[float, float] = (0.0, 360.0)
    elevation_range: tuple[float, float] = (-10.0, 45.0)
    radius_range: tuple[float, float] = (3.0, 3.0)
    fov: float = 40.0
    resolution: int = 32


def sample_camera(rng: np.random.Generator, policy: CameraPolicy = CameraPolicy()) -> Camera:
    """Azimuth uniform on its range; elevation and radius uniform within bounds."""
    for name in ("azimuth_range", "elevation_range", "radius_range"):
        lo, hi = getattr(policy, name)
        if not lo <= hi:
            raise CameraError(f"empty {name}: [{lo}, {hi}]")
    az = rng.uniform(*policy.azimuth_range)
    el = rng.uniform(*policy.elevation_range)
    r = rng.uniform(*policy.radius_range)
    return Camera(radius=float(r), azimuth=float(az), elevation=float(el),
                  fov=policy.fov, resolution=policy.resolution)


def orbit_cameras(n: int, elevation: float = 15.0, radius: float = 3.0, fov: float = 40.0,
                  resolution: int = 32, start: float = 0.0) -> list[Camera]:
    """``n`` evenly spaced azimuths at a fixed elevation (turntable / evaluation views)."""
    return [Camera(radius=radius, azimuth=start + 360.0 * i / n, elevation=elevation,
                   fov=fov, resolution=resolution) for i in range(n)]
