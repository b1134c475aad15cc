"""Differentiable scene parameterizations: a 2D canvas and an explicit voxel radiance grid."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class Canvas2D(nn.Module):
    """Image parameterized by unconstrained logits; color = sigmoid(logits)."""

    mode = "canvas2d"

    def __init__(self, size: int = 32, init: torch.Tensor | None = None,
                 dtype=torch.float32):
        super().__init__()
        if init is None:
            init = torch.zeros(3, size, size, dtype=dtype)
        self.logits = nn.Parameter(init.clone().to(dtype))

    @property
    def resolution(self) -> int:
        return self.logits.shape[-1]

    def color(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)


class RadianceGrid(nn.Module):
    """N^3 grid over the cube [-extent, extent]^3.

    Voxel density is softplus(density_logits) and voxel color is
    sigmoid(color_logits); both are trilinearly interpolated between voxel centers.
    """

    mode = "voxel3d"

    def __init__(self, n: int = 32, extent: float = 1.0, dtype=torch.float32,
                 density_logits: torch.Tensor | None = None,
                 color_logits: torch.Tensor | None = None):
        super().__init__()
        self.extent = float(extent)
        if density_logits is None:
            density_logits = torch.full((n, n, n), -10.0, dtype=dtype)
        if color_logits is None:
            color_logits = torch.zeros(3, n, n, n, dtype=dtype)
        # storage order is (z, y, x) so that grid_sample's (x, y, z) lookup lines up
        self.density_logits = nn.Parameter(density_logits.clone().to(dtype))
        self.color_logits = nn.Parameter(color_logits.clone().to(dtype))

    @property
    def resolution(self) -> int:
        return self.density_logits.shape[0]

    def density(self) -> torch.Tensor:
        return F.softplus(self.density_logits)

    def color(self) -> torch.Tensor:
        return torch.sigmoid(self.color_logits)

    def voxel_centers(self) -> torch.Tensor:
        n = self.resolution
        return torch.linspace(-self.extent, self.extent, n, dtype=self.density_logits.dtype)

    @classmethod
    def blob(cls, n: int = 32, radius: float = 0.5, peak: float = 10.0, extent: float = 1.0,
             dtype=torch.float32) -> "RadianceGrid":
        """Density blob at the origin, gray color: the usual distillation start.

        Density logits fall off linearly, peak * (1 - r / radius), so space
        well outside the blob starts out empty instead of hazy.
        """
        c = torch.linspace(-extent, extent, n, dtype=dtype)
        z, y, x = torch.meshgrid(c, c, c, indexing="ij")
        r = torch.sqrt(x**2 + y**2 + z**2)
        return cls(n, extent, dtype, density_logits=peak * (1.0 - r / radius))

    def query(self, pts: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Interpolated (density (P,), color (P, 3)) at world points (P, 3)."""
        vol = torch.cat([self.density()[None], self.color()], 0)[None]  # (1, 4, D, H, W)
        g = (pts / self.extent).to(vol.dtype).view(1, -1, 1, 1, 3)
        out = F.grid_sample(vol, g, mode="bilinear", padding_mode="zeros", align_corners=True)
        out = out.view(4, -1)
        return out[0], out[1:].T
