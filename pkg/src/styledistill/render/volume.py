"""Ray-marched alpha compositing for voxel grids, plus the canvas pass-through."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .camera import Camera, CameraError
from .scenes import Canvas2D, RadianceGrid

NUM_SAMPLES = 64
BACKGROUND = (0.5, 0.5, 0.5)


class UnsupportedModeError(TypeError):
    pass


@dataclass
class RenderOutput:
    image: torch.Tensor  # (3, H, W)
    alpha: torch.Tensor  # (H, W) accumulated opacity
    weights: torch.Tensor | None = None  # (H*W, S) compositing weights


def ray_box(origins: torch.Tensor, dirs: torch.Tensor, extent: float):
    """Slab intersection with [-extent, extent]^3; misses get near = far = 0."""
    safe = torch.where(dirs.abs() < 1e-12, torch.full_like(dirs, 1e-12), dirs)
    t1 = (-extent - origins) / safe
    t2 = (extent - origins) / safe
    near = torch.minimum(t1, t2).amax(-1).clamp(min=0.0)
    far = torch.maximum(t1, t2).amin(-1)
    hit = far > near
    return torch.where(hit, near, torch.zeros_like(near)), torch.where(hit, far, torch.zeros_like(far))


def _march(grid: RadianceGrid, cam: Camera, num_samples: int, jitter: torch.Generator | None):
    dtype = grid.density_logits.dtype
    origins, dirs = cam.rays(dtype)
    near, far = ray_box(origins, dirs, grid.extent)
    u = (torch.arange(num_samples, dtype=dtype) + 0.5) / num_samples
    if jitter is not None:
        u = u + (torch.rand(origins.shape[0], num_samples, generator=jitter, dtype=dtype) - 0.5) / num_samples
    else:
        u = u.expand(origins.shape[0], num_samples)
    span = (far - near)[:, None]
    ts = near[:, None] + u * span
    delta = (span / num_samples).expand(-1, num_samples)
    pts = origins[:, None] + ts[..., None] * dirs[:, None]
    return pts, delta


def composite_weights(sigma: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    """w_i = (1 - exp(-sigma_i delta_i)) * exp(-sum_{j<i} sigma_j delta_j)."""
    tau = sigma * delta
    trans = torch.exp(-torch.cumsum(torch.cat([torch.zeros_like(tau[:, :1]), tau[:, :-1]], 1), 1))
    return (1.0 - torch.exp(-tau)) * trans


def render(scene, cam: Camera | None = None, *, num_samples: int = NUM_SAMPLES,
           background=BACKGROUND, jitter: torch.Generator | None = None,
           return_aux: bool = False):
    """Image x = g(theta) in (0, 1), shape (3, H, W); differentiable in scene parameters.

    Canvas scenes ignore ``cam``. Grid scenes march ``num_samples`` stratified
    samples per ray (bin midpoints unless a ``jitter`` generator is given) and
    composite over a constant ``background``.
    """
    if isinstance(scene, Canvas2D):
        img = scene.color()
        out = RenderOutput(img, torch.ones(img.shape[1:], dtype=img.dtype))
        return out if return_aux else img
    if not isinstance(scene, RadianceGrid):
        raise UnsupportedModeError(f"cannot render {type(scene).__name__}")
    if cam is None:
        raise CameraError("voxel grid rendering requires a camera")
    pts, delta = _march(scene, cam, num_samples, jitter)
    sigma, rgb = scene.query(pts.reshape(-1, 3))
    sigma = sigma.view(pts.shape[:2])
    rgb = rgb.view(*pts.shape[:2], 3)
    w = composite_weights(sigma, delta)
    acc = w.sum(1)
    bg = torch.as_tensor(background, dtype=rgb.dtype)
    color = (w[..., None] * rgb).sum(1) + (1.0 - acc)[:, None] * bg
    res = cam.resolution
    img = color.T.reshape(3, res, res)
    if not return_aux:
        return img
    return RenderOutput(img, acc.view(res, res), w)


def render_normals(scene, cam: Camera, *, num_samples: int = NUM_SAMPLES,
                   fg_threshold: float = 0.5) -> tuple[torch.Tensor, torch.Tensor]:
    """World-space normal map (3, H, W) and foreground mask (H, W).

    Normals are the negative normalized density gradient, composited with the
    color weights and renormalized. Background pixels (low opacity or no
    gradient) hold the neutral zero vector; see ``normals_to_rgb``.
    """
    if not isinstance(scene, RadianceGrid):
        raise UnsupportedModeError("normal rendering needs a voxel grid scene")
    pts, delta = _march(scene, cam, num_samples, None)
    flat = pts.reshape(-1, 3).detach().requires_grad_(True)
    with torch.enable_grad():
        sigma, _ = scene.query(flat)
        (grad,) = torch.autograd.grad(sigma.sum(), flat)
    sigma = sigma.detach().view(pts.shape[:2])
    gnorm = grad.norm(dim=-1, keepdim=True)
    n = torch.where(gnorm > 1e-12, -grad / gnorm.clamp(min=1e-12), torch.zeros_like(grad))
    n = n.view(*pts.shape[:2], 3)
    w = composite_weights(sigma, delta)
    acc = w.sum(1)
    comp = (w[..., None] * n).sum(1)
    cn = comp.norm(dim=-1, keepdim=True)
    fg = (acc > fg_threshold) & (cn[:, 0] > 1e-6)
    normals = torch.where(fg[:, None], comp / cn.clamp(min=1e-12), torch.zeros_like(comp))
    res = cam.resolution
    return normals.T.reshape(3, res, res), fg.view(res, res)


def normals_to_rgb(normals: torch.Tensor) -> torch.Tensor:
    """Map [-1, 1] normals to [0, 1]; the zero (background) normal becomes mid-gray."""
    return (normals + 1.0) / 2.0
