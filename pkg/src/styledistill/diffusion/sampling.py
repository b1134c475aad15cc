"""Deterministic DDIM sampling and inversion for the toy model."""

from __future__ import annotations

import torch

from ..seeding import torch_generator
from .core import cfg_combine, guided, predict_noise, to_image_space
from .vocab import PromptEmbedding


def ddim_timesteps(num_steps: int, T: int) -> list[int]:
    """Descending timesteps T = t_0 > ... > t_{n-1} >= 1."""
    if num_steps < 1:
        raise ValueError("need at least one sampling step")
    ts = torch.linspace(T, 1, num_steps).round().long().tolist()
    out = []
    for t in ts:
        if not out or t < out[-1]:
            out.append(int(t))
    return out


def _step(sched, z, eps, t_from, t_to, clip: bool = False):
    a_f, s_f = sched.alpha(t_from), sched.sigma(t_from)
    a_t, s_t = sched.alpha(t_to), sched.sigma(t_to)
    x0 = (z - s_f * eps) / a_f
    if clip:
        # keep x0 in the data range and make eps consistent with it
        x0 = x0.clamp(-1, 1)
        eps = (z - a_f * x0) / s_f
    return a_t * x0 + s_t * eps, x0


def _eps(d, z, t, cond, guidance, uncond=None):
    if guidance == 1.0:
        return predict_noise(d, z, t, cond)
    return cfg_combine(d, z, t, cond, guidance, uncond=uncond)


def ddim_sample(d, cond: PromptEmbedding, z_T: torch.Tensor, steps: int = 50,
                guidance: float = 3.0, return_trajectory: bool = False, clip: bool = True):
    """Run DDIM (eta = 0) from ``z_T``; returns model-space x_0 (and latents by t).

    ``clip`` clamps each x_0 estimate to [-1, 1]; reconstruction from an
    inversion trajectory needs ``clip=False`` to stay exactly invertible.
    """
    sched = d.schedule
    ts = ddim_timesteps(steps, sched.T)
    z = z_T
    traj = {ts[0]: z.clone()}
    for i, t in enumerate(ts):
        eps = _eps(d, z, t, cond, guidance)
        t_next = ts[i + 1] if i + 1 < len(ts) else 0
        z, x0 = _step(sched, z, eps, t, t_next, clip)
        traj[t_next] = z.clone()
    x0 = z.clamp(-1, 1)
    return (x0, traj) if return_trajectory else x0


def sample_images(d, cond: PromptEmbedding, n: int = 1, steps: int = 50, seed: int = 0,
                  guidance: float = 3.0) -> torch.Tensor:
    """``n`` images in [0, 1], shape (n, 3, H, W); bit-identical for a fixed seed."""
    g = torch_generator(seed, "sample")
    size = d.arch.image_size
    z = torch.randn(n, 3, size, size, generator=g)
    return to_image_space(ddim_sample(d, [cond] * n if n > 1 else cond, z, steps, guidance))


def ddim_invert(d, x0: torch.Tensor, cond: PromptEmbedding, steps: int = 50,
                guidance: float = 1.0) -> dict[int, torch.Tensor]:
    """Deterministic inversion x_0 -> z_T; returns latents keyed by timestep (0 included)."""
    sched = d.schedule
    ts = list(reversed(ddim_timesteps(steps, sched.T)))  # ascending
    z = x0
    traj = {0: x0.clone()}
    t_prev = 0
    for t in ts:
        # eps is evaluated at the current (less noisy) latent, the usual inversion approximation
        eps = _eps(d, z, max(t_prev, 1), cond, guidance)
        z, _ = _step(sched, z, eps, t_prev, t)
        traj[t] = z.clone()
        t_prev = t
    return traj


__all__ = ["ddim_timesteps", "ddim_sample", "sample_images", "ddim_invert", "guided"]
