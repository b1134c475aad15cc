"""Noise prediction and classifier-free guidance on top of a denoiser."""

from __future__ import annotations

import torch

from .schedule import ContractError, NoiseSchedule
from .unet import NumericalError
from .vocab import PromptEmbedding


def as_batch(z: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if z.dim() == 3:
        return z.unsqueeze(0), True
    if z.dim() == 4:
        return z, False
    raise ContractError(f"expected (C,H,W) or (B,C,H,W), got {tuple(z.shape)}")


def predict_noise(d, z_t: torch.Tensor, t: int, cond: PromptEmbedding,
                  cam: torch.Tensor | None = None) -> torch.Tensor:
    """eps_phi(z_t | cond), same shape as ``z_t``. Never tracks gradients."""
    zb, squeeze = as_batch(z_t)
    sched = getattr(d, "schedule", None)
    if sched is not None and not 0 <= int(t) <= sched.num_steps:
        raise ContractError(f"timestep {t} outside schedule range")
    with torch.no_grad():
        out = d.run(zb, t, cond, cam)
    if not torch.isfinite(out).all():
        layer = d.locate_nonfinite(zb, t, cond, cam) if hasattr(d, "locate_nonfinite") else None
        raise NumericalError("non-finite noise prediction", layer)
    return out[0] if squeeze else out


def guided(uncond: torch.Tensor, cond: torch.Tensor, beta: float) -> torch.Tensor:
    """eps(∅) + beta (eps(y) - eps(∅)), written so beta in {0, 1} is exact."""
    return (1.0 - beta) * uncond + beta * cond


def cfg_combine(d, z_t: torch.Tensor, t: int, cond: PromptEmbedding, beta: float,
                uncond: PromptEmbedding | None = None, cam=None) -> torch.Tensor:
    if beta < 0:
        raise ContractError("guidance scale must be nonnegative")
    if uncond is None:
        uncond = d.empty_prompt()
    e_u = predict_noise(d, z_t, t, uncond, cam)
    e_c = predict_noise(d, z_t, t, cond, cam)
    return guided(e_u, e_c, beta)


def denoising_loss(d, sched: NoiseSchedule, x: torch.Tensor, prompts, t: torch.Tensor,
                   eps: torch.Tensor, cam=None) -> torch.Tensor:
    """Per-sample eps-prediction MSE; differentiable w.r.t. parameters and prompts."""
    a = sched.alphas[t].to(x.dtype).view(-1, 1, 1, 1)
    s = sched.sigmas[t].to(x.dtype).view(-1, 1, 1, 1)
    z = a * x + s * eps
    pred = d.run(z, t, prompts, cam)
    return (pred - eps).pow(2).flatten(1).mean(1)


def to_model_space(img: torch.Tensor) -> torch.Tensor:
    """[0, 1] image -> [-1, 1] diffusion space."""
    return img * 2.0 - 1.0


def to_image_space(x: torch.Tensor) -> torch.Tensor:
    return ((x + 1.0) / 2.0).clamp(0.0, 1.0)
