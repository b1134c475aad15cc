"""Per-step distillation residuals.

Each function draws (t, eps) from ``rng`` in the same order (t first, then
eps), forms z_t = alpha_t x + sigma_t eps and returns the residual r such
that the caller backpropagates ``(r.detach() * x).sum()``. ``x`` is the
render in diffusion space ([-1, 1]).

Branches whose mixture weight is exactly zero are not evaluated.
"""

from __future__ import annotations

import math

import torch

from ..diffusion.core import cfg_combine, predict_noise
from ..diffusion.schedule import ContractError, DEFAULT_T_THRESHOLD_FRAC, NoiseSchedule
from ..diffusion.unet import NumericalError
from ..diffusion.vocab import PromptEmbedding
from ..style.injection import AttentionCache, modified_cfg_combine, modified_predict_noise


def draw_noise(sched: NoiseSchedule, x: torch.Tensor, rng: torch.Generator):
    t = sched.sample_t(rng)
    eps = torch.randn(x.shape, generator=rng, dtype=x.dtype)
    z = sched.add_noise(x.detach(), t, eps).z_t
    return t, eps, z


def _check_lambda(lam: float):
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"style ratio must lie in [0, 1], got {lam}")


def _mix(lam, plain, styled):
    """(1 - lam) * plain() + lam * styled(), skipping zero-weight branches."""
    if lam == 0.0:
        return plain()
    if lam == 1.0:
        return styled()
    return (1.0 - lam) * plain() + lam * styled()


def sds_residual(d, sched: NoiseSchedule, x, y: PromptEmbedding, beta: float,
                 rng: torch.Generator):
    """omega(t) (eps_cfg(z_t | y) - eps)."""
    t, eps, z = draw_noise(sched, x, rng)
    e = cfg_combine(d, z, t, y, beta)
    return sched.omega(t) * (e - eps), t


def ssd_residual(d, sched, x, y, cache: AttentionCache | None, lam: float, beta: float,
                 rng: torch.Generator, y_mod: PromptEmbedding | None = None):
    """omega(t) ((1 - lam) eps_cfg(z_t | y) + lam eps_hat_cfg(z_t | y', s) - eps).

    Both branches share (t, eps, z_t); the style cache is captured on demand
    at the drawn t. ``y_mod`` is the prompt for the styled branch (defaults to y).
    """
    _check_lambda(lam)
    t, eps, z = draw_noise(sched, x, rng)
    y_mod = y_mod or y

    def styled():
        cache.ensure(t)
        return modified_cfg_combine(d, z, t, y_mod, cache, beta)

    mix = _mix(lam, lambda: cfg_combine(d, z, t, y, beta), styled)
    return sched.omega(t) * (mix - eps), t


def nfsd_directions(predict, z, t, y, uncond, negative, beta, below: bool):
    """delta_D + beta * delta_C for one branch; ``predict(z, t, prompt)`` is the score."""
    e_u = predict(z, t, uncond)
    e_c = predict(z, t, y)
    delta_d = e_u if below else e_u - predict(z, t, negative)
    return delta_d + beta * (e_c - e_u)


def snf_ssd_residual(d, sched, x, y, cache: AttentionCache | None, lam: float, beta: float,
                     p_neg: PromptEmbedding, rng: torch.Generator,
                     y_mod: PromptEmbedding | None = None,
                     t_threshold_frac: float = DEFAULT_T_THRESHOLD_FRAC):
    """Noise-free stylized residual; no -eps term.

    omega(t) ((1 - lam)(dD + beta dC) + lam (dD_hat + beta dC_hat)) with
    dD = eps(∅) for t < threshold, eps(∅) - eps(p_neg) otherwise, and
    dC = eps(y) - eps(∅); hatted terms use the style-swapped model.
    """
    _check_lambda(lam)
    if not 0.0 < t_threshold_frac < 1.0:
        raise ContractError("t_threshold_frac must lie in (0, 1)")
    t, _eps, z = draw_noise(sched, x, rng)
    below = t < t_threshold_frac * sched.T
    uncond = d.empty_prompt()
    y_mod = y_mod or y

    def plain():
        return nfsd_directions(lambda zz, tt, p: predict_noise(d, zz, tt, p),
                               z, t, y, uncond, p_neg, beta, below)

    def styled():
        cache.ensure(t)
        return nfsd_directions(lambda zz, tt, p: modified_predict_noise(d, zz, tt, p, cache),
                               z, t, y_mod, uncond, p_neg, beta, below)

    return sched.omega(t) * _mix(lam, plain, styled), t


def guidance_decomposition(d, z, t, y, y_mod, cache, p_neg, T: int,
                           t_threshold_frac: float = DEFAULT_T_THRESHOLD_FRAC) -> dict:
    """delta_D, delta_C and their style-swapped counterparts at a fixed (z_t, t)."""
    below = t < t_threshold_frac * T
    uncond = d.empty_prompt()
    out = {}
    for tag, pred, prompt in (
            ("", lambda zz, tt, p: predict_noise(d, zz, tt, p), y),
            ("_hat", lambda zz, tt, p: modified_predict_noise(d, zz, tt, p, cache), y_mod)):
        if tag:
            cache.ensure(t)
        e_u = pred(z, t, uncond)
        out["delta_D" + tag] = e_u if below else e_u - pred(z, t, p_neg)
        out["delta_C" + tag] = pred(z, t, prompt) - e_u
    return out


class VSDAux:
    """Online-trained score model of the current renders (camera-conditioned).

    Starts as a copy of the pretrained denoiser with a zero-initialized camera
    projection, so its first predictions equal the pretrained ones.
    """

    def __init__(self, d, lr: float = 1e-3, seed: int = 0, cam_dim: int = 4):
        from ..diffusion.unet import Architecture, Denoiser

        arch = Architecture.from_dict({**d.arch.to_dict(), "cam_dim": cam_dim})
        self.model = Denoiser(arch, d.vocab, schedule=d.schedule)
        missing, unexpected = self.model.load_state_dict(d.state_dict(), strict=False)
        if unexpected or any(not k.startswith("cam_proj") for k in missing):
            raise RuntimeError("auxiliary denoiser does not match the pretrained layout")
        self.model = self.model.to(memory_format=torch.channels_last)
        for p in self.model.parameters():
            p.requires_grad_(True)
        self.schedule = d.schedule
        self.opt = torch.optim.AdamW(self.model.parameters(), lr=lr, weight_decay=0.0)
        self.gen = torch.Generator().manual_seed(seed)

    def predict(self, z, t, y, cam=None):
        return predict_noise(self.model, z, t, y, cam)

    def train_step(self, x, y, cam=None) -> float:
        from ..diffusion.core import denoising_loss

        xb = x.detach()[None] if x.dim() == 3 else x.detach()
        t = torch.randint(1, self.schedule.T + 1, (xb.shape[0],), generator=self.gen)
        eps = torch.randn(xb.shape, generator=self.gen, dtype=xb.dtype)
        camb = None if cam is None else cam.reshape(1, -1).expand(xb.shape[0], -1)
        loss = denoising_loss(self.model, self.schedule, xb, [y] * xb.shape[0], t, eps, camb).mean()
        if not torch.isfinite(loss):
            raise NumericalError("auxiliary denoiser diverged (non-finite loss)")
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        self.opt.step()
        return float(loss.detach())


def vsd_ssd_residual(d, aux, sched, x, y, cache: AttentionCache | None, lam: float, beta: float,
                     cam_cond, rng: torch.Generator, y_mod: PromptEmbedding | None = None):
    """omega(t)((1 - lam) eps_cfg + lam eps_hat_cfg - eps_aux(z_t | y, cam)), then one aux update.

    Returns (residual, t, aux_training_loss).
    """
    _check_lambda(lam)
    t, _eps, z = draw_noise(sched, x, rng)
    y_mod = y_mod or y
    cam_b = None if cam_cond is None else cam_cond.reshape(1, -1)

    def styled():
        cache.ensure(t)
        return modified_cfg_combine(d, z, t, y_mod, cache, beta)

    mix = _mix(lam, lambda: cfg_combine(d, z, t, y, beta), styled)
    e_aux = aux.predict(z, t, y, cam_b)
    residual = sched.omega(t) * (mix - e_aux)
    aux_loss = aux.train_step(x, y, cam_b)
    if not math.isfinite(aux_loss):
        raise NumericalError("auxiliary denoiser diverged (non-finite loss)")
    return residual, t, aux_loss


__all__ = ["draw_noise", "sds_residual", "ssd_residual", "snf_ssd_residual",
           "vsd_ssd_residual", "guidance_decomposition", "nfsd_directions", "VSDAux"]
