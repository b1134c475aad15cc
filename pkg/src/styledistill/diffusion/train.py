"""Training the toy conditional denoiser and persisting checkpoints."""

from __future__ import annotations

import copy
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..seeding import numpy_rng, torch_generator
from .core import denoising_loss, to_model_space
from .dataset import ToyDataset, caption
from .schedule import NoiseSchedule
from .unet import Architecture, Denoiser
from .vocab import Vocabulary

log = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 2e-3
    weight_decay: float = 0.0
    p_uncond: float = 0.1
    ema_decay: float = 0.995
    holdout_frac: float = 0.05
    loss_threshold: float = 0.2
    seed: int = 0
    log_every: int = 100
    arch: dict = field(default_factory=dict)


@dataclass
class TrainRecord:
    losses: list
    final_loss: float
    heldout_loss: float
    uncond_fraction: float
    converged: bool
    seconds: float


def _batch_prompts(d: Denoiser, ds: ToyDataset, idx, rng, p_uncond):
    texts, n_uncond = [], 0
    for i in idx:
        if rng.random() < p_uncond:
            texts.append("")
            n_uncond += 1
        else:
            texts.append(caption(ds.shapes[i], ds.styles[i], ds.kinds[i], rng))
    ids = [d.vocab.encode(t) for t in texts]
    L = d.arch.max_tokens
    tok = torch.zeros(len(ids), L, dtype=torch.long)
    mask = torch.zeros(len(ids), L, dtype=torch.bool)
    for j, seq in enumerate(ids):
        tok[j, : len(seq)] = torch.tensor(seq)
        mask[j, : len(seq)] = True
    return tok, mask, n_uncond


def _loss(d, sched, x, tok, mask, t, eps):
    a = sched.alphas[t].float().view(-1, 1, 1, 1)
    s = sched.sigmas[t].float().view(-1, 1, 1, 1)
    z = (a * x + s * eps).contiguous(memory_format=torch.channels_last)
    pred = d(z, t, d.token_embedding(tok), mask)
    return (pred - eps).pow(2).mean()


def heldout_loss(d: Denoiser, sched: NoiseSchedule, ds: ToyDataset, seed: int = 1234,
                 n_draws: int = 2) -> float:
    """Mean eps-MSE on ``ds`` with fixed (t, eps) draws and full-label captions."""
    if len(ds) == 0:
        return float("nan")
    g = torch_generator(seed, "heldout")
    rng = numpy_rng(seed, "heldout")
    x = to_model_space(torch.from_numpy(ds.images).permute(0, 3, 1, 2).float())
    total, count = 0.0, 0
    with torch.no_grad():
        for _ in range(n_draws):
            for lo in range(0, len(ds), 64):
                idx = list(range(lo, min(lo + 64, len(ds))))
                tok, mask, _ = _batch_prompts(d, ds, idx, rng, 0.0)
                t = torch.randint(1, sched.T + 1, (len(idx),), generator=g)
                eps = torch.randn(x[idx].shape, generator=g)
                total += _loss(d, sched, x[idx], tok, mask, t, eps).item() * len(idx)
                count += len(idx)
    return total / count


def train_toy_denoiser(ds: ToyDataset, cfg: TrainConfig | None = None,
                       sched: NoiseSchedule | None = None, progress=None) -> Denoiser:
    """Fit a conditional eps-prediction U-Net to ``ds``.

    The returned model carries the EMA weights and a ``training_record``.
    A held-out loss above ``cfg.loss_threshold`` raises a ConvergenceWarning.
    """
    cfg = cfg or TrainConfig()
    sched = sched or NoiseSchedule()
    torch.manual_seed(cfg.seed)
    rng = numpy_rng(cfg.seed, "train.data")
    g = torch_generator(cfg.seed, "train.noise")

    n = len(ds)
    perm = rng.permutation(n)
    n_hold = int(round(cfg.holdout_frac * n)) if n > 1 else 0
    hold, train = ds.subset(perm[:n_hold]), ds.subset(perm[n_hold:])

    d = Denoiser(Architecture(**cfg.arch), Vocabulary(), schedule=sched)
    d = d.to(memory_format=torch.channels_last)
    ema = copy.deepcopy(d)
    for p in ema.parameters():
        p.requires_grad_(False)
    opt = torch.optim.AdamW(d.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    warm = max(1, min(100, cfg.steps // 10))

    def lr_at(step):
        if step < warm:
            return (step + 1) / warm
        return 0.5 * (1 + math.cos(math.pi * (step - warm) / max(1, cfg.steps - warm)))

    sched_lr = torch.optim.lr_scheduler.LambdaLR(opt, lr_at)
    images = to_model_space(torch.from_numpy(train.images).permute(0, 3, 1, 2).float())
    losses, n_uncond, n_seen = [], 0, 0
    t0 = time.time()
    d.train()
    for step in range(cfg.steps):
        idx = rng.integers(0, len(train), cfg.batch_size)
        tok, mask, nu = _batch_prompts(d, train, idx, rng, cfg.p_uncond)
        n_uncond += nu
        n_seen += len(idx)
        x = images[idx]
        if rng.random() < 0.5:
            x = x.flip(-1)
        t = torch.randint(1, sched.T + 1, (len(idx),), generator=g)
        eps = torch.randn(x.shape, generator=g)
        loss = _loss(d, sched, x, tok, mask, t, eps)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(d.parameters(), 1.0)
        opt.step()
        sched_lr.step()
        decay = min(cfg.ema_decay, (1 + step) / (10 + step))
        with torch.no_grad():
            for pe, p in zip(ema.parameters(), d.parameters()):
                pe.mul_(decay).add_(p.detach(), alpha=1 - decay)
        losses.append(loss.item())
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            recent = float(np.mean(losses[-cfg.log_every:]))
            log.info("step %d loss %.4f", step + 1, recent)
            if progress:
                progress(step + 1, recent)

    ema.eval()
    hl = heldout_loss(ema, sched, hold, seed=cfg.seed)
    tail = losses[-min(len(losses), 50):] if losses else [float("nan")]
    final = float(np.mean(tail))
    check = hl if not math.isnan(hl) else final
    converged = bool(check <= cfg.loss_threshold)
    ema.training_record = TrainRecord(losses=losses, final_loss=final, heldout_loss=hl,
                                      uncond_fraction=n_uncond / max(1, n_seen),
                                      converged=converged, seconds=time.time() - t0)
    ema.train_config = cfg
    if not converged:
        warnings.warn(f"denoiser did not converge: loss {check:.4f} > {cfg.loss_threshold}",
                      ConvergenceWarning, stacklevel=2)
    return ema


def save_denoiser(d: Denoiser, path) -> Path:
    """Single file with parameters, architecture, schedule constants and vocabulary."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rec = getattr(d, "training_record", None)
    torch.save({
        "format": "styledistill.denoiser/1",
        "state_dict": {k: v.contiguous() for k, v in d.state_dict().items()},
        "arch": d.arch.to_dict(),
        "schedule": d.schedule.to_dict() if d.schedule else NoiseSchedule().to_dict(),
        "vocab": d.vocab.words,
        "training_record": asdict(rec) if rec else None,
    }, path)
    return path


def load_denoiser(path) -> Denoiser:
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    if blob.get("format") != "styledistill.denoiser/1":
        raise ValueError(f"{path} is not a denoiser checkpoint")
    d = Denoiser(Architecture.from_dict(blob["arch"]), Vocabulary(blob["vocab"]),
                 schedule=NoiseSchedule.from_dict(blob["schedule"]))
    d.load_state_dict(blob["state_dict"])
    d = d.to(memory_format=torch.channels_last)
    d.eval()
    for p in d.parameters():
        p.requires_grad_(False)
    if blob.get("training_record"):
        d.training_record = TrainRecord(**blob["training_record"])
    return d


__all__ = ["TrainConfig", "TrainRecord", "ConvergenceWarning", "train_toy_denoiser",
           "save_denoiser", "load_denoiser", "heldout_loss", "denoising_loss"]
