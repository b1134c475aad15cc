"""The single-stage optimization loop: render, score, update."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import torch

from ..diffusion.core import to_model_space
from ..diffusion.schedule import ContractError, DEFAULT_T_THRESHOLD_FRAC
from ..diffusion.unet import NumericalError
from ..diffusion.vocab import NEGATIVE_PROMPT
from ..render.camera import CameraError, CameraPolicy, sample_camera
from ..render.io import save_png
from ..render.scenes import Canvas2D, RadianceGrid
from ..render.volume import render
from ..seeding import numpy_rng, torch_generator
from ..style.injection import DEFAULT_SWAP_LAYERS, AttentionCache, StyleReference
from .residuals import VSDAux, snf_ssd_residual, sds_residual, ssd_residual, vsd_ssd_residual
from .schedules import StyleRatioSchedule, schedule_lambda

log = logging.getLogger(__name__)

LOSS_KINDS = ("sds", "ssd", "snf-ssd", "vsd-ssd")
DEFAULT_BETA = {"sds": 100.0, "ssd": 100.0, "snf-ssd": 7.5, "vsd-ssd": 7.5}
DEFAULT_LR = {"canvas2d": 1e-2, "voxel3d": 5e-2}
DEFAULT_ITERS = {"canvas2d": 2000, "voxel3d": 5000}


class DivergenceError(NumericalError):
    """Non-finite values during optimization; ``iteration`` is where it happened."""

    def __init__(self, message: str, iteration: int):
        self.iteration = iteration
        super().__init__(f"{message} at iteration {iteration}")


@dataclass
class DistillationConfig:
    prompt: str
    loss: str = "snf-ssd"
    beta: float | None = None  # None: per-loss default
    negative_prompt: str = NEGATIVE_PROMPT
    iterations: int | None = None  # None: per-mode default
    t_min_frac: float = 0.02
    t_max_frac: float = 0.98
    lr: float | None = None  # None: per-mode default
    seed: int = 0
    t_threshold_frac: float = DEFAULT_T_THRESHOLD_FRAC
    swap_layers: tuple = DEFAULT_SWAP_LAYERS
    camera: CameraPolicy = field(default_factory=CameraPolicy)
    aux_lr: float = 1e-3
    render_every: int = 0
    jitter: bool = False

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ContractError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.beta is not None and self.beta < 0:
            raise ContractError("beta must be nonnegative")
        if self.iterations is not None and self.iterations <= 0:
            raise ContractError("iterations K must be positive")
        if not 0.0 < self.t_threshold_frac < 1.0:
            raise ContractError("t_threshold_frac must lie in (0, 1)")
        if not 0.0 <= self.t_min_frac < self.t_max_frac <= 1.0:
            raise ContractError("timestep range must satisfy 0 <= min < max <= 1")
        self.swap_layers = tuple(self.swap_layers)

    @property
    def guidance(self) -> float:
        return DEFAULT_BETA[self.loss] if self.beta is None else self.beta

    def resolved(self, mode: str) -> tuple[int, float]:
        return (self.iterations or DEFAULT_ITERS[mode], self.lr or DEFAULT_LR[mode])

    def to_dict(self) -> dict:
        out = asdict(self)
        out["swap_layers"] = list(self.swap_layers)
        return out


@dataclass
class OptimizationResult:
    scene: torch.nn.Module
    log: list
    cache: AttentionCache | None = None

    def __iter__(self):  # unpack as (scene, log)
        return iter((self.scene, self.log))


def _augmented(prompt: str, caption: str) -> str:
    return f"{prompt} {caption}".strip() if caption else prompt


def optimize_scene(scene, d, style: StyleReference | None, cfg: DistillationConfig,
                   sched: StyleRatioSchedule, *, regularizer: Callable | None = None,
                   log_path=None, out_dir=None, cache: AttentionCache | None = None,
                   prompt_embedding=None, progress: Callable | None = None) -> OptimizationResult:
    """Run K distillation iterations on ``scene`` in place.

    ``regularizer(image, k)`` adds a differentiable penalty on the [0, 1]
    render (used by the image-loss baseline). ``prompt_embedding`` overrides
    the embedding of ``cfg.prompt`` (e.g. one carrying a learned token).
    Without a style reference the style ratio is forced to 0.
    """
    if isinstance(scene, Canvas2D):
        mode = "canvas2d"
    elif isinstance(scene, RadianceGrid):
        mode = "voxel3d"
    else:
        raise ContractError(f"unsupported scene type {type(scene).__name__}")
    if mode == "voxel3d" and cfg.camera.resolution != d.arch.image_size:
        raise CameraError("camera resolution must match the denoiser resolution")
    if mode == "canvas2d" and scene.resolution != d.arch.image_size:
        raise ContractError("canvas resolution must match the denoiser resolution")
    K, lr = cfg.resolved(mode)
    beta = cfg.guidance
    nsched = d.schedule.with_range(cfg.t_min_frac, cfg.t_max_frac)

    y = prompt_embedding if prompt_embedding is not None else d.embed_prompt(cfg.prompt)
    y_mod = y
    if style is not None:
        if cache is None:
            cache = AttentionCache(cfg.swap_layers, denoiser=d, reference=style)
        y_mod = d.embed_prompt(_augmented(cfg.prompt, style.caption), kind="augmented")
    p_neg = d.embed_prompt(cfg.negative_prompt, kind="negative")

    gen = torch_generator(cfg.seed, "distill")
    cams = numpy_rng(cfg.seed, "camera")
    jitter = torch_generator(cfg.seed, "jitter") if cfg.jitter else None
    aux = VSDAux(d, lr=cfg.aux_lr, seed=cfg.seed) if cfg.loss == "vsd-ssd" else None
    opt = torch.optim.Adam(scene.parameters(), lr=lr)

    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w")
    records = []
    try:
        for k in range(K):
            t0 = time.perf_counter()
            lam = schedule_lambda(sched, k, K) if style is not None else 0.0
            cam = sample_camera(cams, cfg.camera) if mode == "voxel3d" else None
            img = render(scene, cam, jitter=jitter)
            x = to_model_space(img)
            extra = {}
            if cfg.loss == "sds":
                r, t = sds_residual(d, nsched, x, y, beta, gen)
            elif cfg.loss == "ssd":
                r, t = ssd_residual(d, nsched, x, y, cache, lam, beta, gen, y_mod=y_mod)
            elif cfg.loss == "snf-ssd":
                r, t = snf_ssd_residual(d, nsched, x, y, cache, lam, beta, p_neg, gen,
                                        y_mod=y_mod, t_threshold_frac=cfg.t_threshold_frac)
            else:
                cam_cond = cam.embedding() if cam is not None else torch.zeros(4)
                r, t, aux_loss = vsd_ssd_residual(d, aux, nsched, x, y, cache, lam, beta,
                                                  cam_cond, gen, y_mod=y_mod)
                extra["aux_loss"] = aux_loss
            r = r.reshape(x.shape).detach()
            if not torch.isfinite(r).all():
                raise DivergenceError("non-finite residual", k)
            loss = (r * x).sum()
            if regularizer is not None:
                reg = regularizer(img, k)
                loss = loss + reg
                extra["regularizer"] = float(reg.detach())
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            for name, p in scene.named_parameters():
                if not torch.isfinite(p).all():
                    raise DivergenceError(f"NaN in scene parameter {name}", k)
            rec = {"iter": k, "lambda": lam, "t": int(t), "loss_kind": cfg.loss,
                   "residual_norm": float(r.norm()),
                   "wall_ms": (time.perf_counter() - t0) * 1000.0, **extra}
            records.append(rec)
            if log_file is not None:
                log_file.write(json.dumps(rec) + "\n")
            if out_dir is not None and cfg.render_every and (k + 1) % cfg.render_every == 0:
                _snapshot(scene, Path(out_dir) / f"iter_{k + 1:05d}.png", cfg.camera.resolution)
            if progress is not None:
                progress(k, rec)
    finally:
        if log_file is not None:
            log_file.close()
    return OptimizationResult(scene, records, cache)


def _snapshot(scene, path: Path, resolution: int):
    from ..render.camera import Camera

    cam = None if isinstance(scene, Canvas2D) else Camera(azimuth=30.0, elevation=15.0,
                                                         resolution=resolution)
    with torch.no_grad():
        save_png(render(scene, cam), path)


def trajectory_digest(records: list) -> str:
    """Hash of the deterministic parts of a trajectory log (timings excluded)."""
    import hashlib

    h = hashlib.sha256()
    for r in records:
        h.update(json.dumps({k: v for k, v in r.items() if k != "wall_ms"}, sort_keys=True).encode())
    return h.hexdigest()


__all__ = ["DistillationConfig", "DivergenceError", "OptimizationResult", "optimize_scene", "trajectory_digest",
           "LOSS_KINDS", "DEFAULT_BETA"]
