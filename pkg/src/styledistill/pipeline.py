"""End-to-end experiment: style preparation, distillation, renders and metrics."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch

from .baselines.captioning import CaptionerConfig, caption_style_image
from .baselines.prompt import style_in_prompt
from .baselines.style_loss import load_or_train_extractor, style_regularizer
from .baselines.textual_inversion import textual_inversion
from .config import ConfigError, dump_config
from .diffusion.dataset import style_texture
from .diffusion.schedule import ContractError
from .diffusion.train import load_denoiser
from .diffusion.vocab import PLACEHOLDER, STYLES, UnknownTokenError
from .distill.optimize import DistillationConfig, optimize_scene
from .distill.schedules import StyleRatioSchedule
from .evaluation.metrics import prompt_shape, silhouette_consistency, style_alignment_metric
from .render.camera import CameraPolicy, orbit_cameras
from .render.io import load_png, save_png, save_scene
from .render.scenes import Canvas2D, RadianceGrid
from .render.volume import normals_to_rgb, render, render_normals
from .seeding import numpy_rng
from .style.injection import DEFAULT_SWAP_LAYERS, StyleReference
from .style.inversion import invert_style_image

log = logging.getLogger(__name__)


def load_style_image(spec: str, size: int, seed: int = 0, base: Path | None = None) -> torch.Tensor:
    """``builtin:<style>`` gives a procedural swatch; anything else is a PNG path."""
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if name not in STYLES:
            raise ConfigError("unknown builtin style", [f"{name!r} not in {STYLES}"])
        tex = style_texture(name, size, numpy_rng(seed, f"style-image/{name}"))
        return torch.from_numpy(tex.astype(np.float32)).permute(2, 0, 1).contiguous()
    path = Path(spec)
    if base is not None and not path.is_absolute():
        path = base / path
    if not path.exists():
        raise ConfigError("style image not found", [str(path)])
    return load_png(path, size)


def build_style_reference(d, image: torch.Tensor, caption: str, origin: str, seed: int) -> StyleReference:
    if origin == "inverted":
        return invert_style_image(d, image, caption=caption, seed=seed)
    try:
        prompt = d.embed_prompt(caption, kind="style") if caption else d.empty_prompt()
    except UnknownTokenError:
        log.warning("caption %r has out-of-vocabulary words; style pass uses the empty prompt",
                    caption)
        prompt = d.empty_prompt()
    return StyleReference(image=image, origin="generated", style_prompt=prompt, caption=caption,
                          seed=seed)


def evaluation_views(scene, n: int = 4, resolution: int = 32, elevation: float = 15.0):
    """[(rgb, normal_rgb, alpha)] per view. A canvas is one flat view facing the camera."""
    with torch.no_grad():
        if isinstance(scene, Canvas2D):
            rgb = render(scene)
            flat = torch.tensor([0.5, 0.5, 1.0]).view(3, 1, 1).expand_as(rgb).clone()
            return [(rgb, flat, torch.ones(rgb.shape[1:]))] * n
        out = []
        for cam in orbit_cameras(n, elevation=elevation, resolution=resolution):
            res = render(scene, cam, return_aux=True)
            normals, _ = render_normals(scene, cam)
            out.append((res.image, normals_to_rgb(normals), res.alpha))
        return out


def scene_metrics(scene, style_image: torch.Tensor | None, prompt: str, n_views: int = 4,
                  resolution: int = 32) -> dict:
    views = evaluation_views(scene, n_views, resolution)
    masks = [a > 0.5 for _, _, a in views]
    rgb = torch.cat([v[0] for v in views], -1)
    fg = torch.cat(masks, -1)
    out = {"foreground_fraction": float(fg.float().mean())}
    if style_image is not None:
        out["style_alignment"] = style_alignment_metric(rgb, style_image, fg) if fg.any() else 0.0
    shape = prompt_shape(prompt)
    if shape is not None and isinstance(scene, RadianceGrid):
        out["silhouette_consistency"] = silhouette_consistency(masks, shape)
    return out


def run_experiment(cfg: dict, out_dir, base: Path | None = None, progress=None) -> dict:
    """Execute a validated config; everything is written under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    den_path = Path(cfg["denoiser"])
    if base is not None and not den_path.is_absolute():
        den_path = base / den_path
    if not den_path.exists():
        raise ConfigError("denoiser checkpoint not found", [str(den_path)])
    d = load_denoiser(den_path)
    size = d.arch.image_size
    seed = cfg["seed"]
    torch.manual_seed(seed)

    st = cfg["style"]
    style_image, ref, caption = None, None, ""
    prompt, prompt_embedding, regularizer = cfg["prompt"], None, None
    extra = {}
    if st is not None:
        style_image = load_style_image(st["image"], size, seed, base)
        save_png(style_image, out / "style.png")
        cap_cfg = CaptionerConfig(**st.get("captioner", {}))
        caption = caption_style_image(style_image, st["caption_provider"],
                                      manual=st["caption"] or None, config=cap_cfg) \
            if (st["caption"] or st["caption_provider"] == "external") else ""
        baseline = cfg["baseline"]
        if baseline == "none":
            ref = build_style_reference(d, style_image, caption, st["origin"], seed)
            extra["style_reference"] = {"origin": ref.origin, **{k: v for k, v in ref.info.items()
                                                                 if isinstance(v, (int, float, str))}}
        elif baseline == "style-in-prompt":
            prompt = style_in_prompt(prompt, st["description"] or caption, d.vocab)
        elif baseline == "neural-style-loss":
            f = load_or_train_extractor(cfg["feature_extractor"], seed=seed)
            regularizer = style_regularizer(style_image, f, st["weight"])
        elif baseline == "textual-inversion":
            tok = textual_inversion(d, style_image, steps=st["ti_steps"], seed=seed, caption=caption)
            text = f"{prompt} in the style of {PLACEHOLDER}"
            prompt_embedding = d.embed_prompt(text, kind="augmented", placeholder=tok.embedding)
            extra["textual_inversion"] = {"final_loss": tok.final_loss, "init_word": tok.init_word}

    mode = cfg["mode"]
    scene = Canvas2D(size) if mode == "canvas2d" else RadianceGrid.blob(32)
    lo, hi = cfg["t_range"]
    try:
        dcfg = DistillationConfig(
            prompt=prompt, loss=cfg["loss"], beta=cfg["beta"], negative_prompt=cfg["negative_prompt"],
            iterations=cfg["iterations"], t_min_frac=lo, t_max_frac=hi, lr=cfg["lr"], seed=seed,
            t_threshold_frac=cfg["t_threshold_frac"],
            swap_layers=tuple((st or {}).get("swap_layers") or DEFAULT_SWAP_LAYERS),
            camera=CameraPolicy(resolution=size), render_every=cfg["render_every"])
        sched = StyleRatioSchedule(cfg["schedule"]["kind"], cfg["schedule"]["lambda_max"])
    except (ContractError, ValueError) as exc:
        raise ConfigError("invalid distillation settings", [str(exc)]) from exc

    result = optimize_scene(scene, d, ref, dcfg, sched, regularizer=regularizer,
                            log_path=out / "trajectory.jsonl", out_dir=out / "renders",
                            prompt_embedding=prompt_embedding, progress=progress)
    save_scene(scene, out / "scene.pt", iteration=len(result.log), prompt=prompt, mode=mode)
    views = evaluation_views(scene, cfg["eval_views"], size)
    for i, (rgb, normal, _) in enumerate(views):
        save_png(rgb, out / "final" / f"view_{i}.png")
        if mode == "voxel3d":
            save_png(normal, out / "final" / f"normal_{i}.png")

    tail = result.log[-max(1, len(result.log) // 10):]
    metrics = {
        "prompt": prompt,
        "mode": mode,
        "loss": cfg["loss"],
        "baseline": cfg["baseline"],
        "iterations": len(result.log),
        "final_lambda": result.log[-1]["lambda"],
        "mean_residual_norm_tail": float(np.mean([r["residual_norm"] for r in tail])),
        **scene_metrics(scene, style_image, cfg["prompt"], cfg["eval_views"], size),
        **extra,
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    return metrics
