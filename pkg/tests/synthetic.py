"""Synthetic rendered assets for tournament tests: methods drift toward the style colors."""

from __future__ import annotations

import numpy as np
import torch

from styledistill.evaluation.metrics import style_alignment_metric, template_silhouette
from styledistill.pipeline import load_style_image

PROMPTS = {"p0": "red cube", "p1": "blue sphere", "p2": "green cone"}
STYLE_OF = {"p0": "fire", "p1": "stripes", "p2": "dots"}
STRENGTH = {"plain": 0.0, "weak": 0.3, "medium": 0.6, "strong": 0.9}


def _asset(prompt: str, style: torch.Tensor, strength: float, n_views: int = 4, size: int = 32):
    shape = prompt.split()[-1]
    mask = template_silhouette(shape, size)
    base = torch.tensor([0.8, 0.3, 0.3]).view(3, 1, 1).expand(3, size, size)
    views = []
    for v in range(n_views):
        tex = torch.roll(style, shifts=5 * v, dims=-1)
        rgb = torch.full((3, size, size), 0.5)
        mixed = (1 - strength) * base + strength * tex
        rgb = torch.where(mask, mixed, rgb)
        normal = torch.where(mask, torch.tensor([0.5, 0.5, 1.0]).view(3, 1, 1), torch.full((3, 1, 1), 0.5))
        views.append((rgb, normal.expand(3, size, size).clone()))
    return views


def synthetic_methods():
    styles = {pid: load_style_image(f"builtin:{s}", 32, 0) for pid, s in STYLE_OF.items()}
    methods = {name: {pid: _asset(PROMPTS[pid], styles[pid], k) for pid in PROMPTS}
               for name, k in STRENGTH.items()}
    return methods, dict(PROMPTS), styles


def mean_style_metric(views_by_prompt: dict, styles: dict) -> float:
    vals = []
    for pid, views in views_by_prompt.items():
        rgb = torch.cat([r for r, _ in views], -1)
        fg = torch.cat([((n - 0.5).abs() > 1e-3).any(0) for _, n in views], -1)
        vals.append(style_alignment_metric(rgb, styles[pid], fg))
    return float(np.mean(vals))
