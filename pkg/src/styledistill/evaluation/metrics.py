"""Direct style and geometry scores used by the toy benchmark and the mock judge."""

from __future__ import annotations

import warnings

import numpy as np
import torch

BINS = 8


class EmptyForegroundWarning(UserWarning):
    pass


def channel_histograms(image: torch.Tensor, mask: torch.Tensor | None = None) -> np.ndarray | None:
    """(3, BINS) normalized histograms of foreground pixels, or None if empty."""
    img = image.detach().float().clamp(0, 1).reshape(3, -1).cpu().numpy()
    if mask is not None:
        img = img[:, mask.detach().reshape(-1).cpu().numpy().astype(bool)]
    if img.shape[1] == 0:
        return None
    idx = np.minimum((img * BINS).astype(np.int64), BINS - 1)
    hist = np.stack([np.bincount(row, minlength=BINS) for row in idx]).astype(np.float64)
    return hist / hist.sum(1, keepdims=True)


def emd_1d(p: np.ndarray, q: np.ndarray) -> float:
    """Earth mover distance between histograms on unit-spaced bins."""
    return float(np.abs(np.cumsum(p - q)).sum())


def style_alignment_metric(render: torch.Tensor, style: torch.Tensor,
                           mask: torch.Tensor | None = None,
                           style_mask: torch.Tensor | None = None) -> float:
    """1 - (worst-channel EMD / max EMD) between foreground color histograms, in [0, 1].

    ``mask`` selects the render foreground (e.g. alpha > 0.5); None means the
    whole image. An empty foreground scores 0 with a warning.
    """
    hr = channel_histograms(render, mask)
    hs = channel_histograms(style, style_mask)
    if hr is None or hs is None:
        warnings.warn("empty foreground; style alignment defined as 0", EmptyForegroundWarning,
                      stacklevel=2)
        return 0.0
    worst = max(emd_1d(a, b) for a, b in zip(hr, hs))
    return float(min(1.0, max(0.0, 1.0 - worst / (BINS - 1))))


def template_silhouette(shape: str, size: int) -> torch.Tensor:
    """The canonical 2D silhouette the toy model associates with ``shape``."""
    from ..diffusion.dataset import car_wheels, shape_mask

    mask, _ = shape_mask(shape, size)
    if shape == "car":
        mask = mask | car_wheels(size)
    return torch.from_numpy(mask)


def iou(a: torch.Tensor, b: torch.Tensor) -> float:
    a, b = a.bool(), b.bool()
    union = (a | b).sum().item()
    return 1.0 if union == 0 else (a & b).sum().item() / union


def silhouette_consistency(masks, shape: str) -> float:
    """Mean over views of IoU(foreground mask, template silhouette of ``shape``)."""
    masks = list(masks)
    if not masks:
        raise ValueError("need at least one view")
    tmpl = template_silhouette(shape, masks[0].shape[-1])
    return float(np.mean([iou(m, tmpl) for m in masks]))


def prompt_shape(prompt: str) -> str | None:
    from ..diffusion.vocab import SHAPES, split_words

    return next((w for w in split_words(prompt) if w in SHAPES), None)
