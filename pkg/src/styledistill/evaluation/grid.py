"""Side-by-side comparison image: two objects' RGB and normal views plus the style row."""

from __future__ import annotations

import torch
import torch.nn.functional as F


def _fit(img: torch.Tensor, cell: int) -> torch.Tensor:
    img = img.detach().float().clamp(0, 1)
    if img.shape[-1] == cell and img.shape[-2] == cell:
        return img
    return F.interpolate(img[None], size=(cell, cell), mode="nearest")[0]


def build_comparison_grid(views_a, views_b, style: torch.Tensor, cell: int | None = None) -> torch.Tensor:
    """(3, (V+1) cell, 4 cell) grid.

    ``views_*`` are lists of (rgb, normal_rgb) pairs, each (3, H, W) in [0, 1].
    Columns are [rgb A, normal A, rgb B, normal B]; the last row repeats the
    style image four times. ``cell`` defaults to the first view's size.
    """
    if len(views_a) != len(views_b):
        raise ValueError(f"view counts differ: {len(views_a)} vs {len(views_b)}")
    if not views_a:
        raise ValueError("at least one view per object is required")
    cell = cell or views_a[0][0].shape[-1]
    rows = []
    for (ra, na), (rb, nb) in zip(views_a, views_b):
        rows.append(torch.cat([_fit(ra, cell), _fit(na, cell), _fit(rb, cell), _fit(nb, cell)], -1))
    s = _fit(style, cell)
    rows.append(torch.cat([s, s, s, s], -1))
    return torch.cat(rows, -2)


def split_comparison_grid(grid: torch.Tensor, cell: int):
    """Inverse of the layout: (views_a, views_b, style)."""
    n_rows = grid.shape[-2] // cell

    def at(r, c):
        return grid[:, r * cell:(r + 1) * cell, c * cell:(c + 1) * cell]

    va = [(at(r, 0), at(r, 1)) for r in range(n_rows - 1)]
    vb = [(at(r, 2), at(r, 3)) for r in range(n_rows - 1)]
    return va, vb, at(n_rows - 1, 0)
