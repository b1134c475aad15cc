"""Procedural toy dataset: primitive shapes in style variants, plus style swatches.

Every sample carries a shape token (or ``None`` for a full-frame style swatch)
and a style token, so content prompts and style prompts can be controlled
independently. A small fraction of samples are degraded (blurred, noisy,
washed out) and captioned with the negative-prompt words.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .vocab import NEGATIVE_WORDS, SHAPES, STYLES

BACKGROUND = 0.5

FLAT_COLORS = {
    "red": (0.85, 0.15, 0.12),
    "blue": (0.15, 0.25, 0.85),
    "green": (0.15, 0.70, 0.20),
    "yellow": (0.92, 0.85, 0.15),
}


@dataclass
class ToyDataset:
    images: np.ndarray  # (N, H, W, 3) float32 in [0, 1]
    shapes: list  # shape token or None
    styles: list  # style token
    kinds: list  # "object" | "swatch" | "degraded"

    def __len__(self):
        return len(self.images)

    def subset(self, idx) -> "ToyDataset":
        idx = list(idx)
        return ToyDataset(self.images[idx], [self.shapes[i] for i in idx],
                          [self.styles[i] for i in idx], [self.kinds[i] for i in idx])

    def select(self, shape=None, style=None, kind=None) -> "ToyDataset":
        keep = [i for i in range(len(self))
                if (shape is None or self.shapes[i] == shape)
                and (style is None or self.styles[i] == style)
                and (kind is None or self.kinds[i] == kind)]
        return self.subset(keep)


def _grid(size: int):
    c = (np.arange(size) + 0.5) / size * 2 - 1
    v, u = np.meshgrid(c, c, indexing="ij")  # u right, v down
    return u, v


def shape_mask(shape: str, size: int = 32, center=(0.0, 0.0), scale: float = 1.0):
    """Binary silhouette and a shading field in [0.6, 1.1] for a primitive."""
    u, v = _grid(size)
    u = (u - center[0]) / scale
    v = (v - center[1]) / scale
    shade = np.ones_like(u)
    if shape == "sphere":
        r2 = u**2 + v**2
        mask = r2 <= 0.55**2
        shade = 1.1 - 0.45 * np.sqrt(((u + 0.2) ** 2 + (v + 0.2) ** 2)) / 0.75
    elif shape == "cube":
        # isometric hexagon: top face, left face, right face
        h = 0.5
        mask = (np.abs(u) <= h * 0.95) & (np.abs(v) <= h + 0.1 - 0.5 * np.abs(u))
        top = v < -0.5 * np.abs(u) + 0.05 - 0.2
        left = (~top) & (u < 0)
        shade = np.where(top, 1.1, np.where(left, 0.85, 0.65))
    elif shape == "cone":
        top, bottom, half = -0.6, 0.5, 0.5
        frac = (v - top) / (bottom - top)
        mask = (v >= top) & (v <= bottom) & (np.abs(u) <= half * frac)
        mask |= ((u / half) ** 2 + ((v - bottom) / 0.12) ** 2) <= 1.0
        shade = 1.05 - 0.4 * np.clip((u + half) / (2 * half), 0, 1)
    elif shape == "car":
        body = (np.abs(u) <= 0.72) & (v >= -0.05) & (v <= 0.28)
        cabin = (v >= -0.32) & (v < -0.05) & (np.abs(u) <= 0.38 - 0.5 * (-0.05 - v))
        mask = body | cabin
        shade = np.where(cabin, 1.05, 0.9)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return mask, np.clip(shade, 0.6, 1.1)


def car_wheels(size: int = 32, center=(0.0, 0.0), scale: float = 1.0):
    u, v = _grid(size)
    u = (u - center[0]) / scale
    v = (v - center[1]) / scale
    return (((u + 0.42) ** 2 + (v - 0.3) ** 2) <= 0.16**2) | (((u - 0.42) ** 2 + (v - 0.3) ** 2) <= 0.16**2)


def style_texture(style: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Full-frame (size, size, 3) texture for a style token."""
    u, v = _grid(size)
    if style in FLAT_COLORS:
        base = np.array(FLAT_COLORS[style]) + rng.uniform(-0.04, 0.04, 3)
        tex = np.broadcast_to(base, (size, size, 3)).copy()
    elif style == "stripes":
        period = 2 * 6 / size
        phase = rng.uniform(0, period)
        on = np.mod(u + v + phase, period) < period / 2
        tex = np.where(on[..., None], np.array([0.80, 0.20, 0.70]), np.array([0.95, 0.95, 0.95]))
    elif style == "dots":
        step = 6 / size * 2
        off = rng.uniform(0, step, 2)
        du = np.mod(u + off[0], step) - step / 2
        dv = np.mod(v + off[1], step) - step / 2
        on = du**2 + dv**2 <= (0.32 * step) ** 2
        tex = np.where(on[..., None], np.array([0.20, 0.90, 0.90]), np.array([0.10, 0.10, 0.30]))
    elif style == "fire":
        wob = 0.12 * np.sin(u * rng.uniform(5, 9) + rng.uniform(0, 6.3))
        h = np.clip((v + 1) / 2 + wob, 0, 1)  # 0 at top, 1 at bottom
        stops = np.array([[0.05, 0.02, 0.02], [0.55, 0.03, 0.0], [1.0, 0.45, 0.05], [1.0, 0.9, 0.25]])
        x = h * (len(stops) - 1)
        i = np.clip(np.floor(x).astype(int), 0, len(stops) - 2)
        f = (x - i)[..., None]
        tex = stops[i] * (1 - f) + stops[i + 1] * f
    else:
        raise ValueError(f"unknown style {style!r}")
    return np.clip(tex, 0, 1)


def render_sample(shape, style, size: int, rng: np.random.Generator, jitter: bool = True):
    """One (size, size, 3) image of ``shape`` in ``style``; ``shape=None`` gives a swatch."""
    tex = style_texture(style, size, rng)
    if shape is None:
        return tex.astype(np.float32)
    center = tuple(rng.uniform(-0.08, 0.08, 2)) if jitter else (0.0, 0.0)
    scale = rng.uniform(0.9, 1.1) if jitter else 1.0
    mask, shade = shape_mask(shape, size, center, scale)
    obj = np.clip(tex * shade[..., None], 0, 1)
    img = np.where(mask[..., None], obj, BACKGROUND)
    if shape == "car":
        img = np.where(car_wheels(size, center, scale)[..., None], 0.12, img)
    return img.astype(np.float32)


def degrade(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    k = 5
    pad = np.pad(img, ((k // 2, k // 2), (k // 2, k // 2), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for dy in range(k):
        for dx in range(k):
            out += pad[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    out /= k * k
    gray = out.mean(-1, keepdims=True)
    out = 0.5 * out + 0.5 * gray + rng.normal(0, 0.12, img.shape)
    return np.clip(out, 0, 1).astype(np.float32)


def make_dataset(n: int, size: int = 32, seed: int = 0, swatch_frac: float = 0.15,
                 degraded_frac: float = 0.05) -> ToyDataset:
    rng = np.random.default_rng(seed)
    images, shapes, styles, kinds = [], [], [], []
    for _ in range(n):
        style = STYLES[rng.integers(len(STYLES))]
        r = rng.random()
        if r < swatch_frac:
            shape, kind = None, "swatch"
        else:
            shape = SHAPES[rng.integers(len(SHAPES))]
            kind = "degraded" if r < swatch_frac + degraded_frac else "object"
        img = render_sample(shape, style, size, rng)
        if kind == "degraded":
            img = degrade(img, rng)
        images.append(img)
        shapes.append(shape)
        styles.append(style)
        kinds.append(kind)
    return ToyDataset(np.stack(images), shapes, styles, kinds)


def caption(shape, style, kind, rng: np.random.Generator) -> str:
    """Randomized text label for one sample, drawn from a fixed template set."""
    if kind == "degraded":
        words = list(NEGATIVE_WORDS)
        rng.shuffle(words)
        return " ".join(words[: rng.integers(2, 5)])
    if kind == "swatch":
        options = [style, f"{style} background", f"style of {style}"]
        if style == "fire":
            options.append("fire on a black background")
        return options[rng.integers(len(options))]
    options = [f"{style} {shape}", f"a {style} {shape}", f"{shape} {style}",
               f"{shape} in the style of {style}", f"{style} {shape}", shape, f"a {shape}"]
    if shape == "car":
        options += ["a toy car", f"a toy car {style}"]
    return options[rng.integers(len(options))]


def write_dataset(ds: ToyDataset, out_dir) -> Path:
    """Write PNGs plus ``manifest.json`` entries {file, shape, style, kind}."""
    from PIL import Image

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, img in enumerate(ds.images):
        name = f"images/{i:06d}.png"
        Image.fromarray((np.clip(img, 0, 1) * 255).round().astype(np.uint8)).save(out / name)
        manifest.append({"file": name, "shape": ds.shapes[i], "style": ds.styles[i],
                         "kind": ds.kinds[i]})
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def read_dataset(manifest_path) -> ToyDataset:
    from PIL import Image

    manifest_path = Path(manifest_path)
    entries = json.loads(manifest_path.read_text())
    images = [np.asarray(Image.open(manifest_path.parent / e["file"]).convert("RGB"),
                         dtype=np.float32) / 255.0 for e in entries]
    return ToyDataset(np.stack(images), [e["shape"] for e in entries],
                      [e["style"] for e in entries], [e.get("kind", "object") for e in entries])
