"""Image-space style loss on features of a small classifier trained on the toy data."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..diffusion.schedule import ContractError
from ..diffusion.vocab import SHAPES, STYLES
from ..seeding import numpy_rng

log = logging.getLogger(__name__)

# Tapped layers, named after the classic VGG taps they stand in for.
LAYER_IDS = ("conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv4_2", "conv5_1")
_PLAN = (("conv1_1", 3, 16, False), ("conv2_1", 16, 32, True), ("conv3_1", 32, 48, True),
         ("conv4_1", 48, 64, True), ("conv4_2", 64, 64, False), ("conv5_1", 64, 64, True))
_MEAN = torch.tensor([0.5, 0.5, 0.5]).view(1, 3, 1, 1)
_STD = torch.tensor([0.25, 0.25, 0.25]).view(1, 3, 1, 1)


def gram(feat: torch.Tensor) -> torch.Tensor:
    b, c, h, w = feat.shape
    f = feat.reshape(b, c, h * w)
    return f @ f.transpose(1, 2) / (c * h * w)


class StyleNet(nn.Module):
    """Six-conv classifier predicting (shape, style) of a toy image."""

    def __init__(self):
        super().__init__()
        self.convs = nn.ModuleDict({name: nn.Conv2d(cin, cout, 3, padding=1)
                                    for name, cin, cout, _ in _PLAN})
        self.pool_before = {name: pool for name, _, _, pool in _PLAN}
        self.shape_head = nn.Linear(64, len(SHAPES) + 1)  # last class: no shape (swatch)
        self.style_head = nn.Linear(64, len(STYLES))

    def features(self, x: torch.Tensor, taps=LAYER_IDS) -> tuple[list, torch.Tensor]:
        h = (x - _MEAN.to(x.dtype)) / _STD.to(x.dtype)
        out = []
        for name, conv in self.convs.items():
            if self.pool_before[name]:
                h = F.avg_pool2d(h, 2)
            h = F.relu(conv(h))
            if name in taps:
                out.append(h)
        return out, h

    def forward(self, x):
        _, h = self.features(x, taps=())
        pooled = h.mean((2, 3))
        return self.shape_head(pooled), self.style_head(pooled)


class FeatureExtractor:
    """f: image -> list of per-layer style features (Gram matrices by default)."""

    def __init__(self, net: StyleNet, layer_ids=LAYER_IDS, input_size: int = 32,
                 transform: Callable | None = gram):
        unknown = set(layer_ids) - set(LAYER_IDS)
        if unknown:
            raise ValueError(f"unknown layers {sorted(unknown)}")
        self.net = net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.layer_ids = tuple(layer_ids)
        self.input_size = input_size
        self.transform = transform

    def __call__(self, image: torch.Tensor) -> list:
        x = image[None] if image.dim() == 3 else image
        if x.shape[-1] != self.input_size or x.shape[-2] != self.input_size:
            raise ContractError(f"extractor expects {self.input_size}x{self.input_size} input")
        dtype = next(self.net.parameters()).dtype
        feats, _ = self.net.features(x.to(dtype), taps=self.layer_ids)
        return [self.transform(f) if self.transform else f for f in feats]


def neural_style_loss(x: torch.Tensor, s: torch.Tensor, f: Callable) -> torch.Tensor:
    """sum over layers of ||f(x) - f(s)||^2."""
    if x.shape != s.shape:
        raise ContractError(f"image shapes differ: {tuple(x.shape)} vs {tuple(s.shape)}")
    fx, fs = f(x), f(s)
    if len(fx) != len(fs):
        raise ContractError("feature extractor returned different layer counts")
    total = x.new_zeros(())
    for a, b in zip(fx, fs):
        total = total + (a - b).pow(2).sum()
    return total


def train_feature_extractor(ds, steps: int = 400, batch_size: int = 64, lr: float = 2e-3,
                            seed: int = 0) -> tuple[StyleNet, dict]:
    """Fit StyleNet on (shape, style) labels of a ToyDataset; returns (net, stats)."""
    torch.manual_seed(seed)
    rng = numpy_rng(seed, "feature-extractor")
    net = StyleNet()
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    images = torch.from_numpy(ds.images).permute(0, 3, 1, 2).float()
    shape_y = torch.tensor([SHAPES.index(s) if s else len(SHAPES) for s in ds.shapes])
    style_y = torch.tensor([STYLES.index(s) for s in ds.styles])
    losses = []
    for _ in range(steps):
        idx = torch.from_numpy(rng.integers(0, len(ds), batch_size))
        ls, lt = net(images[idx])
        loss = F.cross_entropy(ls, shape_y[idx]) + F.cross_entropy(lt, style_y[idx])
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(loss.item())
    net.eval()
    with torch.no_grad():
        ls, lt = net(images[:512])
        acc_shape = float((ls.argmax(1) == shape_y[:512]).float().mean())
        acc_style = float((lt.argmax(1) == style_y[:512]).float().mean())
    stats = {"final_loss": float(np.mean(losses[-20:])), "shape_accuracy": acc_shape,
             "style_accuracy": acc_style}
    log.info("feature extractor: %s", stats)
    return net, stats


def load_or_train_extractor(path=None, ds=None, seed: int = 0) -> FeatureExtractor:
    """Load cached StyleNet weights from ``path`` or train on ``ds`` and cache them."""
    if path is not None and Path(path).exists():
        net = StyleNet()
        net.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
        return FeatureExtractor(net)
    if ds is None:
        from ..diffusion.dataset import make_dataset

        ds = make_dataset(2000, seed=seed)
    net, _ = train_feature_extractor(ds, seed=seed)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(net.state_dict(), path)
    return FeatureExtractor(net)


def style_regularizer(style_image: torch.Tensor, f: FeatureExtractor, weight: float = 1e-3):
    """Callable (image, k) -> weighted style loss, for the optimization loop."""
    s = style_image.detach()

    def reg(image, _k):
        return weight * neural_style_loss(image, s, f)

    return reg
