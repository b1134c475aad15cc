"""Training-free style injection by swapping self-attention keys and values.

A style pass runs the denoiser on a noised style reference and records the
self-attention K/V of the swap layers. A content pass then runs with those
K/V substituted, giving the modified prediction
eps_hat(z_t | y, s) = eps(z_t | y; att(y_s)). Parameters are never touched.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import torch

from ..diffusion.core import as_batch, guided, predict_noise, to_model_space
from ..diffusion.schedule import ContractError
from ..diffusion.unet import HookStateError
from ..diffusion.vocab import PromptEmbedding
from ..seeding import torch_generator

ORIGINS = ("generated", "inverted")

# Self-attention blocks at the two lowest resolutions of the toy U-Net.
DEFAULT_SWAP_LAYERS = ("down16", "down8", "mid8", "up8", "up16")


class IncompleteCacheError(KeyError):
    pass


class MissingTimestepError(KeyError):
    def __init__(self, t: int):
        self.t = t
        super().__init__(f"style trajectory has no latent for timestep {t}")


def image_hash(image: torch.Tensor) -> str:
    return hashlib.sha256(image.detach().cpu().float().contiguous().numpy().tobytes()).hexdigest()[:16]


@dataclass
class StyleReference:
    """A style image plus how to put it at any noise level.

    ``generated``: noise the image with a per-timestep seeded draw; requires
    ``style_prompt``. ``inverted``: read z_t from a deterministic inversion
    ``trajectory`` that must cover every timestep distillation may sample.
    """

    image: torch.Tensor  # (3, H, W) in [0, 1]
    origin: str
    style_prompt: PromptEmbedding | None = None
    trajectory: dict | None = None
    caption: str = ""
    seed: int = 0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}, got {self.origin!r}")
        if self.origin == "generated" and self.style_prompt is None:
            raise ValueError("a generated style reference needs its style prompt")
        if self.origin == "inverted" and not self.trajectory:
            raise ValueError("an inverted style reference needs an inversion trajectory")

    @property
    def key(self) -> str:
        return image_hash(self.image)

    def covers(self, timesteps) -> bool:
        return self.origin == "generated" or all(int(t) in self.trajectory for t in timesteps)

    def latent_at(self, sched, t: int) -> torch.Tensor:
        """z_t^s in model space, shape (1, 3, H, W)."""
        t = int(t)
        if self.origin == "inverted":
            if t not in self.trajectory:
                raise MissingTimestepError(t)
            return as_batch(self.trajectory[t])[0]
        g = torch_generator(self.seed, f"style-noise/{t}")
        x = to_model_space(self.image)[None]
        eps = torch.randn(x.shape, generator=g, dtype=x.dtype)
        return sched.alpha(t) * x + sched.sigma(t) * eps


class AttentionCache:
    """Per-(layer, timestep) style K/V, filled lazily when a source is attached."""

    def __init__(self, swap_layers=DEFAULT_SWAP_LAYERS, denoiser=None,
                 reference: StyleReference | None = None):
        self.swap_layers = tuple(swap_layers)
        if not self.swap_layers:
            raise ValueError("at least one swap layer is required")
        self.denoiser = denoiser
        self.reference = reference
        self._entries: dict = {}

    def __len__(self):
        return len(self._entries)

    def keys(self):
        return set(self._entries)

    def timesteps(self) -> set:
        return {t for _, t in self._entries}

    def complete(self, t: int) -> bool:
        return all((lid, int(t)) in self._entries for lid in self.swap_layers)

    def store(self, layer: str, t: int, key: torch.Tensor, value: torch.Tensor):
        k = (layer, int(t))
        if k in self._entries:
            raise ContractError(f"cache entry {k} already captured")
        self._entries[k] = (key.detach().clone(), value.detach().clone())

    def kv_at(self, t: int) -> dict:
        t = int(t)
        missing = [lid for lid in self.swap_layers if (lid, t) not in self._entries]
        if missing:
            raise IncompleteCacheError(f"no cached K/V at t={t} for layers {missing}")
        return {lid: self._entries[(lid, t)] for lid in self.swap_layers}

    def ensure(self, t: int) -> None:
        if self.complete(t):
            return
        if self.denoiser is None or self.reference is None:
            raise IncompleteCacheError(f"cache incomplete at t={t} and has no capture source")
        capture_style_features(self.denoiser, self.reference, t, cache=self)

    def digest(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self._entries):
            h.update(repr(k).encode())
            for tensor in self._entries[k]:
                h.update(tensor.contiguous().numpy().tobytes())
        return h.hexdigest()


def capture_style_features(d, ref: StyleReference, t: int, cache: AttentionCache | None = None,
                           layers=None) -> dict:
    """Run the style pass at ``t`` and record K/V of the swap layers.

    Returns ``{(layer, t): (key, value)}``; if ``cache`` is given it is
    populated too. The style pass's own noise prediction is discarded.
    """
    if layers is None:
        layers = cache.swap_layers if cache is not None else DEFAULT_SWAP_LAYERS
    z_s = ref.latent_at(d.schedule, t)
    prompt = ref.style_prompt if ref.style_prompt is not None else d.empty_prompt()
    with torch.no_grad(), d.capture_attention(layers) as sink:
        d.run(z_s, int(t), prompt)
    entries = {(lid, int(t)): sink[lid] for lid in layers}
    if cache is not None:
        for (lid, tt), (k, v) in entries.items():
            if (lid, tt) not in cache.keys():
                cache.store(lid, tt, k, v)
    return entries


def modified_predict_noise(d, z_t: torch.Tensor, t: int, y: PromptEmbedding,
                           cache: AttentionCache, cam=None) -> torch.Tensor:
    """eps_hat(z_t | y, s): a normal forward pass with K/V swapped at the cache layers."""
    kv = cache.kv_at(t)
    with d.swap_attention(kv):
        out = predict_noise(d, z_t, t, y, cam)
    if d.hooks_active:
        raise HookStateError("attention hooks left active after a modified prediction")
    return out


def modified_cfg_combine(d, z_t, t, y: PromptEmbedding, cache: AttentionCache, beta: float,
                         uncond: PromptEmbedding | None = None, cam=None) -> torch.Tensor:
    """Classifier-free guidance applied inside the style-swapped model."""
    if beta < 0:
        raise ContractError("guidance scale must be nonnegative")
    if uncond is None:
        uncond = d.empty_prompt()
    e_u = modified_predict_noise(d, z_t, t, uncond, cache, cam)
    e_c = modified_predict_noise(d, z_t, t, y, cache, cam)
    return guided(e_u, e_c, beta)
