"""Small pixel-space U-Net noise predictor with hookable self-attention.

Self-attention blocks expose their key/value tensors through a per-layer hook
slot so a style pass can record them and a content pass can substitute them.
Hook state lives on the instance; a hooked pass must not run concurrently
with any other pass on the same denoiser.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .vocab import PromptEmbedding, Vocabulary, pack_prompts


class NumericalError(RuntimeError):
    """Non-finite values produced inside a network; ``layer`` names the first culprit."""

    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message if layer is None else f"{message} (first at layer {layer!r})")
        self.layer = layer


class HookStateError(RuntimeError):
    pass


@dataclass
class Architecture:
    image_size: int = 32
    channels: tuple[int, int, int] = (16, 32, 64)
    embed_dim: int = 64
    heads: int = 4
    max_tokens: int = 10
    vocab_size: int = 0
    cam_dim: int = 0
    groups: int = 8
    attention_layers: tuple[str, ...] = field(
        default=("down16", "down8", "mid8", "up8", "up16"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["attention_layers"] = list(self.attention_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        d["attention_layers"] = tuple(d["attention_layers"])
        return cls(**d)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, temb: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(temb, cout)
        self.norm2 = nn.GroupNorm(groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class SelfAttention(nn.Module):
    """Multi-head self-attention whose K/V can be recorded or replaced.

    ``hook`` is ``None`` or a tuple ``("capture", sink_dict)`` /
    ``("replace", (key, value))``. Replacement tensors with batch 1 are
    broadcast over the batch.
    """

    def __init__(self, dim: int, heads: int, layer_id: str):
        super().__init__()
        self.layer_id = layer_id
        self.heads = heads
        self.norm = nn.LayerNorm(dim)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.out = nn.Linear(dim, dim)
        self.hook = None

    def _split(self, x):
        b, n, d = x.shape
        return x.view(b, n, self.heads, d // self.heads).transpose(1, 2)

    def forward(self, x):
        h = self.norm(x)
        q, k, v = self.to_q(h), self.to_k(h), self.to_v(h)
        if self.hook is not None:
            mode, payload = self.hook
            if mode == "capture":
                payload[self.layer_id] = (k.detach().clone(), v.detach().clone())
            elif mode == "replace":
                ck, cv = payload
                k = ck.to(k.dtype).expand(k.shape[0], *ck.shape[1:])
                v = cv.to(v.dtype).expand(v.shape[0], *cv.shape[1:])
        q, k, v = self._split(q), self._split(k), self._split(v)
        o = F.scaled_dot_product_attention(q, k, v)
        o = o.transpose(1, 2).reshape(x.shape)
        return x + self.out(o)


class CrossAttention(nn.Module):
    def __init__(self, dim: int, ctx_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.LayerNorm(dim)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(ctx_dim, dim, bias=False)
        self.to_v = nn.Linear(ctx_dim, dim, bias=False)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, ctx, mask):
        b, n, d = x.shape
        hd = d // self.heads
        q = self.to_q(self.norm(x)).view(b, n, self.heads, hd).transpose(1, 2)
        k = self.to_k(ctx).view(b, -1, self.heads, hd).transpose(1, 2)
        v = self.to_v(ctx).view(b, -1, self.heads, hd).transpose(1, 2)
        o = F.scaled_dot_product_attention(q, k, v, attn_mask=mask[:, None, None, :])
        return x + self.out(o.transpose(1, 2).reshape(b, n, d))


class AttentionBlock(nn.Module):
    """Self-attention, text cross-attention and a feed-forward layer on a feature map."""

    def __init__(self, channels: int, ctx_dim: int, heads: int, groups: int, layer_id: str):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)
        self.self_attn = SelfAttention(channels, heads, layer_id)
        self.cross_attn = CrossAttention(channels, ctx_dim, heads)
        self.ff = nn.Sequential(nn.LayerNorm(channels), nn.Linear(channels, 2 * channels),
                                nn.GELU(), nn.Linear(2 * channels, channels))

    def forward(self, x, ctx, mask):
        b, c, hh, ww = x.shape
        h = self.norm(x).flatten(2).transpose(1, 2)
        h = self.self_attn(h)
        h = self.cross_attn(h, ctx, mask)
        h = h + self.ff(h)
        return x + h.transpose(1, 2).reshape(b, c, hh, ww)


class Denoiser(nn.Module):
    """epsilon-prediction network eps_phi(z_t | cond) on 3-channel images in [-1, 1]."""

    def __init__(self, arch: Architecture, vocab: Vocabulary | None = None, schedule=None):
        super().__init__()
        self.vocab = vocab or Vocabulary()
        self.schedule = schedule
        if arch.vocab_size == 0:
            arch.vocab_size = len(self.vocab)
        if arch.vocab_size != len(self.vocab):
            raise ValueError("architecture vocab_size does not match vocabulary")
        self.arch = arch
        c0, c1, c2 = arch.channels
        g, e = arch.groups, arch.embed_dim
        temb = 4 * c0
        self.token_embedding = nn.Embedding(arch.vocab_size, e)
        self.pos_embedding = nn.Parameter(torch.zeros(arch.max_tokens, e))
        self.time_mlp = nn.Sequential(nn.Linear(c0, temb), nn.SiLU(), nn.Linear(temb, temb))
        if arch.cam_dim:
            self.cam_proj = nn.Linear(arch.cam_dim, temb)
            nn.init.zeros_(self.cam_proj.weight)
            nn.init.zeros_(self.cam_proj.bias)
        else:
            self.cam_proj = None

        def attn(ch, lid):
            return AttentionBlock(ch, e, arch.heads, g, lid)

        self.conv_in = nn.Conv2d(3, c0, 3, padding=1)
        self.down32 = ResBlock(c0, c0, temb, g)
        self.pool1 = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.down16 = ResBlock(c1, c1, temb, g)
        self.down16_attn = attn(c1, "down16")
        self.pool2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.down8 = ResBlock(c2, c2, temb, g)
        self.down8_attn = attn(c2, "down8")
        self.mid1 = ResBlock(c2, c2, temb, g)
        self.mid_attn = attn(c2, "mid8")
        self.mid2 = ResBlock(c2, c2, temb, g)
        self.up8 = ResBlock(2 * c2, c2, temb, g)
        self.up8_attn = attn(c2, "up8")
        self.unpool1 = nn.Conv2d(c2, c1, 3, padding=1)
        self.up16 = ResBlock(2 * c1, c1, temb, g)
        self.up16_attn = attn(c1, "up16")
        self.unpool2 = nn.Conv2d(c1, c0, 3, padding=1)
        self.up32 = ResBlock(2 * c0, c0, temb, g)
        self.norm_out = nn.GroupNorm(g, c0)
        self.conv_out = nn.Conv2d(c0, 3, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

        self._attn = {m.self_attn.layer_id: m.self_attn for m in self.modules()
                      if isinstance(m, AttentionBlock)}
        self._hooks_active = False

    # ------------------------------------------------------------------ prompts
    def embed_prompt(self, text: str = "", kind: str = "content",
                     placeholder: torch.Tensor | None = None) -> PromptEmbedding:
        """Embed ``text``; a ``<h>`` token takes the vector ``placeholder``."""
        tokens = self.vocab.encode(text)
        if kind == "content" and tokens == (self.vocab.empty_id,):
            kind = "empty"
        ids = torch.tensor(tokens, dtype=torch.long)
        emb = self.token_embedding(ids)
        if placeholder is not None:
            sel = ids == self.vocab.placeholder_id
            emb = torch.where(sel[:, None], placeholder.to(emb.dtype)[None, :], emb)
        elif self.vocab.placeholder_id in tokens:
            raise ValueError("prompt uses <h> but no placeholder vector was given")
        if placeholder is None or not placeholder.requires_grad:
            emb = emb.detach()
        return PromptEmbedding(tokens=tokens, embedding=emb, kind=kind, text=text)

    def empty_prompt(self) -> PromptEmbedding:
        return self.embed_prompt("", kind="empty")

    # ------------------------------------------------------------------ hooks
    @property
    def attention_layer_ids(self) -> tuple[str, ...]:
        return tuple(self._attn)

    @property
    def hooks_active(self) -> bool:
        return self._hooks_active

    @contextlib.contextmanager
    def _hooked(self, assign):
        if self._hooks_active:
            raise HookStateError("attention hooks already active on this denoiser")
        self._hooks_active = True
        try:
            for lid, hook in assign.items():
                self._attn[lid].hook = hook
            yield
        finally:
            for layer in self._attn.values():
                layer.hook = None
            self._hooks_active = False

    @contextlib.contextmanager
    def capture_attention(self, layers=None):
        """Record self-attention K/V of ``layers`` during the enclosed forward pass."""
        layers = tuple(layers or self._attn)
        self._require_layers(layers)
        sink: dict = {}
        with self._hooked({lid: ("capture", sink) for lid in layers}):
            yield sink

    @contextlib.contextmanager
    def swap_attention(self, kv: dict):
        """Substitute self-attention K/V for the layers in ``kv`` inside the block."""
        self._require_layers(kv)
        with self._hooked({lid: ("replace", pair) for lid, pair in kv.items()}):
            yield

    def _require_layers(self, layers):
        unknown = [lid for lid in layers if lid not in self._attn]
        if unknown:
            raise KeyError(f"unknown attention layers {unknown}")

    # ------------------------------------------------------------------ forward
    def forward(self, z, t, ctx, mask, cam=None):
        arch = self.arch
        ctx = ctx + self.pos_embedding[: ctx.shape[1]]
        z = z.contiguous(memory_format=torch.channels_last)
        emb = self.time_mlp(timestep_embedding(t, arch.channels[0]))
        if self.cam_proj is not None and cam is not None:
            emb = emb + self.cam_proj(cam)
        h0 = self.down32(self.conv_in(z), emb)
        h1 = self.down16_attn(self.down16(self.pool1(h0), emb), ctx, mask)
        h2 = self.down8_attn(self.down8(self.pool2(h1), emb), ctx, mask)
        m = self.mid2(self.mid_attn(self.mid1(h2, emb), ctx, mask), emb)
        u = self.up8_attn(self.up8(torch.cat([m, h2], 1), emb), ctx, mask)
        u = self.unpool1(F.interpolate(u, scale_factor=2, mode="nearest"))
        u = self.up16_attn(self.up16(torch.cat([u, h1], 1), emb), ctx, mask)
        u = self.unpool2(F.interpolate(u, scale_factor=2, mode="nearest"))
        u = self.up32(torch.cat([u, h0], 1), emb)
        return self.conv_out(F.silu(self.norm_out(u)))

    def run(self, z: torch.Tensor, t, prompts, cam: torch.Tensor | None = None) -> torch.Tensor:
        """Forward pass from prompt embeddings; ``t`` is an int or a (B,) tensor."""
        if isinstance(prompts, PromptEmbedding):
            prompts = [prompts] * z.shape[0]
        if len(prompts) != z.shape[0]:
            raise ValueError("one prompt per batch element required")
        ctx, mask = pack_prompts(prompts, self.arch.max_tokens)
        if not torch.is_tensor(t):
            t = torch.full((z.shape[0],), int(t), dtype=torch.long)
        return self(z, t, ctx.to(z.dtype), mask, cam)

    def locate_nonfinite(self, z, t, prompts, cam=None) -> str | None:
        """Re-run a pass and return the first submodule whose output is non-finite."""
        found = []

        def check(name):
            def fn(_mod, _inp, out):
                if not found and torch.is_tensor(out) and not torch.isfinite(out).all():
                    found.append(name)
            return fn

        handles = [m.register_forward_hook(check(n)) for n, m in self.named_modules() if n]
        try:
            with torch.no_grad():
                self.run(z, t, prompts, cam)
        finally:
            for h in handles:
                h.remove()
        return found[0] if found else None
