"""Learning a placeholder token embedding that reproduces a style image."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from ..diffusion.core import denoising_loss, to_model_space
from ..diffusion.vocab import PLACEHOLDER, STYLES, split_words
from ..seeding import param_checksum, torch_generator
from ..style.injection import image_hash


class InversionDivergedError(RuntimeError):
    def __init__(self, history):
        self.history = list(history)
        super().__init__(f"textual inversion diverged after {len(self.history)} steps")


@dataclass
class InvertedToken:
    embedding: torch.Tensor  # (D,)
    source_hash: str
    steps: int
    final_loss: float
    init_word: str | None = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not torch.isfinite(self.embedding).all():
            raise ValueError("inverted token embedding must be finite")

    def prompt(self, d, text: str = PLACEHOLDER):
        """A PromptEmbedding whose ``<h>`` token is this vector."""
        return d.embed_prompt(text, kind="style", placeholder=self.embedding)


def initial_embedding(d, caption: str = "") -> tuple[torch.Tensor, str | None]:
    """Embedding of the first style word in ``caption``, else zeros."""
    for w in split_words(caption):
        if w in STYLES:
            idx = d.vocab.encode(w)[0]
            return d.token_embedding.weight[idx].detach().clone(), w
    return torch.zeros(d.token_embedding.embedding_dim), None


def textual_inversion(d, s: torch.Tensor, steps: int = 200, seed: int = 0, *, caption: str = "",
                      lr: float = 5e-2, batch_size: int = 8) -> InvertedToken:
    """Optimize only the ``<h>`` vector against the denoising loss on ``s`` ((3, H, W) in [0, 1])."""
    h0, word = initial_embedding(d, caption)
    if steps == 0:
        return InvertedToken(h0, image_hash(s), 0, float("nan"), word)
    before = param_checksum(d)
    frozen = [p.requires_grad for p in d.parameters()]
    for p in d.parameters():
        p.requires_grad_(False)
    g = torch_generator(seed, "textual-inversion")
    h = h0.clone().requires_grad_(True)
    opt = torch.optim.Adam([h], lr=lr)
    x = to_model_space(s)[None].expand(batch_size, -1, -1, -1).contiguous()
    sched = d.schedule
    history = []
    try:
        for _ in range(steps):
            prompt = d.embed_prompt(PLACEHOLDER, kind="style", placeholder=h)
            t = torch.randint(1, sched.T + 1, (batch_size,), generator=g)
            eps = torch.randn(x.shape, generator=g)
            loss = denoising_loss(d, sched, x, [prompt] * batch_size, t, eps).mean()
            if not math.isfinite(loss.item()):
                raise InversionDivergedError(history + [loss.item()])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            history.append(loss.item())
    finally:
        for p, flag in zip(d.parameters(), frozen):
            p.requires_grad_(flag)
    if param_checksum(d) != before:
        raise RuntimeError("denoiser parameters changed during textual inversion")
    tail = history[-20:]
    return InvertedToken(h.detach().clone(), image_hash(s), steps, sum(tail) / len(tail),
                         word, history)
