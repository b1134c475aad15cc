"""Denoiser stand-ins with scripted outputs for exact residual checks."""

from __future__ import annotations

import contextlib

import torch

from styledistill.diffusion.schedule import NoiseSchedule
from styledistill.diffusion.unet import HookStateError
from styledistill.diffusion.vocab import PromptEmbedding

LAYER = "stub"


class ScriptedDenoiser:
    """Returns ``plain[text]`` normally and ``styled[text]`` while K/V are swapped.

    Values are tensors shaped like the data (C, H, W). ``calls`` logs
    (text, swapped) for every forward pass; ``raise_plain`` makes unmodified
    passes fail so tests can prove a branch is never evaluated.
    """

    attention_layer_ids = (LAYER,)

    def __init__(self, plain: dict, styled: dict | None = None, sched: NoiseSchedule | None = None,
                 unit_weight: bool = False):
        self.plain = plain
        self.styled = styled or {}
        self.schedule = sched or NoiseSchedule()
        if unit_weight:
            self.schedule = NoiseSchedule(weighting="constant")
        self._hook = None
        self.calls = []
        self.raise_plain = False
        self.raise_styled = False
        self._ids = {k: i + 2 for i, k in enumerate(sorted(set(plain) | set(self.styled)))}

    def embed_prompt(self, text="", kind="content", placeholder=None):
        if kind == "content" and text == "":
            kind = "empty"
        return PromptEmbedding((self._ids.get(text, 1),), torch.zeros(1, 1), kind, text)

    def empty_prompt(self):
        return self.embed_prompt("", kind="empty")

    @property
    def hooks_active(self):
        return self._hook is not None

    @contextlib.contextmanager
    def _hooked(self, hook):
        if self._hook is not None:
            raise HookStateError("busy")
        self._hook = hook
        try:
            yield
        finally:
            self._hook = None

    @contextlib.contextmanager
    def capture_attention(self, layers=None):
        sink = {}
        with self._hooked(("capture", sink)):
            yield sink

    @contextlib.contextmanager
    def swap_attention(self, kv):
        with self._hooked(("replace", kv)):
            yield

    def run(self, z, t, prompts, cam=None):
        text = prompts.text if isinstance(prompts, PromptEmbedding) else prompts[0].text
        swapped = self._hook is not None and self._hook[0] == "replace"
        if self._hook is not None and self._hook[0] == "capture":
            self._hook[1][LAYER] = (torch.zeros(1), torch.zeros(1))
            self.calls.append((text, "capture"))
            return torch.zeros_like(z)
        self.calls.append((text, swapped))
        if swapped and self.raise_styled:
            raise AssertionError("styled branch evaluated")
        if not swapped and self.raise_plain:
            raise AssertionError("unmodified branch evaluated")
        table = self.styled if swapped else self.plain
        return table[text].to(z.dtype).expand_as(z).clone()


class NoiseEchoDenoiser(ScriptedDenoiser):
    """Predicts exactly the noise that was added to a known clean input ``x``."""

    def __init__(self, x: torch.Tensor, sched: NoiseSchedule | None = None):
        super().__init__({}, {}, sched)
        self.x = x

    def run(self, z, t, prompts, cam=None):
        if self._hook is not None and self._hook[0] == "capture":
            self._hook[1][LAYER] = (torch.zeros(1), torch.zeros(1))
            return torch.zeros_like(z)
        a, s = self.schedule.alpha(int(t)), self.schedule.sigma(int(t))
        return (z - a * self.x) / s
