"""Closed vocabulary and prompt embeddings for the toy text encoder."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import torch

EMPTY = "<empty>"
PAD = "<pad>"
PLACEHOLDER = "<h>"

SHAPES = ("sphere", "cube", "cone", "car")
STYLES = ("red", "blue", "green", "yellow", "stripes", "dots", "fire")
NEGATIVE_WORDS = ("unrealistic", "blurry", "low", "quality")
FILLER_WORDS = ("a", "toy", "in", "the", "style", "of", "on", "black", "background")
# Present so prompt templates from the literature tokenize; never seen in training.
EXTRA_WORDS = ("golden", "ironman")

NEGATIVE_PROMPT = "unrealistic, blurry, low quality"

PROMPT_KINDS = ("content", "style", "empty", "negative", "augmented")


class UnknownTokenError(KeyError):
    """Raised when a prompt contains words outside the closed vocabulary."""

    def __init__(self, words):
        self.words = list(words)
        super().__init__(f"out-of-vocabulary tokens: {', '.join(self.words)}")


def split_words(text: str) -> list[str]:
    return [w for w in re.split(r"[\s,]+", text.strip().lower()) if w]


class Vocabulary:
    """Word <-> id mapping. Id 0 is padding, id 1 the reserved empty prompt."""

    def __init__(self, words=None):
        if words is None:
            words = [PAD, EMPTY, PLACEHOLDER, *SHAPES, *STYLES, *NEGATIVE_WORDS,
                     *FILLER_WORDS, *EXTRA_WORDS]
        self.words = list(words)
        if self.words[:2] != [PAD, EMPTY]:
            raise ValueError("vocabulary must start with <pad>, <empty>")
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate vocabulary entries")

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def empty_id(self) -> int:
        return 1

    @property
    def placeholder_id(self) -> int:
        return self.index[PLACEHOLDER]

    def encode(self, text: str) -> tuple[int, ...]:
        """Token ids for ``text``. The empty string maps to the reserved ∅ sequence."""
        words = split_words(text)
        if not words:
            return (self.empty_id,)
        missing = [w for w in words if w not in self.index]
        if missing:
            raise UnknownTokenError(missing)
        return tuple(self.index[w] for w in words)

    def decode(self, ids) -> str:
        return " ".join(self.words[i] for i in ids if i != self.pad_id)


@dataclass(frozen=True)
class PromptEmbedding:
    """Token ids plus their embedding vectors, shape (len(tokens), dim)."""

    tokens: tuple[int, ...]
    embedding: torch.Tensor = field(repr=False)
    kind: str = "content"
    text: str = ""

    def __post_init__(self):
        if self.embedding.dim() != 2 or self.embedding.shape[0] != len(self.tokens):
            raise ValueError(
                f"embedding shape {tuple(self.embedding.shape)} does not match "
                f"{len(self.tokens)} tokens")
        if self.kind not in PROMPT_KINDS:
            raise ValueError(f"unknown prompt kind {self.kind!r}")

    def __len__(self):
        return len(self.tokens)

    @property
    def is_empty(self) -> bool:
        return self.tokens == (1,)


def pack_prompts(prompts, max_len: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack prompt embeddings into (B, max_len, D) plus a boolean validity mask."""
    dim = prompts[0].embedding.shape[1]
    dtype = prompts[0].embedding.dtype
    ctx = torch.zeros(len(prompts), max_len, dim, dtype=dtype)
    mask = torch.zeros(len(prompts), max_len, dtype=torch.bool)
    for i, p in enumerate(prompts):
        n = len(p)
        if n > max_len:
            raise ValueError(f"prompt {p.text!r} has {n} tokens, limit is {max_len}")
        ctx[i, :n] = p.embedding
        mask[i, :n] = True
    return ctx, mask
