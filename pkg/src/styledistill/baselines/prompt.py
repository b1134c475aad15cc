"""Style described in words and prepended to the prompt."""

from __future__ import annotations

from ..diffusion.vocab import UnknownTokenError, Vocabulary, split_words


def style_in_prompt(y: str, style_description: str, vocab: Vocabulary | None = None) -> str:
    """``"<style_description> <y>"``; every word must be in the vocabulary."""
    if not y or not y.strip():
        raise ValueError("content prompt must be nonempty")
    vocab = vocab or Vocabulary()
    words = split_words(style_description) + split_words(y)
    unknown = [w for w in words if w not in vocab]
    if unknown:
        raise UnknownTokenError(unknown)
    return " ".join(words)
