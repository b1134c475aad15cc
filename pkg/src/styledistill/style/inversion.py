"""Turning a real style image into a StyleReference."""

from __future__ import annotations

import warnings

import torch

from ..diffusion.core import to_image_space, to_model_space
from ..diffusion.sampling import ddim_invert, ddim_sample
from ..diffusion.schedule import ContractError
from .injection import StyleReference

MODES = ("ddim-inversion", "textual-inversion")


class ReconstructionWarning(UserWarning):
    pass


def reconstruct(d, trajectory: dict, prompt, steps: int) -> torch.Tensor:
    """Deterministically re-sample from the terminal latent of an inversion trajectory."""
    z_T = trajectory[max(trajectory)]
    return to_image_space(ddim_sample(d, prompt, z_T, steps=steps, guidance=1.0, clip=False))


def invert_style_image(d, image: torch.Tensor, mode: str = "ddim-inversion", *,
                       caption: str = "", steps: int | None = None, threshold: float = 0.05,
                       ti_steps: int = 200, seed: int = 0) -> StyleReference:
    """Build a StyleReference from ``image`` ((3, H, W) in [0, 1]).

    ``ddim-inversion`` records a deterministic latent trajectory (dense over all
    timesteps by default, so any distillation timestep is covered) and checks
    the round-trip error; ``info["reconstruction_mae"]`` holds it and a
    ReconstructionWarning is raised above ``threshold``.
    ``textual-inversion`` learns a token for the image and uses
    ``"<h>"`` as the style prompt.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    size = d.arch.image_size
    if image.dim() != 3 or tuple(image.shape) != (3, size, size):
        raise ContractError(f"style image must be (3, {size}, {size}), got {tuple(image.shape)}")

    if mode == "textual-inversion":
        from ..baselines.textual_inversion import textual_inversion

        tok = textual_inversion(d, image, steps=ti_steps, seed=seed, caption=caption)
        prompt = d.embed_prompt("<h>", kind="style", placeholder=tok.embedding)
        return StyleReference(image=image, origin="generated", style_prompt=prompt,
                              caption=caption, seed=seed,
                              info={"mode": mode, "token_final_loss": tok.final_loss})

    steps = steps or d.schedule.T
    prompt = d.embed_prompt(caption, kind="style") if caption else d.empty_prompt()
    x0 = to_model_space(image)[None]
    traj = ddim_invert(d, x0, prompt, steps=steps)
    recon = reconstruct(d, traj, prompt, steps)
    mae = float((recon[0] - image).abs().mean())
    if mae > threshold:
        warnings.warn(f"style inversion reconstruction error {mae:.4f} exceeds {threshold}",
                      ReconstructionWarning, stacklevel=2)
    return StyleReference(image=image, origin="inverted", style_prompt=prompt if caption else None,
                          trajectory=traj, caption=caption, seed=seed,
                          info={"mode": mode, "steps": steps, "reconstruction_mae": mae})


def save_style_reference(ref: StyleReference, path) -> None:
    """Persist into an experiment checkpoint file, keyed by the image content hash."""
    from pathlib import Path

    path = Path(path)
    blob = torch.load(path, weights_only=False) if path.exists() else {}
    blob.setdefault("style_references", {})[ref.key] = {
        "image": ref.image, "origin": ref.origin, "trajectory": ref.trajectory,
        "caption": ref.caption, "seed": ref.seed, "info": ref.info,
        "style_prompt": None if ref.style_prompt is None else {
            "tokens": ref.style_prompt.tokens, "embedding": ref.style_prompt.embedding,
            "kind": ref.style_prompt.kind, "text": ref.style_prompt.text},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, path)


def load_style_reference(path, key: str) -> StyleReference:
    from ..diffusion.vocab import PromptEmbedding

    blob = torch.load(path, weights_only=False)["style_references"][key]
    sp = blob.pop("style_prompt")
    prompt = PromptEmbedding(**sp) if sp else None
    return StyleReference(style_prompt=prompt, **blob)
