"""Scene checkpoints and turntable exports."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .camera import orbit_cameras
from .scenes import Canvas2D, RadianceGrid
from .volume import render


def to_uint8(img: torch.Tensor) -> np.ndarray:
    """(3, H, W) float in [0, 1] -> (H, W, 3) uint8."""
    return (img.detach().clamp(0, 1).permute(1, 2, 0).cpu().numpy() * 255).round().astype(np.uint8)


def save_png(img: torch.Tensor, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path)
    return path


def load_png(path, size: int | None = None) -> torch.Tensor:
    im = Image.open(path).convert("RGB")
    if size is not None and im.size != (size, size):
        im = im.resize((size, size), Image.BILINEAR)
    arr = np.asarray(im, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def save_scene(scene, path, iteration: int = 0, **meta) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {"format": "styledistill.scene/1", "mode": scene.mode,
            "resolution": scene.resolution, "iteration": iteration,
            "state_dict": scene.state_dict(), "meta": meta}
    if isinstance(scene, RadianceGrid):
        blob["extent"] = scene.extent
    torch.save(blob, path)
    return path


def load_scene(path):
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    if blob.get("format") != "styledistill.scene/1":
        raise ValueError(f"{path} is not a scene checkpoint")
    if blob["mode"] == "canvas2d":
        scene = Canvas2D(blob["resolution"])
    else:
        scene = RadianceGrid(blob["resolution"], blob.get("extent", 1.0))
    scene.load_state_dict(blob["state_dict"])
    return scene, blob


def export_turntable(scene: RadianceGrid, out_dir, n_views: int = 8, resolution: int = 64,
                     elevation: float = 15.0, gif: bool = True) -> Path:
    """Render ``n_views`` orbit views into ``turntable.png`` (a strip) and optionally a GIF."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        frames = [to_uint8(render(scene, c)) for c in
                  orbit_cameras(n_views, elevation=elevation, resolution=resolution)]
    strip = out / "turntable.png"
    Image.fromarray(np.concatenate(frames, axis=1)).save(strip)
    if gif:
        ims = [Image.fromarray(f) for f in frames]
        ims[0].save(out / "turntable.gif", save_all=True, append_images=ims[1:], duration=120, loop=0)
    return strip
