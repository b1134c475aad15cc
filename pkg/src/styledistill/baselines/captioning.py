"""Captions for style images: a manual string or an external HTTP captioner."""

from __future__ import annotations

import base64
import io
import json
import logging
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Callable

import torch

log = logging.getLogger(__name__)

PROVIDERS = ("manual", "external")


class CaptionError(RuntimeError):
    pass


@dataclass
class CaptionerConfig:
    endpoint: str = ""
    api_key: str = ""
    timeout: float = 10.0
    retries: int = 2


def encode_png(image: torch.Tensor) -> str:
    from PIL import Image

    from ..render.io import to_uint8

    buf = io.BytesIO()
    Image.fromarray(to_uint8(image)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def http_transport(cfg: CaptionerConfig) -> Callable[[dict], dict]:
    """POST JSON to ``cfg.endpoint`` and return the decoded JSON reply."""

    def send(payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        req = urllib.request.Request(cfg.endpoint, data=json.dumps(payload).encode(),
                                     headers=headers, method="POST")
        with urllib.request.urlopen(req, timeout=cfg.timeout) as resp:
            return json.loads(resp.read().decode())

    return send


def caption_style_image(s: torch.Tensor, provider: str = "manual", *, manual: str | None = None,
                        config: CaptionerConfig | None = None,
                        transport: Callable[[dict], dict] | None = None) -> str:
    """Caption for the style image ``s``.

    ``external`` sends ``{"image": <base64 png>}`` and expects ``{"caption": ...}``;
    on failure it falls back to ``manual`` when one is given.
    """
    if provider not in PROVIDERS:
        raise ValueError(f"provider must be one of {PROVIDERS}")
    if provider == "manual":
        if not manual or not manual.strip():
            raise CaptionError("manual caption provider needs a nonempty caption")
        return manual

    config = config or CaptionerConfig()
    if transport is None:
        if not config.endpoint:
            return _fallback(manual, "no captioner endpoint configured")
        transport = http_transport(config)
    payload = {"image": encode_png(s)}
    last = None
    for attempt in range(config.retries + 1):
        try:
            reply = transport(payload)
            text = str(reply.get("caption", "")).strip()
            if text:
                return text
            last = "empty caption in reply"
        except (urllib.error.URLError, OSError, ValueError, KeyError, AttributeError) as exc:
            last = f"{type(exc).__name__}: {exc}"
        log.warning("captioner attempt %d failed: %s", attempt + 1, last)
        if attempt < config.retries:
            time.sleep(min(0.5 * 2 ** attempt, 4.0))
    return _fallback(manual, last)


def _fallback(manual, reason) -> str:
    if manual and manual.strip():
        log.warning("external captioner unavailable (%s); using manual caption", reason)
        return manual
    raise CaptionError(f"external captioner unavailable ({reason}) and no manual caption")
