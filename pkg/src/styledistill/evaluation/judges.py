"""Pluggable judges for pairwise comparison grids."""

from __future__ import annotations

import base64
import hashlib
import io
import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from .grid import split_comparison_grid
from .metrics import iou, prompt_shape, silhouette_consistency, style_alignment_metric
from .verdicts import CRITERIA, format_verdicts

JUDGE_KINDS = ("mock-metric", "external-llm")


class JudgeError(RuntimeError):
    pass


def judge_template() -> str:
    return resources.files(__package__).joinpath("resources/judge_prompt.txt").read_text()


def fill_template(prompt: str, template: str | None = None) -> str:
    return (template or judge_template()).replace("<PROMPT>", prompt)


def foreground_from_normals(normal_rgb: torch.Tensor, tol: float = 1e-3) -> torch.Tensor:
    """Pixels whose normal color differs from the neutral background gray."""
    return ((normal_rgb - 0.5).abs() > tol).any(0)


def _side_scores(views, style, prompt) -> list[float]:
    fgs = [foreground_from_normals(n) for _, n in views]
    areas = np.array([float(m.float().mean()) for m in fgs])
    shape = prompt_shape(prompt)
    text_asset = silhouette_consistency(fgs, shape) if shape else float(areas.mean() > 0)
    plaus = 0.0 if areas.mean() == 0 else 1.0 - float(areas.std() / areas.mean())
    rgb_fg = [((rgb - 0.5).abs() > 0.02).any(0) for rgb, _ in views]
    text_geom = float(np.mean([iou(a, b) for a, b in zip(rgb_fg, fgs)]))

    def local_var(img, m):
        dx = (img[:, :, 1:] - img[:, :, :-1]).abs().mean(0)
        dy = (img[:, 1:, :] - img[:, :-1, :]).abs().mean(0)
        sel = torch.cat([dx[m[:, 1:] & m[:, :-1]], dy[m[1:, :] & m[:-1, :]]])
        return float(sel.mean()) if sel.numel() else 0.0

    tex = float(np.mean([local_var(rgb, m) for (rgb, _), m in zip(views, fgs)]))
    geo = -float(np.mean([local_var(n, m) for (_, n), m in zip(views, fgs)]))
    rgb_all = torch.cat([rgb for rgb, _ in views], -1)
    fg_all = torch.cat(fgs, -1)
    style_score = style_alignment_metric(rgb_all, style, fg_all) if fg_all.any() else 0.0
    return [text_asset, plaus, text_geom, tex, geo, style_score]


@dataclass
class MockMetricJudge:
    """Deterministic judge that decides each criterion from image statistics.

    Symmetric by construction: swapping the two assets swaps every decision.
    The style criterion compares style_alignment_metric of the foregrounds.
    """

    cell: int = 32
    tol: float = 1e-9
    kind: str = "mock-metric"

    def compare(self, grid: torch.Tensor, prompt: str) -> str:
        va, vb, style = split_comparison_grid(grid, self.cell)
        sa, sb = _side_scores(va, style, prompt), _side_scores(vb, style, prompt)
        verdicts, lines, votes = [], ["Analysis:"], 0
        for i, (a, b) in enumerate(zip(sa, sb)):
            v = "tie" if abs(a - b) <= self.tol else ("left" if a > b else "right")
            votes += {"left": 1, "right": -1, "tie": 0}[v]
            verdicts.append(v)
            lines.append(f"{i + 1}. {CRITERIA[i]}: left {a:.4f}, right {b:.4f}.")
        verdicts.append("tie" if votes == 0 else ("left" if votes > 0 else "right"))
        lines.append(f"7. {CRITERIA[6]}: majority of the above ({votes:+d}).")
        return "\n".join(lines) + "\n\n" + format_verdicts(verdicts)


def encode_image(img: torch.Tensor) -> str:
    from PIL import Image

    from ..render.io import to_uint8

    buf = io.BytesIO()
    Image.fromarray(to_uint8(img)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


@dataclass
class ExternalJudge:
    """HTTP judge: POST {prompt, image (base64 PNG)} -> {text}.

    The API key is read from the environment variable ``api_key_env``. Every
    request and response is written to ``transcript_dir`` when given.
    """

    endpoint: str
    api_key_env: str = "STYLEDISTILL_JUDGE_API_KEY"
    timeout: float = 60.0
    template: str | None = None
    transcript_dir: str | None = None
    transport: object = None  # callable(payload, headers) -> dict, for tests
    kind: str = "external-llm"

    def compare(self, grid: torch.Tensor, prompt: str) -> str:
        payload = {"prompt": fill_template(prompt, self.template), "image": encode_image(grid)}
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        status, text = "ok", None
        try:
            reply = (self.transport or self._post)(payload, headers)
            text = reply.get("text") if isinstance(reply, dict) else None
            if not text:
                status = "empty reply"
        except (urllib.error.URLError, OSError, ValueError) as exc:
            status = f"{type(exc).__name__}: {exc}"
        self._record(payload, text, status)
        if text is None or status != "ok":
            raise JudgeError(f"external judge failed: {status}")
        return text

    def _post(self, payload, headers) -> dict:
        req = urllib.request.Request(self.endpoint, data=json.dumps(payload).encode(),
                                     headers=headers, method="POST")
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode())

    def _record(self, payload, text, status):
        if not self.transcript_dir:
            return
        d = Path(self.transcript_dir)
        d.mkdir(parents=True, exist_ok=True)
        digest = hashlib.sha256((payload["prompt"] + payload["image"]).encode()).hexdigest()[:16]
        n = len(list(d.glob("*.json")))
        (d / f"{n:05d}_{digest}.json").write_text(json.dumps(
            {"request": {"prompt": payload["prompt"], "image_sha": digest}, "response": text,
             "status": status}, indent=2))


def make_judge(kind: str, **kw):
    if kind == "mock-metric":
        return MockMetricJudge(**kw)
    if kind == "external-llm":
        return ExternalJudge(**kw)
    raise ValueError(f"judge kind must be one of {JUDGE_KINDS}")
