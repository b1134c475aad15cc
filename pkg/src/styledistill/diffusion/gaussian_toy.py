"""Gaussian data with closed-form noise predictors, for checking distillation math.

For data x ~ N(mu, s^2) and z_t = alpha x + sigma eps, the optimal noise
prediction is linear in z_t: E[eps | z_t] = a_t z_t + b_t with
a_t = sigma / v, b_t = -sigma alpha mu / v and v = alpha^2 s^2 + sigma^2.
Each prompt owns a table of (a_t, b_t). These tables play the role of the
self-attention K/V: capturing records them for the prompt being run and
swapping substitutes them, which mirrors the real denoiser's hook API.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
import torch

from ..seeding import numpy_rng
from .schedule import NoiseSchedule
from .unet import HookStateError
from .vocab import PromptEmbedding

LAYER = "linear"


def gaussian_coefficients(sched: NoiseSchedule, mu: float, s: float) -> torch.Tensor:
    """(T + 1, 2) table of (a_t, b_t) for N(mu, s^2) data."""
    a, sg = sched.alphas, sched.sigmas
    v = a**2 * s**2 + sg**2
    return torch.stack([sg / v, -sg * a * mu / v], 1)


def fit_coefficients(sched: NoiseSchedule, samples: np.ndarray, n_noise: int = 1, seed: int = 0,
                     ts=None) -> torch.Tensor:
    """Least-squares fit of eps ~ a_t z_t + b_t from data samples, per timestep."""
    rng = numpy_rng(seed, "gaussian-fit")
    table = torch.zeros(sched.T + 1, 2, dtype=torch.float64)
    x = np.repeat(np.asarray(samples, dtype=np.float64), n_noise)
    for t in (range(1, sched.T + 1) if ts is None else ts):
        eps = rng.standard_normal(x.shape)
        z = sched.alpha(t) * x + sched.sigma(t) * eps
        A = np.stack([z, np.ones_like(z)], 1)
        coef, *_ = np.linalg.lstsq(A, eps, rcond=None)
        table[t] = torch.from_numpy(coef)
    return table


class GaussianToyDenoiser:
    """Denoiser-compatible noise predictor over scalar data shaped (B, 1, 1, 1).

    ``tables`` maps prompt text ("" is the unconditional prompt) to its
    (T + 1, 2) coefficient table.
    """

    attention_layer_ids = (LAYER,)

    def __init__(self, sched: NoiseSchedule, tables: dict):
        if "" not in tables:
            raise ValueError("an unconditional table (key '') is required")
        self.schedule = sched
        self.tables = {k: v.to(torch.float64) for k, v in tables.items()}
        self._names = {k: i for i, k in enumerate(sorted(self.tables))}
        self._hook = None
        self.calls = 0

    @classmethod
    def analytic(cls, sched: NoiseSchedule, params: dict) -> "GaussianToyDenoiser":
        """``params[text] = (mu, s)``."""
        return cls(sched, {k: gaussian_coefficients(sched, *p) for k, p in params.items()})

    @classmethod
    def trained(cls, sched: NoiseSchedule, data: dict, seed: int = 0, n_noise: int = 1):
        """``data[text]`` is an array of samples; coefficients fit by regression."""
        return cls(sched, {k: fit_coefficients(sched, v, n_noise, seed) for k, v in data.items()})

    # Denoiser interface ---------------------------------------------------
    def embed_prompt(self, text: str = "", kind: str = "content", placeholder=None) -> PromptEmbedding:
        if text not in self.tables:
            raise KeyError(f"no distribution for prompt {text!r}")
        if kind == "content" and text == "":
            kind = "empty"
        return PromptEmbedding(tokens=(self._names[text] + 1,), embedding=torch.zeros(1, 1),
                               kind=kind, text=text)

    def empty_prompt(self) -> PromptEmbedding:
        return self.embed_prompt("", kind="empty")

    @property
    def hooks_active(self) -> bool:
        return self._hook is not None

    @contextlib.contextmanager
    def _hooked(self, hook):
        if self._hook is not None:
            raise HookStateError("hooks already active")
        self._hook = hook
        try:
            yield
        finally:
            self._hook = None

    @contextlib.contextmanager
    def capture_attention(self, layers=None):
        sink: dict = {}
        with self._hooked(("capture", sink)):
            yield sink

    @contextlib.contextmanager
    def swap_attention(self, kv: dict):
        if set(kv) - {LAYER}:
            raise KeyError(f"unknown layers {sorted(set(kv) - {LAYER})}")
        with self._hooked(("replace", kv[LAYER])):
            yield

    def run(self, z: torch.Tensor, t, prompts, cam=None) -> torch.Tensor:
        self.calls += 1
        text = prompts.text if isinstance(prompts, PromptEmbedding) else prompts[0].text
        table = self.tables[text]
        if self._hook is not None and self._hook[0] == "capture":
            self._hook[1][LAYER] = (table, table)
        elif self._hook is not None:
            table = self._hook[1][0]
        a, b = table[int(t)]
        return (a * z.to(torch.float64) + b).to(z.dtype)


def expected_sds_direction(sched: NoiseSchedule, theta: float, mu: float, s: float, ts) -> float:
    """Mean over ``ts`` of omega(t) E_eps[eps_hat(z_t) - eps] for a point-mass render at theta."""
    vals = []
    for t in ts:
        a, sg = sched.alpha(t), sched.sigma(t)
        v = a * a * s * s + sg * sg
        vals.append(sched.omega(t) * sg * a * (theta - mu) / v)
    return float(np.mean(vals))


def kl_point_render(sched: NoiseSchedule, t: int, theta: float, mu: float, s: float) -> float:
    """KL(N(alpha theta, sigma^2) || N(alpha mu, alpha^2 s^2 + sigma^2))."""
    a, sg = sched.alpha(t), sched.sigma(t)
    v = a * a * s * s + sg * sg
    return 0.5 * math.log(v / (sg * sg)) + (sg * sg + a * a * (theta - mu) ** 2) / (2 * v) - 0.5
