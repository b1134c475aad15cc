"""Variance-preserving cosine noise schedule over T discrete steps.

Convention: t=0 is clean data, t=T is (almost) pure noise, and
z_t = alpha_t * x + sigma_t * eps with alpha_t**2 + sigma_t**2 = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

# Noise-free domain-direction switch is at t < 200 for T = 1000.
DEFAULT_T_THRESHOLD_FRAC = 0.2
# Literal upper bound as printed for the SDS timestep range; kept selectable.
LITERAL_T_MAX_FRAC = 0.098


class ContractError(ValueError):
    """Precondition violated on a core operation."""


@dataclass(frozen=True)
class NoisySample:
    z_t: torch.Tensor
    t: int
    eps: torch.Tensor


class NoiseSchedule:
    """Cosine alpha-bar schedule (Nichol & Dhariwal) with float64 tables.

    ``weighting`` selects omega(t): ``"sigma2"`` (sigma_t**2) or ``"constant"``.
    """

    def __init__(self, num_steps: int = 1000, *, offset: float = 0.008,
                 min_alpha_bar: float = 1e-4, t_min_frac: float = 0.02,
                 t_max_frac: float = 0.98, weighting: str = "sigma2"):
        if num_steps < 1:
            raise ValueError("num_steps must be positive")
        if not 0.0 <= t_min_frac < t_max_frac <= 1.0:
            raise ValueError(f"bad timestep range [{t_min_frac}, {t_max_frac}]")
        if weighting not in ("sigma2", "constant"):
            raise ValueError(f"unknown weighting {weighting!r}")
        self.num_steps = int(num_steps)
        self.offset = offset
        self.min_alpha_bar = min_alpha_bar
        self.t_min_frac = t_min_frac
        self.t_max_frac = t_max_frac
        self.weighting = weighting

        s = torch.arange(num_steps + 1, dtype=torch.float64) / num_steps
        f = torch.cos((s + offset) / (1 + offset) * math.pi / 2) ** 2
        alpha_bar = (f / f[0]).clamp(min=min_alpha_bar, max=1.0)
        alpha_bar[0] = 1.0
        self.alpha_bar = alpha_bar
        self.alphas = alpha_bar.sqrt()
        self.sigmas = (1.0 - alpha_bar).clamp(min=0.0).sqrt()

    @property
    def T(self) -> int:
        return self.num_steps

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 0 <= t <= self.num_steps:
            raise ContractError(f"timestep {t} outside [0, {self.num_steps}]")
        return t

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check_t(t)])

    def sigma(self, t: int) -> float:
        return float(self.sigmas[self._check_t(t)])

    def omega(self, t: int) -> float:
        if self.weighting == "constant":
            return 1.0
        return self.sigma(t) ** 2

    def t_range(self) -> tuple[int, int]:
        lo = max(1, int(round(self.t_min_frac * self.num_steps)))
        hi = max(lo, int(round(self.t_max_frac * self.num_steps)))
        return lo, hi

    def sample_t(self, generator: torch.Generator | None = None) -> int:
        """Uniform integer timestep in the distillation range (inclusive)."""
        lo, hi = self.t_range()
        return int(torch.randint(lo, hi + 1, (1,), generator=generator).item())

    def add_noise(self, x: torch.Tensor, t: int, eps: torch.Tensor) -> NoisySample:
        if x.shape != eps.shape:
            raise ContractError(f"noise shape {tuple(eps.shape)} != data shape {tuple(x.shape)}")
        if not torch.isfinite(x).all():
            raise ContractError("non-finite values in x")
        t = self._check_t(t)
        z = self.alpha(t) * x + self.sigma(t) * eps
        return NoisySample(z_t=z, t=t, eps=eps)

    def to_dict(self) -> dict:
        return {"num_steps": self.num_steps, "offset": self.offset,
                "min_alpha_bar": self.min_alpha_bar, "t_min_frac": self.t_min_frac,
                "t_max_frac": self.t_max_frac, "weighting": self.weighting}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        d = dict(d)
        return cls(d.pop("num_steps"), **d)

    def with_range(self, t_min_frac: float, t_max_frac: float) -> "NoiseSchedule":
        d = self.to_dict()
        d.update(t_min_frac=t_min_frac, t_max_frac=t_max_frac)
        return NoiseSchedule.from_dict(d)


def add_noise(sched: NoiseSchedule, x: torch.Tensor, t: int, eps: torch.Tensor) -> NoisySample:
    return sched.add_noise(x, t, eps)
