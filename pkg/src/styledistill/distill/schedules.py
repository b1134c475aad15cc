"""Style-ratio schedules lambda(k) over K optimization iterations."""

from __future__ import annotations

import math
from dataclasses import dataclass

KINDS = ("constant", "sqrt", "quad")


@dataclass(frozen=True)
class StyleRatioSchedule:
    kind: str = "sqrt"
    lambda_max: float = 0.6

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"schedule kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.lambda_max <= 1.0:
            raise ValueError(f"lambda_max must lie in [0, 1], got {self.lambda_max}")

    def __call__(self, k: int, K: int) -> float:
        return schedule_lambda(self, k, K)


def schedule_lambda(s: StyleRatioSchedule, k: int, K: int) -> float:
    """constant: lambda_max; sqrt: lambda_max sqrt(k/K); quad: lambda_max (k/K)^2."""
    if K <= 0:
        raise ValueError("total iterations K must be positive")
    if not 0 <= k <= K:
        raise ValueError(f"iteration {k} outside [0, {K}]")
    if s.kind == "constant":
        return s.lambda_max
    r = k / K
    if s.kind == "sqrt":
        return s.lambda_max * math.sqrt(r)
    return s.lambda_max * r * r
