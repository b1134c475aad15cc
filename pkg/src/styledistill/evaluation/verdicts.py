"""Judge output format: seven per-criterion decisions on one pairwise comparison."""

from __future__ import annotations

import re
from dataclasses import dataclass

CRITERIA = ("Text-Asset Alignment", "3D Plausibility", "Text-Geometry Alignment",
            "Texture Details", "Geometry Details", "Style Alignment", "Overall")
STYLE_CRITERION = 5  # zero-based index of the style criterion
VERDICTS = ("left", "right", "tie")
_CODE = {"1": "left", "2": "right", "3": "tie"}
_DIGIT = {v: k for k, v in _CODE.items()}
MARKER = "Final answer:"


class VerdictParseError(ValueError):
    def __init__(self, message: str, raw: str):
        self.raw = raw
        super().__init__(message)


@dataclass(frozen=True)
class ComparisonRecord:
    left: str
    right: str
    prompt_id: str
    verdicts: tuple

    def __post_init__(self):
        if len(self.verdicts) != len(CRITERIA):
            raise ValueError(f"expected {len(CRITERIA)} verdicts, got {len(self.verdicts)}")
        bad = [v for v in self.verdicts if v not in VERDICTS]
        if bad:
            raise ValueError(f"invalid verdicts {bad}")
        if self.left == self.right:
            raise ValueError("a comparison needs two different methods")
        object.__setattr__(self, "verdicts", tuple(self.verdicts))

    def swapped(self) -> "ComparisonRecord":
        flip = {"left": "right", "right": "left", "tie": "tie"}
        return ComparisonRecord(self.right, self.left, self.prompt_id,
                                tuple(flip[v] for v in self.verdicts))

    def to_dict(self) -> dict:
        return {"left": self.left, "right": self.right, "prompt_id": self.prompt_id,
                "verdicts": list(self.verdicts)}


def parse_judge_verdict(response: str) -> list[str]:
    """Read the seven codes (1 left, 2 right, 3 tie) after the last final-answer marker."""
    pos = response.rfind(MARKER)
    if pos < 0:
        raise VerdictParseError("no final-answer line in judge response", response)
    tail = response[pos + len(MARKER):]
    line = next((ln for ln in tail.splitlines() if ln.strip()), "")
    m = re.match(r"\s*([123](?:[ \t]+[123])*)\b", line)
    codes = m.group(1).split() if m else []
    if len(codes) != len(CRITERIA):
        raise VerdictParseError(f"expected {len(CRITERIA)} decisions, found {len(codes)}", response)
    return [_CODE[c] for c in codes]


def format_verdicts(verdicts) -> str:
    if len(verdicts) != len(CRITERIA):
        raise ValueError(f"expected {len(CRITERIA)} verdicts")
    return f"{MARKER}\n" + " ".join(_DIGIT[v] for v in verdicts)
