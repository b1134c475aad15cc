"""Round-robin pairwise judging and per-criterion Elo."""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from ..seeding import numpy_rng
from .elo import DisconnectedComparisonsError, EloTable, compute_elo
from .grid import build_comparison_grid
from .judges import JudgeError
from .verdicts import ComparisonRecord, VerdictParseError, parse_judge_verdict

log = logging.getLogger(__name__)

DEFAULT_PAIRS = 120


@dataclass
class TournamentResult:
    records: list
    table: EloTable
    report: dict


def schedule_pairings(methods, prompt_ids, pairs: int, seed: int) -> list[tuple[str, str, str]]:
    """(left, right, prompt_id) triples: unordered pairs cycled round-robin, sides randomized."""
    combos = list(itertools.combinations(methods, 2))
    if pairs < len(combos):
        raise ValueError(f"pairs={pairs} cannot cover {len(combos)} method pairs")
    rng = numpy_rng(seed, "tournament")
    out = []
    for j in range(pairs):
        a, b = combos[j % len(combos)]
        pid = prompt_ids[(j // len(combos)) % len(prompt_ids)]
        if rng.random() < 0.5:
            a, b = b, a
        out.append((a, b, pid))
    return out


def run_tournament(methods: dict, prompts: dict, styles: dict, judge, pairs: int = DEFAULT_PAIRS,
                   *, seed: int = 0, anchor: str | None = None, retries: int = 2,
                   max_in_flight: int = 4, cell: int | None = None) -> TournamentResult:
    """Judge ``pairs`` pairings and fit Elo ratings.

    ``methods[name][prompt_id]`` is a list of (rgb, normal_rgb) views;
    ``prompts[prompt_id]`` the text and ``styles[prompt_id]`` the style image.
    Failed pairings are retried ``retries`` times and then listed as skipped.
    """
    names = list(methods)
    if len(names) < 2:
        raise ValueError("need at least two methods")
    anchor = anchor or names[0]
    prompt_ids = list(prompts)
    jobs = schedule_pairings(names, prompt_ids, pairs, seed)

    def judge_one(job):
        left, right, pid = job
        grid = build_comparison_grid(methods[left][pid], methods[right][pid], styles[pid], cell)
        last = None
        for _ in range(retries + 1):
            try:
                verdicts = parse_judge_verdict(judge.compare(grid, prompts[pid]))
                return ComparisonRecord(left, right, pid, tuple(verdicts)), None
            except (JudgeError, VerdictParseError) as exc:
                last = f"{type(exc).__name__}: {exc}"
                log.warning("judge failed on %s vs %s (%s): %s", left, right, pid, last)
        return None, last

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        outcomes = list(pool.map(judge_one, jobs))
    records, skipped = [], []
    for (left, right, pid), (rec, err) in zip(jobs, outcomes):
        if rec is None:
            skipped.append({"left": left, "right": right, "prompt_id": pid, "error": err})
        else:
            records.append(rec)
    if not records:
        raise JudgeError(f"every pairing failed ({len(skipped)} skipped); nothing to rate")
    try:
        table = compute_elo(records, anchor, methods=tuple(names))
    except DisconnectedComparisonsError as exc:
        if not skipped:
            raise
        raise JudgeError(f"skipped pairings left the comparison graph disconnected: {exc}") from exc
    report = {
        "judge": getattr(judge, "kind", type(judge).__name__),
        "seed": seed,
        "pairs_requested": pairs,
        "pairs_completed": len(records),
        "skipped": skipped,
        "elo": table.to_dict(),
        "records": [r.to_dict() for r in records],
    }
    return TournamentResult(records, table, report)
