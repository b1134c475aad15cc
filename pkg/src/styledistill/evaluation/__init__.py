"""Comparison grids, judging, Elo ratings and direct metrics."""

from .elo import DisconnectedComparisonsError, EloTable, compute_elo
from .grid import build_comparison_grid, split_comparison_grid
from .judges import (ExternalJudge, JudgeError, MockMetricJudge, fill_template, judge_template,
                     make_judge)
from .metrics import (EmptyForegroundWarning, silhouette_consistency, style_alignment_metric,
                      template_silhouette)
from .report import write_report
from .tournament import TournamentResult, run_tournament, schedule_pairings
from .verdicts import (CRITERIA, ComparisonRecord, VerdictParseError, format_verdicts,
                       parse_judge_verdict)
