"""Tournament report files: JSON, a markdown table and a bar chart."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .elo import EloTable  # noqa: E402


def markdown_table(table: EloTable) -> str:
    head = "| Methods | " + " | ".join(table.criteria) + " |"
    sep = "|" + "---|" * (len(table.criteria) + 1)
    rows = []
    for m in table.methods:
        best = [max(table.ratings[x][c] for x in table.methods) for c in table.criteria]
        cells = []
        for c, b in zip(table.criteria, best):
            v = f"{table.ratings[m][c]:.3f}"
            cells.append(f"**{v}**" if table.ratings[m][c] == b and m != table.anchor else v)
        rows.append(f"| {m} | " + " | ".join(cells) + " |")
    return "\n".join([head, sep, *rows]) + "\n"


def plot_elo(table: EloTable, path) -> Path:
    fig, ax = plt.subplots(figsize=(10, 4))
    width = 0.8 / len(table.methods)
    x = np.arange(len(table.criteria))
    for i, m in enumerate(table.methods):
        ax.bar(x + i * width, [table.ratings[m][c] for c in table.criteria], width, label=m)
    ax.axhline(1000.0, color="k", lw=0.8, ls="--")
    ax.set_xticks(x + width * (len(table.methods) - 1) / 2)
    ax.set_xticklabels(table.criteria, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("Elo")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_report(report: dict, table: EloTable, out_dir, figure: bool = True) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "report.json", "markdown": out / "report.md"}
    paths["json"].write_text(json.dumps(report, indent=2, sort_keys=True))
    md = [f"# Pairwise evaluation ({report['pairs_completed']}/{report['pairs_requested']} pairings)",
          "", f"Anchor: {table.anchor} (fixed at 1000)", "", markdown_table(table)]
    if report.get("skipped"):
        md.append(f"Skipped pairings: {len(report['skipped'])}\n")
    paths["markdown"].write_text("\n".join(md))
    if figure:
        paths["figure"] = plot_elo(table, out / "elo.png")
    return paths
