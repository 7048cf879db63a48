"""Matplotlib renderings of profile and comparison data.

Uses the Agg backend and strips the Software PNG comment so that the same
inputs always produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg", force=True)

import matplotlib.pyplot as plt

from .bench import ComparisonReport
from .cost import CostReport

_SAVE_KWARGS = {"metadata": {"Software": None}}


def comparison_figure(comparison: ComparisonReport, path: str) -> None:
    """Grouped before/after bars, one pair per metric, normalized so every
    before bar is 1.0."""
    b, a = comparison.before, comparison.after
    metrics = [
        ("exec cost", b.exec_cost_mean, a.exec_cost_mean),
        ("statements", b.stmt_count, a.stmt_count),
        ("PUTs", b.put_count, a.put_count),
        ("temps", b.temp_count, a.temp_count),
    ]
    labels = [m[0] for m in metrics]
    after_rel = [after / before if before else 1.0 for _, before, after in metrics]

    fig, ax = plt.subplots(figsize=(7.0, 4.0), dpi=120)
    xs = range(len(metrics))
    width = 0.38
    ax.bar([x - width / 2 for x in xs], [1.0] * len(metrics), width, label="before", color="#888888")
    ax.bar([x + width / 2 for x in xs], after_rel, width, label="after", color="#2b7bba")
    for x, rel in zip(xs, after_rel):
        ax.text(x + width / 2, rel, f"{rel * 100.0:.1f}%", ha="center", va="bottom", fontsize=8)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels)
    ax.set_ylabel("relative to before")
    ax.set_title(f"{comparison.program}: {comparison.percent_time_reduction} execution cost")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def profile_figure(report: CostReport, path: str, top: int = 12) -> None:
    """Horizontal bars of mean execution cost for the costliest blocks."""
    blocks = report.blocks[:top]
    labels = [f"0x{b.addr:x}" for b in blocks]
    costs = [b.dyn_cost_mean for b in blocks]

    fig, ax = plt.subplots(figsize=(7.0, 4.0), dpi=120)
    ys = range(len(blocks))
    ax.barh(list(ys), costs, color="#2b7bba")
    ax.set_yticks(list(ys))
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("mean execution cost")
    ax.set_title(f"costliest blocks (runs={report.runs}, seed={report.seed})")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
