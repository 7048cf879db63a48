"""Before/after program metrics and report rendering.

Execution time is reported in cost-model units (mean weighted cost of one
pass over every block), which keeps reports reproducible byte for byte.
Wall-clock means are collected alongside but never serialized; they are for
interactive display only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .cost import DEFAULT_WEIGHTS, WeightTable, profile_program
from .ir import Exit, Program, Put, Store, WrTmp, block_temps_referenced


@dataclass(frozen=True)
class MetricsReport:
    exec_cost_mean: float
    exec_wall_mean: float = field(compare=False)
    stmt_count: int
    put_count: int
    store_count: int
    temp_count: int
    max_temp_index: int
    runs: int
    seed: int


def collect_metrics(
    program: Program,
    runs: int = 100,
    seed: int = 0,
    weights: WeightTable = DEFAULT_WEIGHTS,
) -> MetricsReport:
    """Profile the program and count its working statements.

    stmt_count covers WrTmp/Put/Store/Exit only; markers and no-ops are
    bookkeeping, not work. Temp metrics treat indices as one program-wide
    namespace: temp_count is the number of distinct indices referenced
    anywhere, max_temp_index the largest such index.
    """
    report = profile_program(program, runs=runs, seed=seed, weights=weights)
    stmt_count = put_count = store_count = 0
    referenced: set[int] = set()
    for block in program.blocks.values():
        referenced |= block_temps_referenced(block)
        for s in block.stmts:
            if isinstance(s, WrTmp):
                stmt_count += 1
            elif isinstance(s, Put):
                stmt_count += 1
                put_count += 1
            elif isinstance(s, Store):
                stmt_count += 1
                store_count += 1
            elif isinstance(s, Exit):
                stmt_count += 1
    return MetricsReport(
        exec_cost_mean=sum(b.dyn_cost_mean for b in report.blocks),
        exec_wall_mean=sum(b.wall_mean for b in report.blocks),
        stmt_count=stmt_count,
        put_count=put_count,
        store_count=store_count,
        temp_count=len(referenced),
        max_temp_index=max(referenced) if referenced else 0,
        runs=runs,
        seed=seed,
    )


@dataclass(frozen=True)
class ComparisonReport:
    program: str
    before: MetricsReport
    after: MetricsReport

    @property
    def exec_cost_delta(self) -> float:
        return self.before.exec_cost_mean - self.after.exec_cost_mean

    @property
    def percent_time_reduction(self) -> str:
        return _percent_cell(self.before.exec_cost_mean, self.after.exec_cost_mean)


def compare_reports(program: str, before: MetricsReport, after: MetricsReport) -> ComparisonReport:
    if (before.runs, before.seed) != (after.runs, after.seed):
        raise ValueError("reports were collected with different runs/seed and do not compare")
    return ComparisonReport(program=program, before=before, after=after)


def _percent_cell(before: float, after: float) -> str:
    if before == 0:
        return "0.0%"
    pct = round((before - after) / before * 100.0, 1)
    if pct == 0:
        return "0.0%"
    marker = "↓" if pct > 0 else "↑"
    return f"{abs(pct):.1f}% {marker}"


def _count_cell(before: int, after: int) -> str:
    delta = before - after
    if delta == 0:
        return "0"
    marker = "↓" if delta > 0 else "↑"
    return f"{abs(delta)} {marker}"


def render_report(comparison: ComparisonReport, format: str = "table") -> str:
    if format == "table":
        return _render_table(comparison)
    if format == "structured":
        return _render_structured(comparison)
    raise ValueError(f"unknown report format {format!r}")


def _render_table(c: ComparisonReport) -> str:
    b, a = c.before, c.after
    rows = [
        ("Metric", "Before", "After", "Change"),
        (
            "Execution Time",
            f"{b.exec_cost_mean:.6f}",
            f"{a.exec_cost_mean:.6f}",
            _percent_cell(b.exec_cost_mean, a.exec_cost_mean),
        ),
        (
            "IR Statement Count",
            str(b.stmt_count),
            str(a.stmt_count),
            _count_cell(b.stmt_count, a.stmt_count),
        ),
        (
            "PUT Instruction Count",
            str(b.put_count),
            str(a.put_count),
            _count_cell(b.put_count, a.put_count),
        ),
        (
            "Temporary Variable Count",
            str(b.temp_count),
            str(a.temp_count),
            _count_cell(b.temp_count, a.temp_count),
        ),
        (
            "Max Temp Variable Index",
            f"t{b.max_temp_index}",
            f"t{a.max_temp_index}",
            _count_cell(b.max_temp_index, a.max_temp_index),
        ),
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    lines = [f"# {c.program} (runs={b.runs}, seed={b.seed})"]
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("-" * (sum(widths) + 6))
    return "".join(ln + "\n" for ln in lines)


def _metrics_dict(m: MetricsReport) -> dict:
    return {
        "exec_time": m.exec_cost_mean,
        "stmt_count": m.stmt_count,
        "put_count": m.put_count,
        "store_count": m.store_count,
        "temp_count": m.temp_count,
        "max_temp_index": m.max_temp_index,
    }


def _render_structured(c: ComparisonReport) -> str:
    b, a = c.before, c.after
    doc = {
        "program": c.program,
        "runs": b.runs,
        "seed": b.seed,
        "before": _metrics_dict(b),
        "after": _metrics_dict(a),
        "deltas": {
            "exec_time": b.exec_cost_mean - a.exec_cost_mean,
            "stmt_count": b.stmt_count - a.stmt_count,
            "put_count": b.put_count - a.put_count,
            "store_count": b.store_count - a.store_count,
            "temp_count": b.temp_count - a.temp_count,
            "max_temp_index": b.max_temp_index - a.max_temp_index,
        },
        "percent_time_reduction": c.percent_time_reduction,
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def parse_structured_report(text: str) -> ComparisonReport:
    doc = json.loads(text)

    def metrics(d: dict) -> MetricsReport:
        return MetricsReport(
            exec_cost_mean=d["exec_time"],
            exec_wall_mean=0.0,
            stmt_count=d["stmt_count"],
            put_count=d["put_count"],
            store_count=d["store_count"],
            temp_count=d["temp_count"],
            max_temp_index=d["max_temp_index"],
            runs=doc["runs"],
            seed=doc["seed"],
        )

    return ComparisonReport(
        program=doc["program"],
        before=metrics(doc["before"]),
        after=metrics(doc["after"]),
    )


def render_delta_summary(comparisons: list[ComparisonReport]) -> str:
    """Multi-program one-line-per-program summary of reductions. PUT and
    store deltas are reported as separate columns."""
    rows = [
        (
            "Program",
            "Time",
            "Stmts",
            "PUTs",
            "Stores",
            "Temps",
        )
    ]
    for c in comparisons:
        b, a = c.before, c.after
        rows.append(
            (
                c.program,
                _percent_cell(b.exec_cost_mean, a.exec_cost_mean),
                _count_cell(b.stmt_count, a.stmt_count),
                _count_cell(b.put_count, a.put_count),
                _count_cell(b.store_count, a.store_count),
                _count_cell(b.temp_count, a.temp_count),
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
    return "".join(ln + "\n" for ln in lines)
