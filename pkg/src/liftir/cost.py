"""Symbolic cost model: per-statement weights, program-wide ranking, and
repeated-run profiling.

Weights are a declared stand-in for real execution cost: memory stores and
complex arithmetic are heaviest, register moves cheap, metadata free. Every
weight can be overridden through the CLI config file.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields
from typing import Sequence

from .ir import (
    Binop,
    Const,
    Exit,
    Expr,
    Get,
    IMark,
    IrSb,
    ITE,
    Load,
    NoOp,
    Opaque,
    Program,
    Put,
    RdTmp,
    Statement,
    Store,
    Unop,
    WrTmp,
    has_opaque,
)


@dataclass(frozen=True)
class WeightTable:
    imark: int = 0
    noop: int = 0
    get: int = 1
    put_base: int = 1
    wrtmp_base: int = 1
    store_base: int = 6
    exit: int = 3
    ite: int = 3
    unop: int = 1
    binop_simple: int = 2
    binop_mul: int = 4
    binop_div: int = 8
    load: int = 5
    opaque: int = 4

    def scaled(self, factor: int) -> "WeightTable":
        return WeightTable(**{f.name: getattr(self, f.name) * factor for f in fields(self)})


DEFAULT_WEIGHTS = WeightTable()


def _binop_weight(op: str, w: WeightTable) -> int:
    if op.startswith("Mul"):
        return w.binop_mul
    if op.startswith("Div"):
        return w.binop_div
    return w.binop_simple


def expr_cost(e: Expr, w: WeightTable = DEFAULT_WEIGHTS) -> int:
    """Sum of node weights over the expression tree. Const and RdTmp are
    free; they cost nothing beyond their consumer."""
    if isinstance(e, (Const, RdTmp)):
        return 0
    if isinstance(e, Get):
        return w.get
    if isinstance(e, Load):
        return w.load + expr_cost(e.addr, w)
    if isinstance(e, Binop):
        return _binop_weight(e.op, w) + expr_cost(e.lhs, w) + expr_cost(e.rhs, w)
    if isinstance(e, Unop):
        return w.unop + expr_cost(e.arg, w)
    if isinstance(e, ITE):
        return w.ite + expr_cost(e.cond, w) + expr_cost(e.ift, w) + expr_cost(e.iff, w)
    if isinstance(e, Opaque):
        return w.opaque + sum(expr_cost(a, w) for a in e.args)
    raise TypeError(f"not an expression: {e!r}")


def statement_cost(s: Statement, w: WeightTable = DEFAULT_WEIGHTS) -> int:
    """Statement base weight plus the weights of its expression trees."""
    if isinstance(s, IMark):
        return w.imark
    if isinstance(s, NoOp):
        return w.noop
    if isinstance(s, WrTmp):
        return w.wrtmp_base + expr_cost(s.rhs, w)
    if isinstance(s, Put):
        return w.put_base + expr_cost(s.rhs, w)
    if isinstance(s, Store):
        return w.store_base + expr_cost(s.addr, w) + expr_cost(s.data, w)
    if isinstance(s, Exit):
        return w.exit + expr_cost(s.guard, w)
    raise TypeError(f"not a statement: {s!r}")


def block_costs(block: IrSb, w: WeightTable = DEFAULT_WEIGHTS) -> tuple[int, ...]:
    return tuple(statement_cost(s, w) for s in block.stmts)


def block_static_cost(block: IrSb, w: WeightTable = DEFAULT_WEIGHTS) -> int:
    return sum(block_costs(block, w))


@dataclass(frozen=True)
class RankedStatement:
    block_addr: int
    stmt_index: int
    cost: int


def _scored(program: Program, w: WeightTable) -> list[RankedStatement]:
    out = []
    for addr, block in program.blocks.items():
        for i, s in enumerate(block.stmts):
            if isinstance(s, (IMark, NoOp)):
                continue
            out.append(RankedStatement(addr, i, statement_cost(s, w)))
    return out


def rank_statements(
    program: Program,
    weights: WeightTable = DEFAULT_WEIGHTS,
    k: int | None = None,
) -> list[RankedStatement]:
    """The k highest-cost statements program-wide (all if k is None or
    exceeds the count). IMark and NoOp are never ranked. Ties go to the
    earlier (block addr, stmt index)."""
    ranked = sorted(
        _scored(program, weights),
        key=lambda r: (-r.cost, r.block_addr, r.stmt_index),
    )
    return ranked if k is None else ranked[:k]


@dataclass(frozen=True)
class BlockProfile:
    addr: int
    static_cost: int
    dyn_cost_mean: float
    wall_mean: float = field(compare=False)
    opaque: bool = False


@dataclass
class CostReport:
    runs: int
    seed: int
    statements: list[RankedStatement]
    blocks: list[BlockProfile]
    ranking: list[RankedStatement]


def profile_program(
    program: Program,
    runs: int = 100,
    seed: int = 0,
    weights: WeightTable = DEFAULT_WEIGHTS,
) -> CostReport:
    """Execute every block `runs` times from states seeded mix64(seed, run)
    and report mean dynamic cost-units per block. Blocks containing opaque
    ops are not executed: they are flagged and their static total stands in
    for the dynamic mean. Cost-units are deterministic; wall times are not
    and are excluded from report equality."""
    from . import interp

    profiles = []
    for addr, block in program.blocks.items():
        costs = block_costs(block, weights)
        static_total = sum(costs)
        if has_opaque(block):
            profiles.append(BlockProfile(addr, static_total, float(static_total), 0.0, True))
            continue
        total = 0
        t0 = time.perf_counter()
        for run in range(runs):
            state = interp.MachineState(seed=interp.mix64(seed, run))
            _, _, cost = interp.exec_block(state, block, costs=costs)
            total += cost
        wall = (time.perf_counter() - t0) / runs
        profiles.append(BlockProfile(addr, static_total, total / runs, wall, False))

    profiles.sort(key=lambda p: (-p.dyn_cost_mean, p.addr))
    scored = _scored(program, weights)
    ranking = sorted(scored, key=lambda r: (-r.cost, r.block_addr, r.stmt_index))
    return CostReport(runs=runs, seed=seed, statements=scored, blocks=profiles, ranking=ranking)


def ranking_to_tsv(ranking: Sequence[RankedStatement], program: Program | None = None) -> str:
    """Tab-separated ranking lines `0xADDR<TAB>index<TAB>cost[<TAB>body]`.
    The body column is informative display only."""
    from .text import print_stmt_body

    lines = []
    for r in ranking:
        cells = [f"0x{r.block_addr:x}", str(r.stmt_index), str(r.cost)]
        if program is not None:
            cells.append(print_stmt_body(program.blocks[r.block_addr].stmts[r.stmt_index]))
        lines.append("\t".join(cells))
    return "".join(ln + "\n" for ln in lines)


def ranking_from_tsv(text: str) -> list[RankedStatement]:
    ranking = []
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.rstrip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise ValueError(f"line {line_no}: expected at least 3 tab-separated fields")
        ranking.append(RankedStatement(int(parts[0], 16), int(parts[1]), int(parts[2])))
    return ranking
