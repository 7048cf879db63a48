"""Semantic verification of block rewrites.

Two layers: a structural component diff (temps, constants, guest offsets,
statement shape) and differential concrete execution over seeded states.
Observable state is guest bytes, the ordered memory write list, and the exit
outcome; temps are block-local and deliberately not compared, so rewrites
that drop temporaries can still verify equivalent.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import InterpError
from .ir import (
    Const,
    Exit,
    Get,
    IrSb,
    NoOp,
    Put,
    has_opaque,
    stmt_exprs,
    walk_expr,
)
from .interp import ExitOutcome, MachineState, exec_block, mix64


@dataclass(frozen=True)
class StructuralDiff:
    temp_count_delta: int
    const_set_diff: frozenset[int]
    offset_set_diff: frozenset[int]
    shape_equal: bool

    @property
    def is_zero(self) -> bool:
        return (
            self.temp_count_delta == 0
            and not self.const_set_diff
            and not self.offset_set_diff
            and self.shape_equal
        )

    def __str__(self) -> str:
        if self.is_zero:
            return "no structural differences"
        parts = []
        if self.temp_count_delta:
            parts.append(f"temp count {self.temp_count_delta:+d}")
        if self.const_set_diff:
            shown = ", ".join(f"0x{v:x}" for v in sorted(self.const_set_diff)[:4])
            parts.append(f"constants differ ({shown})")
        if self.offset_set_diff:
            shown = ", ".join(str(o) for o in sorted(self.offset_set_diff)[:4])
            parts.append(f"guest offsets differ ({shown})")
        if not self.shape_equal:
            parts.append("statement shapes differ")
        return "; ".join(parts)


class VerdictKind(Enum):
    EQUIVALENT = "Equivalent"
    MISMATCH = "Mismatch"
    STRUCTURAL_ONLY = "StructuralOnly"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    trials: int = 0
    counterexample_seed: Optional[int] = None
    first_divergence: str = ""
    reason: str = ""

    @property
    def accepted(self) -> bool:
        return self.kind in (VerdictKind.EQUIVALENT, VerdictKind.STRUCTURAL_ONLY)

    @staticmethod
    def equivalent(trials: int) -> "Verdict":
        return Verdict(VerdictKind.EQUIVALENT, trials=trials)

    @staticmethod
    def mismatch(seed: int, divergence: str) -> "Verdict":
        return Verdict(
            VerdictKind.MISMATCH, counterexample_seed=seed, first_divergence=divergence
        )

    @staticmethod
    def structural_only(reason: str) -> "Verdict":
        return Verdict(VerdictKind.STRUCTURAL_ONLY, reason=reason)

    @staticmethod
    def rejected(reason: str) -> "Verdict":
        return Verdict(VerdictKind.REJECTED, reason=reason)


@dataclass(frozen=True)
class VerifyPolicy:
    trials: int = 64
    seed: int = 0
    structural_required: bool = False
    # Compare final memory images instead of ordered write lists. Needed for
    # store-merge rewrites, whose whole point is to shorten the write list.
    memory_image: bool = False


def _block_consts(block: IrSb) -> set[int]:
    values: set[int] = set()
    for s in block.stmts:
        for top in stmt_exprs(s):
            values.update(e.value for e in walk_expr(top) if isinstance(e, Const))
        if isinstance(s, Exit):
            values.add(s.target)
    values.update(e.value for e in walk_expr(block.next) if isinstance(e, Const))
    return values


def _block_offsets(block: IrSb) -> set[int]:
    offsets: set[int] = set()
    for s in block.stmts:
        if isinstance(s, Put):
            offsets.add(s.offset)
        for top in stmt_exprs(s):
            offsets.update(e.offset for e in walk_expr(top) if isinstance(e, Get))
    offsets.update(e.offset for e in walk_expr(block.next) if isinstance(e, Get))
    return offsets


def _shapes_equal(a: IrSb, b: IrSb) -> bool:
    """Statement-kind sequences match, with NoOp acting as a wildcard so
    that statement-to-NoOp rewrites keep the shape. Blocks of different
    lengths compare by their NoOp-filtered sequences."""
    if len(a.stmts) == len(b.stmts):
        return all(
            type(x) is type(y) or isinstance(x, NoOp) or isinstance(y, NoOp)
            for x, y in zip(a.stmts, b.stmts)
        )
    kinds_a = [type(s).__name__ for s in a.stmts if not isinstance(s, NoOp)]
    kinds_b = [type(s).__name__ for s in b.stmts if not isinstance(s, NoOp)]
    return kinds_a == kinds_b


def structural_compare(a: IrSb, b: IrSb) -> StructuralDiff:
    """Component-level diff. A zero diff is necessary but not sufficient for
    textual equality: the comparison is set-based, so value-preserving
    reorderings also diff to zero."""
    return StructuralDiff(
        temp_count_delta=len(b.temps) - len(a.temps),
        const_set_diff=frozenset(_block_consts(a) ^ _block_consts(b)),
        offset_set_diff=frozenset(_block_offsets(a) ^ _block_offsets(b)),
        shape_equal=_shapes_equal(a, b),
    )


def _describe_outcome(o: ExitOutcome) -> str:
    if o.is_side_exit:
        return f"SideExit(stmt {o.stmt_index}) -> 0x{o.target:x} Ijk_{o.jumpkind.value}"
    return f"FallThrough -> 0x{o.target:x} Ijk_{o.jumpkind.value}"


_CLEAN = "exit"
_FAULT = "fault"


def _run_once(block: IrSb, state_seed: int, costs: tuple[int, ...]):
    state = MachineState(seed=state_seed)
    try:
        _, outcome, _ = exec_block(state, block, costs=costs)
        return state, (_CLEAN, outcome)
    except InterpError as err:
        return state, (_FAULT, err.kind, err.stmt_index)


def _compare_states(
    sa: MachineState, sb: MachineState, memory_image: bool
) -> Optional[str]:
    for off in sorted(set(sa.guest) | set(sb.guest)):
        va, vb = sa.guest_byte(off), sb.guest_byte(off)
        if va != vb:
            return f"guest byte at offset {off}: 0x{va:02x} vs 0x{vb:02x}"
    if memory_image:
        for addr in sorted(set(sa.mem) | set(sb.mem)):
            va, vb = sa.mem_byte(addr), sb.mem_byte(addr)
            if va != vb:
                return f"memory byte at 0x{addr:x}: 0x{va:02x} vs 0x{vb:02x}"
    elif sa.mem_writes != sb.mem_writes:
        for i, (wa, wb) in enumerate(zip(sa.mem_writes, sb.mem_writes)):
            if wa != wb:
                return (
                    f"memory write {i}: (0x{wa[0]:x}, 0x{wa[1]:02x})"
                    f" vs (0x{wb[0]:x}, 0x{wb[1]:02x})"
                )
        return (
            f"memory write count: {len(sa.mem_writes)} vs {len(sb.mem_writes)}"
        )
    return None


def differential_verify(
    a: IrSb,
    b: IrSb,
    trials: int = 64,
    seed: int = 0,
    memory_image: bool = False,
) -> Verdict:
    """Execute both blocks from identical states seeded mix64(seed, i) for
    i in 0..trials and compare observables per trial. Blocks containing
    opaque ops cannot execute; they pass only on a zero structural diff.

    A fault on exactly one side is a Mismatch (the rewrite changed failure
    behavior); the same fault on both sides is Rejected, since equivalence
    cannot be attested on faulting states.
    """
    if a.addr != b.addr:
        return Verdict.rejected(f"blocks at different addresses 0x{a.addr:x} vs 0x{b.addr:x}")

    if has_opaque(a) or has_opaque(b):
        diff = structural_compare(a, b)
        if diff.is_zero:
            return Verdict.structural_only("opaque ops prevent execution; structural diff is zero")
        return Verdict.rejected(f"opaque ops prevent execution and {diff}")

    costs_a = (0,) * len(a.stmts)
    costs_b = (0,) * len(b.stmts)
    for i in range(trials):
        state_seed = mix64(seed, i)
        sa, ta = _run_once(a, state_seed, costs_a)
        sb, tb = _run_once(b, state_seed, costs_b)

        if ta[0] == _FAULT and tb[0] == _FAULT:
            if ta == tb:
                return Verdict.rejected(
                    f"both blocks fault ({ta[1]} at stmt {ta[2]}) under seed 0x{state_seed:x}"
                )
            return Verdict.mismatch(
                state_seed, f"fault {ta[1]} at stmt {ta[2]} vs fault {tb[1]} at stmt {tb[2]}"
            )
        if ta[0] == _FAULT:
            return Verdict.mismatch(
                state_seed, f"fault {ta[1]} at stmt {ta[2]} vs {_describe_outcome(tb[1])}"
            )
        if tb[0] == _FAULT:
            return Verdict.mismatch(
                state_seed, f"{_describe_outcome(ta[1])} vs fault {tb[1]} at stmt {tb[2]}"
            )
        if ta[1] != tb[1]:
            return Verdict.mismatch(
                state_seed, f"{_describe_outcome(ta[1])} vs {_describe_outcome(tb[1])}"
            )
        divergence = _compare_states(sa, sb, memory_image)
        if divergence is not None:
            return Verdict.mismatch(state_seed, divergence)
    return Verdict.equivalent(trials)


def verify_rewrite(orig: IrSb, opt: IrSb, policy: VerifyPolicy = VerifyPolicy()) -> Verdict:
    """Structural comparison (informational unless policy.structural_required)
    followed by differential verification."""
    diff = structural_compare(orig, opt)
    if policy.structural_required and not diff.is_zero:
        return Verdict.rejected(f"structural check required and failed: {diff}")
    return differential_verify(
        orig, opt, trials=policy.trials, seed=policy.seed, memory_image=policy.memory_image
    )
