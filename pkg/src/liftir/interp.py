"""Deterministic concrete evaluator for IR super-blocks.

Execution is fully specified by (block, state seed, explicit writes): memory
and guest bytes that were never written read as a seeded hash of their
location, so two runs over the same seed observe identical environments
without materializing 2^64 bytes. That property is what makes differential
verification meaningful: original and rewrite see the exact same world.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from . import cost as cost_mod
from .errors import DivByZeroError, GuestOutOfRangeError, InterpError, OpaqueOpError
from .ir import (
    BINOP_SIGS,
    GUEST_SIZE,
    UNOP_SIGS,
    Binop,
    Const,
    Exit,
    Expr,
    Get,
    IMark,
    IrSb,
    IrType,
    ITE,
    JumpKind,
    Load,
    NoOp,
    Opaque,
    Put,
    RdTmp,
    Statement,
    Store,
    Unop,
    WrTmp,
)

M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB


def mix64(a: int, b: int) -> int:
    """SplitMix64-style finalizer over the folded pair (a, b).

    fold: z = (a + GOLDEN * (b + 1)) mod 2^64 with GOLDEN = 0x9E3779B97F4A7C15,
    then z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
    z *= 0x94D049BB133111EB; z ^= z >> 31 (all mod 2^64).

    Used for lazy memory/guest defaults, per-run profiling seeds, per-trial
    verification seeds, and per-block generator streams.
    """
    z = (a + _GOLDEN * (b + 1)) & M64
    z = (z ^ (z >> 30)) * _MIX_A & M64
    z = (z ^ (z >> 27)) * _MIX_B & M64
    return z ^ (z >> 31)


class ExitKind(Enum):
    SIDE_EXIT = "SideExit"
    FALL_THROUGH = "FallThrough"


@dataclass(frozen=True)
class ExitOutcome:
    kind: ExitKind
    stmt_index: Optional[int]
    target: int
    jumpkind: JumpKind

    @property
    def is_side_exit(self) -> bool:
        return self.kind is ExitKind.SIDE_EXIT


class MachineState:
    """Guest bytes, sparse memory, and block-local temps.

    Only explicitly written bytes are stored; everything else reads as
    mix64(seed, address) mod 256 for memory and mix64(seed, G + offset)
    mod 256 for guest bytes. mem_writes records every memory byte write in
    order, which is what the verifier compares.
    """

    __slots__ = ("seed", "guest_size", "guest", "mem", "temps", "mem_writes")

    def __init__(self, seed: int = 0, guest_size: int = GUEST_SIZE):
        self.seed = seed & M64
        self.guest_size = guest_size
        self.guest: dict[int, int] = {}
        self.mem: dict[int, int] = {}
        self.temps: dict[int, int] = {}
        self.mem_writes: list[tuple[int, int]] = []

    def guest_byte(self, offset: int) -> int:
        b = self.guest.get(offset)
        if b is None:
            return mix64(self.seed, self.guest_size + offset) % 256
        return b

    def mem_byte(self, addr: int) -> int:
        b = self.mem.get(addr)
        if b is None:
            return mix64(self.seed, addr) % 256
        return b

    def read_guest(self, offset: int, size: int) -> int:
        if offset < 0 or offset + size > self.guest_size:
            raise GuestOutOfRangeError(f"guest read [{offset}, {offset + size}) outside [0, {self.guest_size})")
        value = 0
        for i in range(size):
            value |= self.guest_byte(offset + i) << (8 * i)
        return value

    def write_guest(self, offset: int, size: int, value: int) -> None:
        if offset < 0 or offset + size > self.guest_size:
            raise GuestOutOfRangeError(f"guest write [{offset}, {offset + size}) outside [0, {self.guest_size})")
        for i in range(size):
            self.guest[offset + i] = (value >> (8 * i)) & 0xFF

    def read_mem(self, addr: int, size: int) -> int:
        value = 0
        for i in range(size):
            value |= self.mem_byte((addr + i) & M64) << (8 * i)
        return value

    def write_mem(self, addr: int, size: int, value: int) -> None:
        for i in range(size):
            a = (addr + i) & M64
            b = (value >> (8 * i)) & 0xFF
            self.mem[a] = b
            self.mem_writes.append((a, b))


# --- Operator semantics ----------------------------------------------------------


def _signed(v: int, bits: int) -> int:
    return v - (1 << bits) if v >> (bits - 1) else v


def _build_binop_eval() -> dict[str, Callable[[int, int], int]]:
    ops: dict[str, Callable[[int, int], int]] = {}
    for w in (8, 16, 32, 64):
        m = (1 << w) - 1

        def shl(a, b, m=m, w=w):
            return (a << b) & m if b < w else 0

        def shr(a, b, w=w):
            return a >> b if b < w else 0

        def sar(a, b, m=m, w=w):
            s = _signed(a, w)
            return (s >> b) & m if b < w else (m if s < 0 else 0)

        ops[f"Add{w}"] = lambda a, b, m=m: (a + b) & m
        ops[f"Sub{w}"] = lambda a, b, m=m: (a - b) & m
        ops[f"Mul{w}"] = lambda a, b, m=m: (a * b) & m
        ops[f"And{w}"] = lambda a, b: a & b
        ops[f"Or{w}"] = lambda a, b: a | b
        ops[f"Xor{w}"] = lambda a, b: a ^ b
        ops[f"Shl{w}"] = shl
        ops[f"Shr{w}"] = shr
        ops[f"Sar{w}"] = sar
        ops[f"CmpEQ{w}"] = lambda a, b: 1 if a == b else 0
        ops[f"CmpNE{w}"] = lambda a, b: 1 if a != b else 0

    def divu64(a, b):
        if b == 0:
            raise DivByZeroError("DivU64 by zero")
        return a // b

    def divs64(a, b):
        if b == 0:
            raise DivByZeroError("DivS64 by zero")
        sa, sb = _signed(a, 64), _signed(b, 64)
        q = abs(sa) // abs(sb)
        if (sa < 0) != (sb < 0):
            q = -q
        return q & M64

    ops["DivU64"] = divu64
    ops["DivS64"] = divs64
    ops["CmpLT64S"] = lambda a, b: 1 if _signed(a, 64) < _signed(b, 64) else 0
    ops["CmpLE64S"] = lambda a, b: 1 if _signed(a, 64) <= _signed(b, 64) else 0
    ops["CmpLT64U"] = lambda a, b: 1 if a < b else 0
    ops["CmpLE64U"] = lambda a, b: 1 if a <= b else 0
    assert set(ops) == set(BINOP_SIGS)
    return ops


def _build_unop_eval() -> dict[str, Callable[[int], int]]:
    ops: dict[str, Callable[[int], int]] = {
        "1Uto64": lambda a: a,
        "8Uto64": lambda a: a,
        "32Uto64": lambda a: a,
        "32Sto64": lambda a: _signed(a, 32) & M64,
        "64to32": lambda a: a & 0xFFFFFFFF,
        "64to8": lambda a: a & 0xFF,
        "64to1": lambda a: a & 1,
    }
    for w in (1, 8, 16, 32, 64):
        ops[f"Not{w}"] = lambda a, m=(1 << w) - 1: a ^ m
    assert set(ops) == set(UNOP_SIGS)
    return ops


BINOP_EVAL = _build_binop_eval()
UNOP_EVAL = _build_unop_eval()


def expr_type(e: Expr, temps: dict[int, IrType]) -> IrType:
    """Result type of a validated expression."""
    if isinstance(e, Const):
        return e.ty
    if isinstance(e, RdTmp):
        return temps[e.index]
    if isinstance(e, (Get, Load)):
        return e.ty
    if isinstance(e, Binop):
        return BINOP_SIGS[e.op][2]
    if isinstance(e, Unop):
        return UNOP_SIGS[e.op][1]
    if isinstance(e, ITE):
        return expr_type(e.ift, temps)
    raise OpaqueOpError(f"no static type for opaque op {getattr(e, 'name', e)!r}")


# --- Evaluation -------------------------------------------------------------------


def _eval_const(state: MachineState, e: Const) -> int:
    return e.value


def _eval_rdtmp(state: MachineState, e: RdTmp) -> int:
    try:
        return state.temps[e.index]
    except KeyError:
        raise InterpError(f"t{e.index} read before write") from None


def _eval_get(state: MachineState, e: Get) -> int:
    return state.read_guest(e.offset, e.ty.size_bytes) & e.ty.mask


def _eval_load(state: MachineState, e: Load) -> int:
    return state.read_mem(eval_expr(state, e.addr), e.ty.size_bytes) & e.ty.mask


def _eval_binop(state: MachineState, e: Binop) -> int:
    return BINOP_EVAL[e.op](eval_expr(state, e.lhs), eval_expr(state, e.rhs))


def _eval_unop(state: MachineState, e: Unop) -> int:
    return UNOP_EVAL[e.op](eval_expr(state, e.arg))


def _eval_ite(state: MachineState, e: ITE) -> int:
    # Only the selected arm is evaluated.
    return eval_expr(state, e.ift if eval_expr(state, e.cond) else e.iff)


def _eval_opaque(state: MachineState, e: Opaque) -> int:
    raise OpaqueOpError(f"cannot evaluate opaque op {e.name!r}")


_EVAL: dict[type, Callable[[MachineState, Expr], int]] = {
    Const: _eval_const,
    RdTmp: _eval_rdtmp,
    Get: _eval_get,
    Load: _eval_load,
    Binop: _eval_binop,
    Unop: _eval_unop,
    ITE: _eval_ite,
    Opaque: _eval_opaque,
}


def eval_expr(state: MachineState, e: Expr) -> int:
    """Evaluate one expression; two's-complement at the node's width.
    Binop operands evaluate left then right; Load addresses before the read."""
    return _EVAL[type(e)](state, e)


def exec_block(
    state: MachineState,
    block: IrSb,
    weights: "cost_mod.WeightTable | None" = None,
    costs: "tuple[int, ...] | list[int] | None" = None,
) -> tuple[MachineState, ExitOutcome, int]:
    """Run a block to its first taken Exit or to fall-through.

    Mutates and returns `state`. The cost is the sum of per-statement
    weights over the statements actually reached; pass precomputed `costs`
    (from cost.block_costs) to skip recomputing them every run.
    """
    if costs is None:
        costs = cost_mod.block_costs(block, weights or cost_mod.DEFAULT_WEIGHTS)
    total = 0
    temps = block.temps
    for i, s in enumerate(block.stmts):
        total += costs[i]
        try:
            if isinstance(s, WrTmp):
                state.temps[s.target] = eval_expr(state, s.rhs)
            elif isinstance(s, Put):
                value = eval_expr(state, s.rhs)
                state.write_guest(s.offset, expr_type(s.rhs, temps).size_bytes, value)
            elif isinstance(s, Store):
                addr = eval_expr(state, s.addr)
                data = eval_expr(state, s.data)
                state.write_mem(addr, expr_type(s.data, temps).size_bytes, data)
            elif isinstance(s, Exit):
                if eval_expr(state, s.guard):
                    outcome = ExitOutcome(ExitKind.SIDE_EXIT, i, s.target, s.jumpkind)
                    return state, outcome, total
            # IMark and NoOp have no effect.
        except InterpError as err:
            raise err.at(i)
    target = eval_expr(state, block.next)
    return state, ExitOutcome(ExitKind.FALL_THROUGH, None, target, block.next_jumpkind), total
