"""Core data model for the textual VEX-dialect IR.

An IR super-block (IrSb) is a single-entry, possibly multi-exit sequence of
statements over block-local single-assignment temporaries, plus a fall-through
target. Guest register state is a flat byte array addressed by offset; no
architecture database is involved.

All node classes are frozen dataclasses: values are immutable after
construction, structurally comparable, and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Union


class IrType(Enum):
    """Value widths. In values fit in n bits; I1 values are 0 or 1."""

    I1 = 1
    I8 = 8
    I16 = 16
    I32 = 32
    I64 = 64

    @property
    def bits(self) -> int:
        return self.value

    @property
    def size_bytes(self) -> int:
        # I1 occupies one byte in guest state and memory.
        return 1 if self.value == 1 else self.value // 8

    @property
    def mask(self) -> int:
        return (1 << self.value) - 1

    @property
    def short(self) -> str:
        """Surface-syntax name used in GET:/LDle: annotations."""
        return self.name

    @property
    def decl(self) -> str:
        """Surface-syntax name used in temp declarations."""
        return "Ity_" + self.name


class JumpKind(Enum):
    BORING = "Boring"
    CALL = "Call"
    RET = "Ret"


# --- Expressions -------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: int
    ty: IrType


@dataclass(frozen=True)
class RdTmp:
    index: int


@dataclass(frozen=True)
class Get:
    offset: int
    ty: IrType


@dataclass(frozen=True)
class Load:
    """Little-endian memory read. Addresses have type I64."""

    ty: IrType
    addr: "Expr"


@dataclass(frozen=True)
class Binop:
    op: str
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Unop:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class ITE:
    """If-then-else value select; cond has type I1."""

    cond: "Expr"
    ift: "Expr"
    iff: "Expr"


@dataclass(frozen=True)
class Opaque:
    """Unknown operation kept as-is. Carries no type guarantees and marks the
    enclosing block opaque: the cost model falls back to static weights and
    the verifier to structural comparison."""

    name: str
    args: tuple["Expr", ...] = ()


Expr = Union[Const, RdTmp, Get, Load, Binop, Unop, ITE, Opaque]


# --- Statements ---------------------------------------------------------------


@dataclass(frozen=True)
class IMark:
    """Instruction-boundary marker; no semantic effect."""

    addr: int
    length: int
    delta: int


@dataclass(frozen=True)
class WrTmp:
    target: int
    rhs: Expr


@dataclass(frozen=True)
class Put:
    offset: int
    rhs: Expr


@dataclass(frozen=True)
class Store:
    """Little-endian memory write."""

    addr: Expr
    data: Expr


@dataclass(frozen=True)
class Exit:
    """Conditional side exit; guard has type I1."""

    guard: Expr
    target: int
    jumpkind: JumpKind


@dataclass(frozen=True)
class NoOp:
    pass


Statement = Union[IMark, WrTmp, Put, Store, Exit, NoOp]


@dataclass(frozen=True)
class IrSb:
    """One IR super-block.

    Invariants (checked by validate, not the constructor):
      - each temp is written by at most one WrTmp;
      - every RdTmp reads a temp written earlier in the same block;
      - every temp used anywhere is declared in `temps`;
      - every expression tree type-checks against the op signature tables.
    """

    addr: int
    temps: dict[int, IrType]
    stmts: tuple[Statement, ...]
    next: Expr
    next_jumpkind: JumpKind


@dataclass
class Program:
    """Ordered collection of blocks keyed by (unique) address."""

    blocks: dict[int, IrSb] = field(default_factory=dict)
    name: str = ""

    def total_statements(self) -> int:
        return sum(len(b.stmts) for b in self.blocks.values())


# Guest byte offset of the program counter slot named in exit / fall-through
# syntax. The offset is display syntax only; the AST does not model it.
GUEST_PC_OFFSET = 184

# Default guest state size in bytes.
GUEST_SIZE = 4096


# --- Op signature tables -------------------------------------------------------

_WIDTHS = (8, 16, 32, 64)


def _build_binop_sigs() -> dict[str, tuple[IrType, IrType, IrType]]:
    sigs: dict[str, tuple[IrType, IrType, IrType]] = {}
    for w in _WIDTHS:
        t = IrType(w)
        for base in ("Add", "Sub", "Mul", "And", "Or", "Xor"):
            sigs[f"{base}{w}"] = (t, t, t)
        for base in ("Shl", "Shr", "Sar"):
            sigs[f"{base}{w}"] = (t, IrType.I8, t)
        for base in ("CmpEQ", "CmpNE"):
            sigs[f"{base}{w}"] = (t, t, IrType.I1)
    i64 = IrType.I64
    sigs["DivU64"] = (i64, i64, i64)
    sigs["DivS64"] = (i64, i64, i64)
    for name in ("CmpLT64S", "CmpLT64U", "CmpLE64S", "CmpLE64U"):
        sigs[name] = (i64, i64, IrType.I1)
    return sigs


def _build_unop_sigs() -> dict[str, tuple[IrType, IrType]]:
    sigs: dict[str, tuple[IrType, IrType]] = {}
    for w in (1,) + _WIDTHS:
        t = IrType(w)
        sigs[f"Not{w}"] = (t, t)
    sigs["1Uto64"] = (IrType.I1, IrType.I64)
    sigs["8Uto64"] = (IrType.I8, IrType.I64)
    sigs["32Uto64"] = (IrType.I32, IrType.I64)
    sigs["32Sto64"] = (IrType.I32, IrType.I64)
    sigs["64to32"] = (IrType.I64, IrType.I32)
    sigs["64to8"] = (IrType.I64, IrType.I8)
    sigs["64to1"] = (IrType.I64, IrType.I1)
    return sigs


BINOP_SIGS = _build_binop_sigs()
UNOP_SIGS = _build_unop_sigs()


# --- Tree walks ----------------------------------------------------------------


def walk_expr(e: Expr) -> Iterator[Expr]:
    """Yield e and every sub-expression, preorder."""
    yield e
    if isinstance(e, Load):
        yield from walk_expr(e.addr)
    elif isinstance(e, Binop):
        yield from walk_expr(e.lhs)
        yield from walk_expr(e.rhs)
    elif isinstance(e, Unop):
        yield from walk_expr(e.arg)
    elif isinstance(e, ITE):
        yield from walk_expr(e.cond)
        yield from walk_expr(e.ift)
        yield from walk_expr(e.iff)
    elif isinstance(e, Opaque):
        for a in e.args:
            yield from walk_expr(a)


def stmt_exprs(s: Statement) -> Iterator[Expr]:
    """Yield the top-level expressions of a statement."""
    if isinstance(s, WrTmp):
        yield s.rhs
    elif isinstance(s, Put):
        yield s.rhs
    elif isinstance(s, Store):
        yield s.addr
        yield s.data
    elif isinstance(s, Exit):
        yield s.guard


def temps_read(s: Statement) -> set[int]:
    return {e.index for top in stmt_exprs(s) for e in walk_expr(top) if isinstance(e, RdTmp)}


def expr_reads(e: Expr) -> set[int]:
    return {n.index for n in walk_expr(e) if isinstance(n, RdTmp)}


def block_temps_referenced(block: IrSb) -> set[int]:
    """Temps written or read anywhere in the block, including the exit expression."""
    used: set[int] = set()
    for s in block.stmts:
        if isinstance(s, WrTmp):
            used.add(s.target)
        used |= temps_read(s)
    used |= expr_reads(block.next)
    return used


def has_opaque(block: IrSb) -> bool:
    for s in block.stmts:
        for top in stmt_exprs(s):
            if any(isinstance(e, Opaque) for e in walk_expr(top)):
                return True
    return any(isinstance(e, Opaque) for e in walk_expr(block.next))


def expr_contains(e: Expr, kinds: tuple[type, ...]) -> bool:
    return any(isinstance(n, kinds) for n in walk_expr(e))


# --- Validation ----------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    """One well-formedness failure. stmt_index of None points at the block's
    fall-through expression."""

    stmt_index: Optional[int]
    rule: str
    message: str

    def __str__(self) -> str:
        where = "next" if self.stmt_index is None else f"stmt{self.stmt_index}"
        return f"{self.rule}@{where}: {self.message}"


class _Checker:
    def __init__(self, block: IrSb):
        self.block = block
        self.violations: list[Violation] = []
        self.written: set[int] = set()
        self.index: Optional[int] = None

    def report(self, rule: str, message: str) -> None:
        self.violations.append(Violation(self.index, rule, message))

    def check_expr(self, e: Expr, expected: Optional[IrType] = None) -> Optional[IrType]:
        """Type-check an expression tree; returns its type, or None when the
        type is unknown (Opaque somewhere relevant or a prior violation)."""
        ty = self._expr_type(e)
        if expected is not None and ty is not None and ty is not expected:
            self.report("type-mismatch", f"expected {expected.name}, got {ty.name}")
        return ty

    def _expr_type(self, e: Expr) -> Optional[IrType]:
        if isinstance(e, Const):
            if e.value < 0 or e.value > e.ty.mask:
                self.report("const-out-of-range", f"0x{e.value:x} does not fit {e.ty.name}")
            return e.ty
        if isinstance(e, RdTmp):
            if e.index not in self.block.temps:
                self.report("undeclared-temp", f"t{e.index} is not declared")
                return None
            if e.index not in self.written:
                self.report("read-before-write", f"t{e.index} read before any write")
            return self.block.temps[e.index]
        if isinstance(e, Get):
            if e.offset < 0:
                self.report("type-mismatch", f"negative guest offset {e.offset}")
            return e.ty
        if isinstance(e, Load):
            self.check_expr(e.addr, IrType.I64)
            return e.ty
        if isinstance(e, Binop):
            sig = BINOP_SIGS.get(e.op)
            if sig is None:
                self.report("type-mismatch", f"unknown binary op {e.op}")
                self._expr_type(e.lhs)
                self._expr_type(e.rhs)
                return None
            self.check_expr(e.lhs, sig[0])
            self.check_expr(e.rhs, sig[1])
            return sig[2]
        if isinstance(e, Unop):
            sig = UNOP_SIGS.get(e.op)
            if sig is None:
                self.report("type-mismatch", f"unknown unary op {e.op}")
                self._expr_type(e.arg)
                return None
            self.check_expr(e.arg, sig[0])
            return sig[1]
        if isinstance(e, ITE):
            self.check_expr(e.cond, IrType.I1)
            t_ift = self._expr_type(e.ift)
            t_iff = self._expr_type(e.iff)
            if t_ift is not None and t_iff is not None and t_ift is not t_iff:
                self.report("type-mismatch", f"ITE arms differ: {t_ift.name} vs {t_iff.name}")
            return t_ift or t_iff
        if isinstance(e, Opaque):
            for a in e.args:
                self._expr_type(a)
            return None
        raise TypeError(f"not an expression: {e!r}")

    def run(self) -> list[Violation]:
        written_by: dict[int, int] = {}
        for i, s in enumerate(self.block.stmts):
            self.index = i
            if isinstance(s, WrTmp):
                if s.target not in self.block.temps:
                    self.report("undeclared-temp", f"t{s.target} is not declared")
                if s.target in written_by:
                    self.report(
                        "multiple-write",
                        f"t{s.target} already written at stmt{written_by[s.target]}",
                    )
                self.check_expr(s.rhs, self.block.temps.get(s.target))
                written_by.setdefault(s.target, i)
                self.written.add(s.target)
            elif isinstance(s, Put):
                if s.offset < 0:
                    self.report("type-mismatch", f"negative guest offset {s.offset}")
                self.check_expr(s.rhs)
            elif isinstance(s, Store):
                self.check_expr(s.addr, IrType.I64)
                self.check_expr(s.data)
            elif isinstance(s, Exit):
                self.check_expr(s.guard, IrType.I1)
            elif isinstance(s, (IMark, NoOp)):
                pass
            else:
                raise TypeError(f"not a statement: {s!r}")
        self.index = None
        self.check_expr(self.block.next, IrType.I64)
        return self.violations


def validate(block: IrSb) -> list[Violation]:
    """Check all IrSb invariants. Returns an empty list iff the block is
    well-formed; violations are data, not errors. Pure: same input, same list."""
    return _Checker(block).run()
