"""Deterministic synthetic block generator with ground-truth bookkeeping.

Each generated block is a plausible lifted super-block (instruction marker,
guest-state reads, arithmetic over temps, loads/stores, optional side exits)
into which a controlled number of redundancies is injected: identity
arithmetic (R1), adjacent same-address stores (R5), doubly written guest
offsets (R6), and dead temp assignments (R7). The ground truth records every
injection so optimizer effectiveness can be scored exactly.

Organic (non-injected) statements deliberately avoid identity constants,
equal operand pairs, constant-only operators, and nested complements, so the
expression-level rules R1-R4 have nothing accidental to fire on.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .interp import mix64
from .ir import (
    Binop,
    Const,
    Exit,
    Get,
    IMark,
    IrSb,
    IrType,
    JumpKind,
    Load,
    Program,
    Put,
    RdTmp,
    Statement,
    Store,
    Unop,
    WrTmp,
    validate,
)

M64 = (1 << 64) - 1

DEFAULT_OP_MIX: dict[str, int] = {
    "binop": 5,
    "shift": 1,
    "unop": 1,
    "load": 1,
    "get": 2,
    "put": 2,
    "store": 1,
}

# name -> (blocks, stmts_per_block, redundancy_rate, exits per block, mix tweaks)
PRESETS: dict[str, tuple[int, int, float, int, dict[str, int]]] = {
    "counter": (8, 12, 0.25, 1, {}),
    "branching": (10, 14, 0.25, 2, {}),
    "matrix": (10, 16, 0.25, 1, {"load": 4, "store": 3}),
    "methcall": (8, 12, 0.2, 1, {"get": 3, "put": 3}),
    "objinst": (9, 12, 0.2, 1, {"put": 3, "store": 2}),
    "heapsort": (12, 18, 0.25, 2, {"load": 3, "binop": 6}),
    "random": (6, 12, 0.3, 1, {}),
    "bigtest": (60, 42, 0.3, 2, {}),
    "bigprog": (48, 36, 0.25, 1, {}),
    "complexprog": (64, 40, 0.3, 2, {"unop": 2, "shift": 2}),
}

BASE_ADDR = 0x1000
BLOCK_STRIDE = 0x80


@dataclass(frozen=True)
class GeneratorConfig:
    blocks: int
    stmts_per_block: int
    redundancy_rate: float
    seed: int = 0
    exits: int = 1
    op_mix: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_OP_MIX))
    preset: Optional[str] = None


def preset_config(name: str, seed: int = 0) -> GeneratorConfig:
    if name not in PRESETS:
        known = ", ".join(sorted(PRESETS))
        raise ConfigError(f"unknown preset {name!r} (known: {known})")
    blocks, stmts, rate, exits, tweaks = PRESETS[name]
    mix = dict(DEFAULT_OP_MIX)
    mix.update(tweaks)
    return GeneratorConfig(
        blocks=blocks,
        stmts_per_block=stmts,
        redundancy_rate=rate,
        seed=seed,
        exits=exits,
        op_mix=mix,
        preset=name,
    )


@dataclass
class GroundTruth:
    """Injected redundancies: (block addr, stmt index) -> rule expected to
    fire (R1/R5/R6/R7)."""

    removable: dict[tuple[int, int], str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.removable)


def write_ground_truth(path: str, gt: GroundTruth) -> None:
    lines = [
        f"0x{addr:x}\t{idx}\t{rule}"
        for (addr, idx), rule in sorted(gt.removable.items())
    ]
    Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


def read_ground_truth(path: str) -> GroundTruth:
    gt = GroundTruth()
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ConfigError(f"{path}:{line_no}: expected 3 tab-separated fields")
        addr = int(parts[0], 16) if parts[0].lower().startswith("0x") else int(parts[0])
        gt.removable[(addr, int(parts[1]))] = parts[2]
    return gt


# Injection mix: dead temps dominate, then redundant puts and store pairs,
# with a sprinkle of identity arithmetic. Split by largest remainder so any
# count divides deterministically.
_INJECTION_WEIGHTS: tuple[tuple[str, int], ...] = (("R7", 5), ("R6", 3), ("R5", 3), ("R1", 1))


def _injection_mix(n: int) -> dict[str, int]:
    total = sum(w for _, w in _INJECTION_WEIGHTS)
    counts: dict[str, int] = {}
    remainders: list[tuple[float, int, str]] = []
    assigned = 0
    for order, (rule, w) in enumerate(_INJECTION_WEIGHTS):
        exact = n * w / total
        base = int(exact)
        counts[rule] = base
        assigned += base
        remainders.append((-(exact - base), order, rule))
    remainders.sort()
    i = 0
    while assigned < n:
        counts[remainders[i % len(remainders)][2]] += 1
        assigned += 1
        i += 1
    return counts


_GUEST_READ_OFFSETS = tuple(range(0, 64, 8))
_PUT_OFFSET_BASE = 64

_BINOPS = ("Add64", "Sub64", "Mul64", "And64", "Or64", "Xor64")
_SHIFTS = ("Shl64", "Shr64", "Sar64")

# R1 identity shapes: (op, identity const value factory, const side allowed)
_IDENTITY_SHAPES = (
    ("Add64", 0),
    ("Sub64", 0),
    ("Or64", 0),
    ("Xor64", 0),
    ("Shl64", 0),
    ("Mul64", 1),
    ("And64", M64),
)


class _BlockGen:
    def __init__(self, addr: int, rng: random.Random, op_mix: dict[str, int]):
        self.addr = addr
        self.rng = rng
        self.temps: dict[int, IrType] = {}
        self.stmts: list[Statement] = []
        self.live64: list[int] = []
        self.truth: list[tuple[int, str]] = []
        self._next_put_offset = _PUT_OFFSET_BASE
        self.kinds = list(op_mix.keys())
        self.kind_weights = [op_mix[k] for k in self.kinds]

    # -- plumbing

    def new_temp(self, ty: IrType) -> int:
        idx = len(self.temps)
        self.temps[idx] = ty
        return idx

    def emit(self, s: Statement) -> int:
        self.stmts.append(s)
        return len(self.stmts) - 1

    def write64(self, rhs) -> int:
        t = self.new_temp(IrType.I64)
        self.emit(WrTmp(t, rhs))
        self.live64.append(t)
        return t

    def pick(self) -> int:
        return self.rng.choice(self.live64)

    def pick_two(self) -> tuple[int, int]:
        a = self.pick()
        b = self.pick()
        while b == a and len(set(self.live64)) > 1:
            b = self.pick()
        return a, b

    def fresh_offset(self) -> int:
        o = self._next_put_offset
        self._next_put_offset += 8
        return o

    def const64(self) -> Const:
        v = self.rng.getrandbits(64)
        while v in (0, 1, M64):
            v = self.rng.getrandbits(64)
        return Const(v, IrType.I64)

    # -- organic statements

    def organic(self) -> None:
        kind = self.rng.choices(self.kinds, weights=self.kind_weights, k=1)[0]
        getattr(self, f"_organic_{kind}")()

    def _organic_binop(self) -> None:
        op = self.rng.choice(_BINOPS)
        if self.rng.random() < 0.6:
            a, b = self.pick_two()
            lhs, rhs = RdTmp(a), RdTmp(b)
            if lhs == rhs:
                rhs = self.const64()
        else:
            lhs, rhs = RdTmp(self.pick()), self.const64()
        self.write64(Binop(op, lhs, rhs))

    def _organic_shift(self) -> None:
        op = self.rng.choice(_SHIFTS)
        amount = Const(self.rng.randint(1, 7), IrType.I8)
        self.write64(Binop(op, RdTmp(self.pick()), amount))

    def _organic_unop(self) -> None:
        self.write64(Unop("Not64", RdTmp(self.pick())))

    def _organic_load(self) -> None:
        self.write64(Load(IrType.I64, RdTmp(self.pick())))

    def _organic_get(self) -> None:
        self.write64(Get(self.rng.choice(_GUEST_READ_OFFSETS), IrType.I64))

    def _organic_put(self) -> None:
        self.emit(Put(self.fresh_offset(), RdTmp(self.pick())))

    def _organic_store(self) -> None:
        addr = self.pick()
        prev = self.stmts[-1] if self.stmts else None
        # Dodge accidental adjacent same-address stores.
        if isinstance(prev, Store) and prev.addr == RdTmp(addr) and len(set(self.live64)) > 1:
            while RdTmp(addr) == prev.addr:
                addr = self.pick()
        self.emit(Store(RdTmp(addr), RdTmp(self.pick())))

    # -- injected redundancies

    def inject_r1(self) -> None:
        op, ident = self.rng.choice(_IDENTITY_SHAPES)
        src = RdTmp(self.pick())
        ident_ty = IrType.I8 if op in _SHIFTS else IrType.I64
        const = Const(ident, ident_ty)
        if op in ("Add64", "Or64", "Xor64", "Mul64", "And64") and self.rng.random() < 0.5:
            rhs = Binop(op, const, src)
        else:
            rhs = Binop(op, src, const)
        t = self.new_temp(IrType.I64)
        idx = self.emit(WrTmp(t, rhs))
        self.live64.append(t)
        self.truth.append((idx, "R1"))
        self.emit(Put(self.fresh_offset(), RdTmp(t)))

    def inject_r5(self) -> None:
        addr = RdTmp(self.pick())
        d1, d2 = self.pick_two()
        idx = self.emit(Store(addr, RdTmp(d1)))
        self.truth.append((idx, "R5"))
        self.emit(Store(addr, RdTmp(d2)))

    def inject_r6(self) -> None:
        offset = self.fresh_offset()
        v1, v2 = self.pick_two()
        idx = self.emit(Put(offset, RdTmp(v1)))
        self.truth.append((idx, "R6"))
        self.emit(Put(offset, RdTmp(v2)))

    def inject_r7(self) -> None:
        op = self.rng.choice(("Add64", "Xor64", "Mul64"))
        t = self.new_temp(IrType.I64)
        idx = self.emit(WrTmp(t, Binop(op, RdTmp(self.pick()), self.const64())))
        # target temp deliberately never read
        self.truth.append((idx, "R7"))

    def exit_unit(self) -> None:
        guard = self.new_temp(IrType.I1)
        # roughly a quarter of random 64-bit values fall below 2^62
        self.emit(
            WrTmp(
                guard,
                Binop("CmpLT64U", RdTmp(self.pick()), Const(1 << 62, IrType.I64)),
            )
        )
        target = self.addr + self.rng.choice((0x40, 0x80, 0xC0))
        self.emit(Exit(RdTmp(guard), target, JumpKind.BORING))

    # -- assembly

    def build(self, plan: list[str]) -> IrSb:
        self.emit(IMark(self.addr, 4, 0))
        for offset in (16, 24, 32):
            self.write64(Get(offset, IrType.I64))
        builders = {
            "R1": self.inject_r1,
            "R5": self.inject_r5,
            "R6": self.inject_r6,
            "R7": self.inject_r7,
            "organic": self.organic,
            "exit": self.exit_unit,
        }
        for kind in plan:
            builders[kind]()
        jk = self.rng.choices(
            (JumpKind.BORING, JumpKind.CALL, JumpKind.RET), weights=(8, 1, 1), k=1
        )[0]
        return IrSb(
            addr=self.addr,
            temps=self.temps,
            stmts=tuple(self.stmts),
            next=Const((self.addr + BLOCK_STRIDE) & M64, IrType.I64),
            next_jumpkind=jk,
        )


_HEADER_LEN = 4  # IMark + three guest reads
_UNIT_STMTS = {"R1": 2, "R5": 2, "R6": 2, "R7": 1, "organic": 1, "exit": 2}


def generate(cfg: GeneratorConfig) -> tuple[Program, GroundTruth]:
    """Build a program of cfg.blocks blocks with exactly
    floor(stmts_per_block * redundancy_rate) injected redundancies per block.
    Fully deterministic in cfg; every block passes validate."""
    if cfg.blocks < 0:
        raise ConfigError("blocks must be >= 0")
    if cfg.stmts_per_block < 1:
        raise ConfigError("stmts_per_block must be >= 1")
    if not 0.0 <= cfg.redundancy_rate <= 1.0:
        raise ConfigError("redundancy_rate must be within [0, 1]")
    if cfg.exits < 0:
        raise ConfigError("exits must be >= 0")
    mix = {k: w for k, w in cfg.op_mix.items() if w > 0}
    if not mix:
        raise ConfigError("op_mix has no positive weights")
    unknown = set(mix) - set(DEFAULT_OP_MIX)
    if unknown:
        raise ConfigError(f"unknown op_mix classes: {sorted(unknown)}")

    n_inj = int(cfg.stmts_per_block * cfg.redundancy_rate)
    inj_counts = _injection_mix(n_inj)
    inj_stmts = sum(_UNIT_STMTS[rule] * count for rule, count in inj_counts.items())
    budget = cfg.stmts_per_block - _HEADER_LEN - inj_stmts
    if budget < 0:
        raise ConfigError(
            f"stmts_per_block={cfg.stmts_per_block} cannot hold {n_inj} injections"
        )
    n_exits = min(cfg.exits, budget // 2)
    n_organic = budget - 2 * n_exits

    program = Program(name=cfg.preset or "corpus")
    truth = GroundTruth()
    for bi in range(cfg.blocks):
        rng = random.Random(mix64(cfg.seed, bi))
        plan = (
            [rule for rule, count in inj_counts.items() for _ in range(count)]
            + ["organic"] * n_organic
            + ["exit"] * n_exits
        )
        rng.shuffle(plan)
        gen = _BlockGen(BASE_ADDR + bi * BLOCK_STRIDE, rng, mix)
        block = gen.build(plan)
        violations = validate(block)
        if violations:
            raise AssertionError(f"generator produced an invalid block: {violations[0]}")
        program.blocks[block.addr] = block
        for idx, rule in gen.truth:
            truth.removable[(block.addr, idx)] = rule
    return program, truth
