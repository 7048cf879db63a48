"""Statement-level rewriting: candidates, backends, sanitization, and
verified reintegration.

Three interchangeable backends produce replacement proposals. `rule` applies
the built-in peephole rules R1-R7, `llm` posts a prompt to a chat-completion
endpoint, and `replay` looks responses up in a recorded transcript so runs
are reproducible offline. Whatever the source, a proposal only survives if
it parses, honors the replacement contract, and verifies against the current
block; everything else keeps the original statement.
"""

from __future__ import annotations

import base64
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import requests

from .cost import DEFAULT_WEIGHTS, WeightTable, rank_statements
from .errors import ConfigError, IntegrationError, ParseError, ReplayMissError
from .interp import expr_type
from .ir import (
    BINOP_SIGS,
    UNOP_SIGS,
    Binop,
    Const,
    Exit,
    Expr,
    Get,
    IMark,
    IrSb,
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
    block_temps_referenced,
    expr_reads,
    stmt_exprs,
    temps_read,
    validate,
    walk_expr,
)
from .errors import OpaqueOpError
from .text import parse_statement_body, print_irsb, print_stmt_body
from .verify import Verdict, VerifyPolicy, verify_rewrite

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RewriteCandidate:
    block_addr: int
    stmt_index: int
    original: Statement
    block_context: IrSb


@dataclass(frozen=True)
class Rule:
    rule_id: str


@dataclass(frozen=True)
class Llm:
    raw_text: str


@dataclass(frozen=True)
class Replay:
    file: str
    line: int


Provenance = Union[Rule, Llm, Replay]


class Status(Enum):
    SANITIZED = "Sanitized"
    REJECTED_SYNTAX = "RejectedSyntax"
    REJECTED_CONTRACT = "RejectedContract"


@dataclass(frozen=True)
class RewriteProposal:
    replacement: Optional[Statement]
    provenance: Provenance
    status: Status
    reason: str = ""

    @property
    def sanitized(self) -> bool:
        return self.status is Status.SANITIZED


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "rule"
    endpoint: str = ""
    model_name: str = ""
    api_key_env: str = "LIFT_API_KEY"
    max_parallel: int = 4
    timeout: float = 30.0
    replay_path: str = ""


def check_backend_config(cfg: BackendConfig) -> None:
    if cfg.kind not in ("rule", "llm", "replay"):
        raise ConfigError(f"unknown backend kind {cfg.kind!r}")
    if cfg.kind == "llm":
        if not cfg.endpoint or not cfg.model_name:
            raise ConfigError("llm backend requires --endpoint and --model")
        if not os.environ.get(cfg.api_key_env):
            raise ConfigError(f"environment variable {cfg.api_key_env} is not set")
    if cfg.kind == "replay" and not cfg.replay_path:
        raise ConfigError("replay backend requires a replay file path")


# --- Prompting ---------------------------------------------------------------------

SYSTEM_MESSAGE = (
    "You optimize one VEX-style IR statement at a time. Reply with exactly one "
    "replacement statement line in the same syntax as the input, or the literal "
    "line NoOp if the statement can be removed. No commentary, no code fences."
)


def build_prompt(c: RewriteCandidate) -> str:
    """Deterministic prompt: the whole block for context, the target line,
    and the replacement contract."""
    body = print_stmt_body(c.original)
    return (
        "Here is an IR super-block:\n"
        "\n"
        f"{print_irsb(c.block_context)}"
        "\n"
        f"Rewrite statement {c.stmt_index:02d}:\n"
        "\n"
        f"    {body}\n"
        "\n"
        "Produce a functionally equivalent statement that is cheaper: fold "
        "constants, drop redundant operations, or reply NoOp if the statement "
        "has no effect. Keep the same target temporary, guest offset, or store "
        "form; never touch exits. Reply with exactly one statement line and "
        "nothing else.\n"
    )


# --- Sanitization ------------------------------------------------------------------


def _contract_kind_error(orig: Statement, new: Statement) -> Optional[str]:
    if isinstance(orig, Exit):
        if new != orig:
            return "exit statements are frozen; only the identical exit is allowed"
        return None
    if isinstance(new, NoOp):
        return None
    if isinstance(orig, WrTmp):
        if not isinstance(new, WrTmp):
            return f"replacement must assign t{orig.target} or be NoOp"
        if new.target != orig.target:
            return f"target temp changed from t{orig.target} to t{new.target}"
        return None
    if isinstance(orig, Put):
        if not isinstance(new, Put):
            return "replacement must be a PUT to the same offset or NoOp"
        if new.offset != orig.offset:
            return f"guest offset changed from {orig.offset} to {new.offset}"
        return None
    if isinstance(orig, Store):
        if not isinstance(new, Store):
            return "replacement must be a STOREle or NoOp"
        return None
    return "metadata statements cannot be rewritten"


def sanitize(
    raw: str,
    candidate: RewriteCandidate,
    provenance: Optional[Provenance] = None,
) -> RewriteProposal:
    """Turn a raw backend response into a checked proposal.

    Strips code fences and blank lines, then scans the remaining lines last
    to first for one that parses as a statement body (models tend to put the
    answer last when they add commentary). The parsed statement must target
    the same temp/offset/store form as the original (or be NoOp), type-check
    in the block, and read only temps defined before the statement.
    """
    prov = provenance if provenance is not None else Llm(raw)
    lines = [ln for ln in raw.split("\n") if ln.strip() and not ln.strip().startswith("```")]
    if not lines:
        return RewriteProposal(None, prov, Status.REJECTED_SYNTAX, "empty response")

    block = candidate.block_context
    stmt: Optional[Statement] = None
    last_err: Optional[ParseError] = None
    for ln in reversed(lines):
        try:
            stmt = parse_statement_body(ln, block.temps)
            break
        except ParseError as err:
            last_err = err
    if stmt is None:
        detail = last_err.message if last_err else "no content"
        return RewriteProposal(
            None, prov, Status.REJECTED_SYNTAX, f"no line parses as a statement ({detail})"
        )

    kind_err = _contract_kind_error(candidate.original, stmt)
    if kind_err is not None:
        return RewriteProposal(None, prov, Status.REJECTED_CONTRACT, kind_err)

    trial_stmts = list(block.stmts)
    trial_stmts[candidate.stmt_index] = stmt
    trial = IrSb(block.addr, block.temps, tuple(trial_stmts), block.next, block.next_jumpkind)
    violations = validate(trial)
    if violations:
        detail = "; ".join(str(v) for v in violations[:3])
        return RewriteProposal(None, prov, Status.REJECTED_CONTRACT, detail)

    return RewriteProposal(stmt, prov, Status.SANITIZED)


# --- Peephole rules ----------------------------------------------------------------


def _is_const(e: Expr, value: int) -> bool:
    return isinstance(e, Const) and e.value == value


def _is_ones(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == e.ty.mask


def _has_fault_risk(e: Expr) -> bool:
    """True if evaluating e could raise (division or opaque op)."""
    return any(
        isinstance(n, Opaque) or (isinstance(n, Binop) and n.op.startswith("Div"))
        for n in walk_expr(e)
    )


def _contains_load_or_opaque(e: Expr) -> bool:
    return any(isinstance(n, (Load, Opaque)) for n in walk_expr(e))


def _sgn(v: int, bits: int) -> int:
    return v - (1 << bits) if v >= (1 << (bits - 1)) else v


def _fold_binop(op: str, a: int, b: int) -> Optional[int]:
    """Constant folding, implemented with plain integer arithmetic rather
    than the interpreter's bitwise route so the two act as cross-checks.
    Returns None for div-by-zero (the statement is left alone)."""
    w = BINOP_SIGS[op][0].bits
    size = 1 << w
    if op.startswith("Add"):
        return (a + b) % size
    if op.startswith("Sub"):
        return (a - b) % size
    if op.startswith("Mul"):
        return (a * b) % size
    if op.startswith("And"):
        return a & b
    if op.startswith("Or"):
        return a | b
    if op.startswith("Xor"):
        return a ^ b
    if op.startswith("Shl"):
        return (a * 2**b) % size if b < w else 0
    if op.startswith("Shr"):
        return a // 2**b if b < w else 0
    if op.startswith("Sar"):
        s = _sgn(a, w)
        if b >= w:
            return size - 1 if s < 0 else 0
        return (s // 2**b) % size
    if op.startswith("CmpEQ"):
        return int(a == b)
    if op.startswith("CmpNE"):
        return int(a != b)
    if op == "DivU64":
        return a // b if b else None
    if op == "DivS64":
        if b == 0:
            return None
        sa, sb = _sgn(a, 64), _sgn(b, 64)
        q = sa // sb
        if q < 0 and q * sb != sa:
            q += 1  # floor quotient -> truncation toward zero
        return q % size
    if op == "CmpLT64S":
        return int(_sgn(a, 64) < _sgn(b, 64))
    if op == "CmpLE64S":
        return int(_sgn(a, 64) <= _sgn(b, 64))
    if op == "CmpLT64U":
        return int(a < b)
    if op == "CmpLE64U":
        return int(a <= b)
    raise AssertionError(op)


def _fold_unop(op: str, a: int) -> int:
    if op.startswith("Not"):
        return UNOP_SIGS[op][1].mask - a
    if op == "32Sto64":
        return _sgn(a, 32) % (1 << 64)
    if op in ("1Uto64", "8Uto64", "32Uto64"):
        return a
    if op == "64to32":
        return a % (1 << 32)
    if op == "64to8":
        return a % 256
    if op == "64to1":
        return a % 2
    raise AssertionError(op)


def _simplify_root(e: Expr) -> Optional[tuple[Expr, str]]:
    """R1-R4 on the root of one expression tree. First match wins."""
    if isinstance(e, Binop):
        op, lhs, rhs = e.op, e.lhs, e.rhs
        # R1: identity elements
        if op.startswith(("Add", "Or", "Xor")):
            if _is_const(rhs, 0):
                return lhs, "R1"
            if _is_const(lhs, 0):
                return rhs, "R1"
        elif op.startswith(("Sub", "Shl", "Shr", "Sar")):
            if _is_const(rhs, 0):
                return lhs, "R1"
        elif op.startswith("Mul"):
            if _is_const(rhs, 1):
                return lhs, "R1"
            if _is_const(lhs, 1):
                return rhs, "R1"
        elif op.startswith("And"):
            if _is_ones(rhs):
                return lhs, "R1"
            if _is_ones(lhs):
                return rhs, "R1"
        # R2: constant folding
        if isinstance(lhs, Const) and isinstance(rhs, Const):
            folded = _fold_binop(op, lhs.value, rhs.value)
            if folded is not None:
                return Const(folded, BINOP_SIGS[op][2]), "R2"
        # R3: self-cancelling operands
        if lhs == rhs and not _has_fault_risk(lhs):
            if op.startswith(("Xor", "Sub")):
                return Const(0, BINOP_SIGS[op][2]), "R3"
            if op.startswith(("And", "Or")):
                return lhs, "R3"
    elif isinstance(e, Unop):
        if isinstance(e.arg, Const):
            return Const(_fold_unop(e.op, e.arg.value), UNOP_SIGS[e.op][1]), "R2"
        # R4: double complement
        if e.op.startswith("Not") and isinstance(e.arg, Unop) and e.arg.op == e.op:
            return e.arg.arg, "R4"
    return None


def _overlaps(off_a: int, size_a: int, off_b: int, size_b: int) -> bool:
    return off_a < off_b + size_b and off_b < off_a + size_a


def _dead_wrtmp(block: IrSb, index: int, s: WrTmp) -> bool:
    if _has_fault_risk(s.rhs):
        return False
    for other in block.stmts:
        if s.target in temps_read(other):
            return False
    return s.target not in expr_reads(block.next)


def _redundant_put(block: IrSb, index: int, s: Put) -> bool:
    """A later Put fully covers this one with no intervening exit, fault
    risk, or guest read of the covered bytes."""
    if _has_fault_risk(s.rhs):
        return False
    try:
        width = expr_type(s.rhs, block.temps).size_bytes
    except (OpaqueOpError, KeyError):
        return False
    for m in range(index + 1, len(block.stmts)):
        t = block.stmts[m]
        if isinstance(t, (IMark, NoOp)):
            continue
        if isinstance(t, Exit):
            return False
        if any(_has_fault_risk(top) for top in stmt_exprs(t)):
            return False
        for top in stmt_exprs(t):
            for n in walk_expr(top):
                if isinstance(n, Get) and _overlaps(n.offset, n.ty.size_bytes, s.offset, width):
                    return False
        if isinstance(t, Put) and t.offset == s.offset:
            try:
                t_width = expr_type(t.rhs, block.temps).size_bytes
            except (OpaqueOpError, KeyError):
                return False
            if t_width >= width:
                return True
    return False


def _merged_store(block: IrSb, index: int, s: Store) -> bool:
    """The immediately following real statement is a Store to a syntactically
    identical address that fully overwrites this one."""
    if _has_fault_risk(s.data) or _has_fault_risk(s.addr):
        return False
    j = index + 1
    while j < len(block.stmts) and isinstance(block.stmts[j], (IMark, NoOp)):
        j += 1
    if j >= len(block.stmts):
        return False
    t = block.stmts[j]
    if not isinstance(t, Store) or t.addr != s.addr:
        return False
    # The elimination must not change what the survivor reads or writes:
    # a Load in the survivor could observe this store's bytes.
    if _contains_load_or_opaque(t.addr) or _contains_load_or_opaque(t.data):
        return False
    try:
        return (
            expr_type(t.data, block.temps).size_bytes
            >= expr_type(s.data, block.temps).size_bytes
        )
    except (OpaqueOpError, KeyError):
        return False


def _rule_proposal(replacement: Statement, rule_id: str) -> RewriteProposal:
    return RewriteProposal(replacement, Rule(rule_id), Status.SANITIZED)


def rule_rewrite(c: RewriteCandidate) -> Optional[RewriteProposal]:
    """Apply the first matching peephole rule, or None.

    R1 identity elements, R2 constant folding, R3 self-cancel, R4 double
    complement (all on expression roots); R5 store merged into an adjacent
    same-address store; R6 Put fully covered by a later Put; R7 dead WrTmp.
    Exits are never rewritten.
    """
    s = c.original
    if isinstance(s, WrTmp):
        hit = _simplify_root(s.rhs)
        if hit:
            return _rule_proposal(WrTmp(s.target, hit[0]), hit[1])
        if _dead_wrtmp(c.block_context, c.stmt_index, s):
            return _rule_proposal(NoOp(), "R7")
    elif isinstance(s, Put):
        hit = _simplify_root(s.rhs)
        if hit:
            return _rule_proposal(Put(s.offset, hit[0]), hit[1])
        if _redundant_put(c.block_context, c.stmt_index, s):
            return _rule_proposal(NoOp(), "R6")
    elif isinstance(s, Store):
        hit = _simplify_root(s.addr)
        if hit:
            return _rule_proposal(Store(hit[0], s.data), hit[1])
        hit = _simplify_root(s.data)
        if hit:
            return _rule_proposal(Store(s.addr, hit[0]), hit[1])
        if _merged_store(c.block_context, c.stmt_index, s):
            return _rule_proposal(NoOp(), "R5")
    return None


# --- Backends ----------------------------------------------------------------------


def _llm_request(c: RewriteCandidate, cfg: BackendConfig) -> RewriteProposal:
    key = os.environ.get(cfg.api_key_env, "")
    body = {
        "model": cfg.model_name,
        "messages": [
            {"role": "system", "content": SYSTEM_MESSAGE},
            {"role": "user", "content": build_prompt(c)},
        ],
        "temperature": 0,
    }
    try:
        resp = requests.post(
            cfg.endpoint,
            json=body,
            headers={"Authorization": f"Bearer {key}"},
            timeout=cfg.timeout,
        )
        resp.raise_for_status()
        raw = resp.json()["choices"][0]["message"]["content"]
        if not isinstance(raw, str):
            raise TypeError("response content is not text")
    except (requests.RequestException, ValueError, LookupError, TypeError) as err:
        return RewriteProposal(None, Llm(""), Status.REJECTED_SYNTAX, f"backend-error: {err}")
    return sanitize(raw, c, Llm(raw))


def parse_replay_file(path: str) -> dict[tuple[int, int], tuple[str, int]]:
    """Replay records: one `block_addr \\t stmt_index \\t base64(response)`
    per line; `#` lines are comments."""
    records: dict[tuple[int, int], tuple[str, int]] = {}
    try:
        content = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read replay file {path}: {err}") from None
    for line_no, line in enumerate(content.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ConfigError(f"{path}:{line_no}: expected 3 tab-separated fields")
        try:
            addr = int(parts[0], 16) if parts[0].lower().startswith("0x") else int(parts[0])
            idx = int(parts[1])
            raw = base64.b64decode(parts[2], validate=True).decode("utf-8")
        except (ValueError, UnicodeDecodeError) as err:
            raise ConfigError(f"{path}:{line_no}: bad replay record: {err}") from None
        records[(addr, idx)] = (raw, line_no)
    return records


def write_replay_file(path: str, records: list[tuple[int, int, str]]) -> None:
    lines = [
        f"0x{addr:x}\t{idx}\t{base64.b64encode(raw.encode('utf-8')).decode('ascii')}"
        for addr, idx, raw in records
    ]
    Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


_replay_cache: dict[tuple[str, int, int], dict[tuple[int, int], tuple[str, int]]] = {}


def _load_replay(path: str) -> dict[tuple[int, int], tuple[str, int]]:
    try:
        st = os.stat(path)
    except OSError as err:
        raise ConfigError(f"cannot read replay file {path}: {err}") from None
    key = (os.path.abspath(path), st.st_mtime_ns, st.st_size)
    if key not in _replay_cache:
        _replay_cache[key] = parse_replay_file(path)
    return _replay_cache[key]


def _replay_request(c: RewriteCandidate, cfg: BackendConfig) -> RewriteProposal:
    records = _load_replay(cfg.replay_path)
    entry = records.get((c.block_addr, c.stmt_index))
    if entry is None:
        raise ReplayMissError(
            f"no recorded response for block 0x{c.block_addr:x} stmt {c.stmt_index}"
        )
    raw, line_no = entry
    return sanitize(raw, c, Replay(cfg.replay_path, line_no))


def backend_request(c: RewriteCandidate, cfg: BackendConfig) -> Optional[RewriteProposal]:
    """Dispatch one candidate to the configured backend. Only the rule
    backend may return None (no rule matched); transport failures come back
    as RejectedSyntax so the original statement is kept."""
    check_backend_config(cfg)
    if cfg.kind == "rule":
        return rule_rewrite(c)
    if cfg.kind == "llm":
        return _llm_request(c, cfg)
    return _replay_request(c, cfg)


# --- Reintegration -----------------------------------------------------------------


def reintegrate(block: IrSb, proposals: list[tuple[int, RewriteProposal]]) -> IrSb:
    """Replace statements in place and prune temp declarations that are no
    longer referenced. The result must validate; a failure raises
    IntegrationError and leaves the input untouched."""
    indices = [i for i, _ in proposals]
    if len(set(indices)) != len(indices):
        raise IntegrationError("duplicate statement indices in proposals")
    stmts = list(block.stmts)
    for i, p in proposals:
        if not p.sanitized or p.replacement is None:
            raise IntegrationError(f"proposal for stmt {i} is not sanitized")
        if not 0 <= i < len(stmts):
            raise IntegrationError(f"statement index {i} out of range")
        stmts[i] = p.replacement
    new_stmts = tuple(stmts)
    trial = IrSb(block.addr, block.temps, new_stmts, block.next, block.next_jumpkind)
    referenced = block_temps_referenced(trial)
    temps = {i: ty for i, ty in block.temps.items() if i in referenced}
    result = IrSb(block.addr, temps, new_stmts, block.next, block.next_jumpkind)
    violations = validate(result)
    if violations:
        detail = "; ".join(str(v) for v in violations[:3])
        raise IntegrationError(f"reintegrated block fails validation: {detail}", violations)
    return result


# --- Whole-program driver ----------------------------------------------------------


@dataclass
class LogEntry:
    block_addr: int
    stmt_index: int
    original: str
    proposal: Optional[RewriteProposal]
    verdict: Optional[Verdict]
    retained: bool
    reason: str


@dataclass
class FinalCheck:
    block_addr: int
    verdict: Verdict
    reverted: bool


@dataclass
class RewriteLog:
    entries: list[LogEntry] = field(default_factory=list)
    final_checks: list[FinalCheck] = field(default_factory=list)

    @property
    def retained_count(self) -> int:
        return sum(1 for e in self.entries if e.retained)

    @property
    def any_final_mismatch(self) -> bool:
        return any(c.reverted for c in self.final_checks)

    def as_json_dict(self) -> dict:
        return {
            "candidates": len(self.entries),
            "retained": self.retained_count,
            "entries": [_entry_json(e) for e in self.entries],
            "final_checks": [
                {
                    "block_addr": f"0x{c.block_addr:x}",
                    "verdict": _verdict_json(c.verdict),
                    "reverted": c.reverted,
                }
                for c in self.final_checks
            ],
        }


def _provenance_json(p: Provenance) -> dict:
    if isinstance(p, Rule):
        return {"kind": "rule", "rule": p.rule_id}
    if isinstance(p, Llm):
        return {"kind": "llm", "raw": p.raw_text}
    return {"kind": "replay", "file": p.file, "line": p.line}


def _verdict_json(v: Optional[Verdict]) -> Optional[dict]:
    if v is None:
        return None
    return {
        "kind": v.kind.value,
        "trials": v.trials,
        "counterexample_seed": None
        if v.counterexample_seed is None
        else f"0x{v.counterexample_seed:x}",
        "first_divergence": v.first_divergence,
        "reason": v.reason,
    }


def _entry_json(e: LogEntry) -> dict:
    proposal = None
    if e.proposal is not None:
        proposal = {
            "status": e.proposal.status.value,
            "reason": e.proposal.reason,
            "replacement": None
            if e.proposal.replacement is None
            else print_stmt_body(e.proposal.replacement),
            "provenance": _provenance_json(e.proposal.provenance),
        }
    return {
        "block_addr": f"0x{e.block_addr:x}",
        "stmt_index": e.stmt_index,
        "original": e.original,
        "proposal": proposal,
        "verdict": _verdict_json(e.verdict),
        "retained": e.retained,
        "reason": e.reason,
    }


def _is_rule(p: RewriteProposal, rule_id: str) -> bool:
    return isinstance(p.provenance, Rule) and p.provenance.rule_id == rule_id


def optimize_program(
    program: Program,
    k: int,
    cfg: BackendConfig = BackendConfig(),
    weights: WeightTable = DEFAULT_WEIGHTS,
    policy: VerifyPolicy = VerifyPolicy(),
) -> tuple[Program, RewriteLog]:
    """Rank the top-k statements, request proposals, and apply each proposal
    to its block in ascending statement order, verifying every step against
    the block as accepted so far. Store merges (R5) verify against the final
    memory image; everything else requires an identical write list. Changed
    blocks get a final original-vs-result verification; an unexpected
    mismatch there reverts the block and is flagged on the log.
    """
    check_backend_config(cfg)
    ranked = rank_statements(program, weights, max(0, k))
    candidates = [
        RewriteCandidate(
            r.block_addr,
            r.stmt_index,
            program.blocks[r.block_addr].stmts[r.stmt_index],
            program.blocks[r.block_addr],
        )
        for r in ranked
    ]

    if cfg.kind == "llm" and len(candidates) > 1 and cfg.max_parallel > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_parallel) as pool:
            proposals = list(pool.map(lambda c: backend_request(c, cfg), candidates))
    else:
        proposals = [backend_request(c, cfg) for c in candidates]

    per_block: dict[int, list[tuple[RewriteCandidate, Optional[RewriteProposal]]]] = {}
    for cand, prop in zip(candidates, proposals):
        per_block.setdefault(cand.block_addr, []).append((cand, prop))

    log = RewriteLog()
    new_blocks: dict[int, IrSb] = {}
    for addr, block in program.blocks.items():
        current = block
        used_r5 = False
        for cand, prop in sorted(per_block.get(addr, []), key=lambda it: it[0].stmt_index):
            idx = cand.stmt_index
            body = print_stmt_body(cand.original)
            if prop is None:
                log.entries.append(LogEntry(addr, idx, body, None, None, False, "no rule matched"))
                continue
            if not prop.sanitized:
                log.entries.append(
                    LogEntry(
                        addr, idx, body, prop, None, False,
                        f"{prop.status.value}: {prop.reason}",
                    )
                )
                continue
            if prop.replacement == cand.original:
                log.entries.append(
                    LogEntry(addr, idx, body, prop, None, False, "replacement identical to original")
                )
                continue
            try:
                trial = reintegrate(current, [(idx, prop)])
            except IntegrationError as err:
                logger.warning("0x%x stmt %d: %s", addr, idx, err)
                log.entries.append(
                    LogEntry(addr, idx, body, prop, None, False, f"integration failed: {err}")
                )
                continue
            step_policy = replace(policy, memory_image=True) if _is_rule(prop, "R5") else policy
            verdict = verify_rewrite(current, trial, step_policy)
            if verdict.accepted:
                current = trial
                used_r5 = used_r5 or _is_rule(prop, "R5")
                log.entries.append(
                    LogEntry(addr, idx, body, prop, verdict, True, f"verified {verdict.kind.value}")
                )
            else:
                detail = verdict.first_divergence or verdict.reason
                log.entries.append(
                    LogEntry(
                        addr, idx, body, prop, verdict, False,
                        f"{verdict.kind.value}: {detail}",
                    )
                )

        if current is not block:
            final_policy = replace(policy, memory_image=policy.memory_image or used_r5)
            final_verdict = verify_rewrite(block, current, final_policy)
            if final_verdict.accepted:
                log.final_checks.append(FinalCheck(addr, final_verdict, False))
            else:
                logger.warning(
                    "block 0x%x failed final verification (%s); reverting",
                    addr,
                    final_verdict.kind.value,
                )
                log.final_checks.append(FinalCheck(addr, final_verdict, True))
                current = block
        new_blocks[addr] = current

    return Program(new_blocks, program.name), log
