"""Toolchain for optimizing textual IR super-blocks: parse, profile, rank,
rewrite (rule, LLM, or replay backed), verify, and benchmark."""

from .bench import (
    ComparisonReport,
    MetricsReport,
    collect_metrics,
    compare_reports,
    parse_structured_report,
    render_report,
)
from .corpus import GeneratorConfig, GroundTruth, generate, preset_config
from .cost import (
    DEFAULT_WEIGHTS,
    BlockProfile,
    CostReport,
    RankedStatement,
    WeightTable,
    block_static_cost,
    profile_program,
    rank_statements,
    statement_cost,
)
from .errors import (
    ConfigError,
    DivByZeroError,
    DuplicateAddressError,
    GuestOutOfRangeError,
    IntegrationError,
    InterpError,
    LiftError,
    OpaqueOpError,
    ParseError,
    ReplayMissError,
    ValidationError,
)
from .interp import ExitKind, ExitOutcome, MachineState, eval_expr, exec_block, mix64
from .ir import (
    GUEST_PC_OFFSET,
    GUEST_SIZE,
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
    Program,
    Put,
    RdTmp,
    Statement,
    Store,
    Unop,
    Violation,
    WrTmp,
    validate,
)
from .rewrite import (
    BackendConfig,
    RewriteCandidate,
    RewriteLog,
    RewriteProposal,
    Status,
    backend_request,
    build_prompt,
    optimize_program,
    rule_rewrite,
    sanitize,
)
from .text import parse_irsb, parse_program, print_irsb, print_program
from .verify import (
    StructuralDiff,
    Verdict,
    VerdictKind,
    VerifyPolicy,
    differential_verify,
    structural_compare,
    verify_rewrite,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
