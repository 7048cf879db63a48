"""Exception hierarchy shared across the toolchain."""

from __future__ import annotations


class LiftError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(LiftError):
    """Grammar violation in a `.vir` source text."""

    def __init__(self, line: int, column: int, message: str, snippet: str = ""):
        self.line = line
        self.column = column
        self.message = message
        self.snippet = snippet
        super().__init__(f"line {line}, col {column}: {message}")


class DuplicateAddressError(ParseError):
    """Two IRSB sections in one program share an address."""


class ValidationError(LiftError):
    """A grammar-valid block violates the IR well-formedness rules."""

    def __init__(self, violations):
        self.violations = list(violations)
        detail = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid block: {detail}")


class InterpError(LiftError):
    """Concrete evaluation failed. `stmt_index` is attached by exec_block."""

    kind = "interp-error"

    def __init__(self, message: str, stmt_index: int | None = None):
        self.stmt_index = stmt_index
        super().__init__(message)

    def at(self, stmt_index: int) -> "InterpError":
        if self.stmt_index is None:
            self.stmt_index = stmt_index
        return self


class DivByZeroError(InterpError):
    kind = "div-by-zero"


class OpaqueOpError(InterpError):
    kind = "opaque-op"


class GuestOutOfRangeError(InterpError):
    kind = "guest-out-of-range"


class ConfigError(LiftError):
    """Bad or incomplete run/backend configuration."""


class ReplayMissError(LiftError):
    """Replay backend has no recorded response for a candidate."""


class IntegrationError(LiftError):
    """Reintegrating a proposal produced a block that fails validation."""

    def __init__(self, message: str, violations=()):
        self.violations = list(violations)
        super().__init__(message)
