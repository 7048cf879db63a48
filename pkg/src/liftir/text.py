"""Parser and canonical printer for the `.vir` textual IR format.

The format is line-oriented:

    IRSB @ 0x1000 {
      t0:Ity_I64 t1:Ity_I64

      00 | ------ IMark(0x1000,4,0) ------
      01 | t0 = GET:I64(offset=16)
      02 | t1 = Add64(t0,0x0000000000000008)
      03 | PUT(offset=16) = t1
      NEXT: PUT(offset=184) = 0x0000000000001004; Ijk_Boring
    }

`#` starts a comment to end of line. Statement indices in files are
informative only; the parser renumbers. Constants are typed by hex-digit
width (16 digits I64, 8 I32, 4 I16, 2 I8, bare 0/1 is I1) unless an op
signature fixes the operand type, which wins.
"""

from __future__ import annotations

import re
from typing import Optional

from .errors import DuplicateAddressError, ParseError, ValidationError
from .ir import (
    BINOP_SIGS,
    GUEST_PC_OFFSET,
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
    Program,
    Put,
    RdTmp,
    Statement,
    Store,
    Unop,
    WrTmp,
    validate,
)

_WORD_RE = re.compile(r"[A-Za-z0-9_]+")
_TMP_RE = re.compile(r"t\d+\Z")
_HEX_RE = re.compile(r"0[xX][0-9a-fA-F]+\Z")
_DEC_RE = re.compile(r"\d+\Z")
_INDEX_RE = re.compile(r"\s*(\d+)\s*\|(.*)\Z")
_IMARK_RE = re.compile(
    r"\s*-{2,}\s*IMark\(\s*(0[xX][0-9a-fA-F]+|\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\)\s*-{2,}\s*\Z"
)
_HEADER_RE = re.compile(r"\s*IRSB\s*@\s*(0[xX][0-9a-fA-F]+|\d+)\s*\{\s*\Z")

_TY_BY_DECL = {t.decl: t for t in IrType}
_TY_BY_SHORT = {t.short: t for t in IrType}


def _int_lit(word: str) -> int:
    return int(word, 16) if word[:2].lower() == "0x" else int(word, 10)


class _Scan:
    """Cursor over one line of source text."""

    def __init__(self, text: str, line_no: int, col0: int = 0):
        self.text = text
        self.pos = 0
        self.line_no = line_no
        self.col0 = col0

    def error(self, message: str) -> "ParseError":
        raise ParseError(self.line_no, self.col0 + self.pos + 1, message, self.text.strip())

    def _skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def at_end(self) -> bool:
        self._skip_ws()
        return self.pos >= len(self.text)

    def expect_end(self) -> None:
        if not self.at_end():
            self.error("trailing text after statement")

    def expect(self, lit: str) -> None:
        self._skip_ws()
        if not self.text.startswith(lit, self.pos):
            self.error(f"expected {lit!r}")
        self.pos += len(lit)

    def try_take(self, lit: str) -> bool:
        self._skip_ws()
        if self.text.startswith(lit, self.pos):
            self.pos += len(lit)
            return True
        return False

    def lookahead(self) -> tuple[Optional[str], str]:
        """Next word and the character right after it, without consuming."""
        self._skip_ws()
        m = _WORD_RE.match(self.text, self.pos)
        if not m:
            return None, ""
        return m.group(), self.text[m.end() : m.end() + 1]

    def word(self) -> str:
        self._skip_ws()
        m = _WORD_RE.match(self.text, self.pos)
        if not m:
            self.error("expected a name")
        self.pos = m.end()
        return m.group()

    def number(self) -> int:
        w = self.word()
        if not (_DEC_RE.match(w) or _HEX_RE.match(w)):
            self.error(f"expected a number, got {w!r}")
        return _int_lit(w)

    def jumpkind(self) -> JumpKind:
        w = self.word()
        if w.startswith("Ijk_"):
            try:
                return JumpKind(w[4:])
            except ValueError:
                pass
        self.error(f"unknown jumpkind {w!r}")
        raise AssertionError  # unreachable


def _const_type_for_digits(sc: _Scan, digits: int) -> IrType:
    for ty in (IrType.I8, IrType.I16, IrType.I32, IrType.I64):
        if digits <= ty.bits // 4:
            return ty
    sc.error(f"constant wider than 64 bits ({digits} hex digits)")
    raise AssertionError


def _static_ty(e: Expr, temps: dict[int, IrType]) -> Optional[IrType]:
    """Best-effort expression type for threading expected widths into
    constants. None means unknown; validate() does the real checking."""
    if isinstance(e, Const):
        return e.ty
    if isinstance(e, RdTmp):
        return temps.get(e.index)
    if isinstance(e, (Get, Load)):
        return e.ty
    if isinstance(e, Binop):
        sig = BINOP_SIGS.get(e.op)
        return sig[2] if sig else None
    if isinstance(e, Unop):
        sig = UNOP_SIGS.get(e.op)
        return sig[1] if sig else None
    if isinstance(e, ITE):
        return _static_ty(e.ift, temps) or _static_ty(e.iff, temps)
    return None


def _parse_expr(sc: _Scan, temps: dict[int, IrType], expected: Optional[IrType]) -> Expr:
    w, after = sc.lookahead()
    if w is None:
        sc.error("expected an expression")
        raise AssertionError

    if _TMP_RE.match(w):
        sc.word()
        return RdTmp(int(w[1:]))

    if _HEX_RE.match(w):
        sc.word()
        ty = expected or _const_type_for_digits(sc, len(w) - 2)
        return Const(_int_lit(w), ty)

    if _DEC_RE.match(w):
        sc.word()
        value = int(w, 10)
        ty = expected or IrType.I1
        if value > ty.mask:
            sc.error(f"decimal constant {w} needs a 0x prefix")
        return Const(value, ty)

    if w == "GET" and after == ":":
        sc.word()
        sc.expect(":")
        ty = _TY_BY_SHORT.get(sc.word())
        if ty is None:
            sc.error("unknown type in GET")
        sc.expect("(")
        sc.expect("offset")
        sc.expect("=")
        offset = sc.number()
        sc.expect(")")
        return Get(offset, ty)

    if w == "LDle" and after == ":":
        sc.word()
        sc.expect(":")
        ty = _TY_BY_SHORT.get(sc.word())
        if ty is None:
            sc.error("unknown type in LDle")
        sc.expect("(")
        addr = _parse_expr(sc, temps, IrType.I64)
        sc.expect(")")
        return Load(ty, addr)

    sc.word()
    sc.expect("(")

    if w == "ITE":
        cond = _parse_expr(sc, temps, IrType.I1)
        sc.expect(",")
        ift = _parse_expr(sc, temps, expected)
        sc.expect(",")
        iff = _parse_expr(sc, temps, expected or _static_ty(ift, temps))
        sc.expect(")")
        return ITE(cond, ift, iff)

    if w in UNOP_SIGS:
        arg = _parse_expr(sc, temps, UNOP_SIGS[w][0])
        sc.expect(")")
        return Unop(w, arg)

    if w in BINOP_SIGS:
        sig = BINOP_SIGS[w]
        lhs = _parse_expr(sc, temps, sig[0])
        sc.expect(",")
        rhs = _parse_expr(sc, temps, sig[1])
        sc.expect(")")
        return Binop(w, lhs, rhs)

    # Unknown op name: keep as an opaque application.
    args: list[Expr] = []
    if not sc.try_take(")"):
        args.append(_parse_expr(sc, temps, None))
        while sc.try_take(","):
            args.append(_parse_expr(sc, temps, None))
        sc.expect(")")
    return Opaque(w, tuple(args))


def parse_statement_body(
    body: str,
    temps: dict[int, IrType],
    line_no: int = 1,
    col0: int = 0,
) -> Statement:
    """Parse one statement body. A leading "NN |" index prefix is allowed
    and ignored. Raises ParseError; does not validate temp discipline."""
    m = _INDEX_RE.match(body)
    if m:
        col0 += m.start(2)
        body = m.group(2)

    m = _IMARK_RE.match(body)
    if m:
        return IMark(_int_lit(m.group(1)), int(m.group(2)), int(m.group(3)))

    sc = _Scan(body, line_no, col0)
    w, _after = sc.lookahead()
    if w is None:
        sc.error("expected a statement")

    if w == "NoOp":
        sc.word()
        sc.expect_end()
        return NoOp()

    if w == "if":
        sc.word()
        sc.expect("(")
        guard = _parse_expr(sc, temps, IrType.I1)
        sc.expect(")")
        sc.expect("{")
        sc.expect("PUT")
        sc.expect("(")
        sc.expect("offset")
        sc.expect("=")
        sc.number()  # display-only PC slot; canonical form prints 184
        sc.expect(")")
        sc.expect("=")
        target = sc.number()
        sc.expect(";")
        jk = sc.jumpkind()
        sc.expect("}")
        sc.expect_end()
        return Exit(guard, target, jk)

    if w == "PUT":
        sc.word()
        sc.expect("(")
        sc.expect("offset")
        sc.expect("=")
        offset = sc.number()
        sc.expect(")")
        sc.expect("=")
        rhs = _parse_expr(sc, temps, None)
        sc.expect_end()
        return Put(offset, rhs)

    if w == "STOREle":
        sc.word()
        sc.expect("(")
        addr = _parse_expr(sc, temps, IrType.I64)
        sc.expect(")")
        sc.expect("=")
        data = _parse_expr(sc, temps, None)
        sc.expect_end()
        return Store(addr, data)

    if _TMP_RE.match(w):
        sc.word()
        target = int(w[1:])
        sc.expect("=")
        rhs = _parse_expr(sc, temps, temps.get(target))
        sc.expect_end()
        return WrTmp(target, rhs)

    sc.error(f"unrecognized statement {w!r}")
    raise AssertionError


def _parse_next_line(line: str, temps: dict[int, IrType], line_no: int) -> tuple[Expr, JumpKind]:
    sc = _Scan(line, line_no)
    sc.expect("NEXT")
    sc.expect(":")
    sc.expect("PUT")
    sc.expect("(")
    sc.expect("offset")
    sc.expect("=")
    sc.number()
    sc.expect(")")
    sc.expect("=")
    nxt = _parse_expr(sc, temps, IrType.I64)
    sc.expect(";")
    jk = sc.jumpkind()
    sc.expect_end()
    return nxt, jk


def _parse_decl_line(line: str, temps: dict[int, IrType], line_no: int) -> None:
    sc = _Scan(line, line_no)
    while not sc.at_end():
        w = sc.word()
        if not _TMP_RE.match(w):
            sc.error(f"expected a temp declaration, got {w!r}")
        index = int(w[1:])
        sc.expect(":")
        ty = _TY_BY_DECL.get(sc.word())
        if ty is None:
            sc.error(f"unknown type for t{index}")
        if index in temps:
            sc.error(f"t{index} declared twice")
        temps[index] = ty


class _BlockBuilder:
    def __init__(self, addr: int, header_line: int):
        self.addr = addr
        self.header_line = header_line
        self.temps: dict[int, IrType] = {}
        self.stmts: list[Statement] = []
        self.next: Optional[Expr] = None
        self.jumpkind: Optional[JumpKind] = None

    def finish(self, line_no: int) -> IrSb:
        if self.next is None:
            raise ParseError(line_no, 1, "block has no NEXT line", "}")
        block = IrSb(
            addr=self.addr,
            temps=self.temps,
            stmts=tuple(self.stmts),
            next=self.next,
            next_jumpkind=self.jumpkind or JumpKind.BORING,
        )
        violations = validate(block)
        if violations:
            raise ValidationError(violations)
        return block


def parse_program(text: str, name: str = "") -> Program:
    """Parse zero or more IRSB sections. Each block must pass validate;
    duplicate block addresses raise DuplicateAddressError."""
    blocks: dict[int, IrSb] = {}
    builder: Optional[_BlockBuilder] = None
    seen_stmts = False

    for line_no, raw in enumerate(text.split("\n"), 1):
        cut = raw.find("#")
        if cut != -1:
            raw = raw[:cut]
        stripped = raw.strip()
        if not stripped:
            continue

        if builder is None:
            m = _HEADER_RE.match(raw)
            if not m:
                raise ParseError(line_no, 1, "expected an IRSB header", stripped)
            addr = _int_lit(m.group(1))
            if addr in blocks:
                raise DuplicateAddressError(
                    line_no, 1, f"duplicate block address 0x{addr:x}", stripped
                )
            builder = _BlockBuilder(addr, line_no)
            seen_stmts = False
            continue

        if stripped == "}":
            if builder.next is None:
                raise ParseError(line_no, 1, "block has no NEXT line", stripped)
            blocks[builder.addr] = builder.finish(line_no)
            builder = None
            continue

        if builder.next is not None:
            raise ParseError(line_no, 1, "content after NEXT line", stripped)

        if stripped.startswith("NEXT"):
            builder.next, builder.jumpkind = _parse_next_line(raw, builder.temps, line_no)
            continue

        if _INDEX_RE.match(raw):
            seen_stmts = True
            builder.stmts.append(parse_statement_body(raw, builder.temps, line_no))
            continue

        if stripped.startswith("t"):
            if seen_stmts:
                raise ParseError(
                    line_no, 1, "temp declarations must precede statements", stripped
                )
            _parse_decl_line(raw, builder.temps, line_no)
            continue

        raise ParseError(line_no, 1, "unexpected line inside block", stripped)

    if builder is not None:
        raise ParseError(len(text.split("\n")), 1, "unterminated block (missing })", "")
    return Program(blocks=blocks, name=name)


def parse_irsb(text: str) -> IrSb:
    """Parse exactly one block."""
    program = parse_program(text)
    if len(program.blocks) != 1:
        raise ParseError(1, 1, f"expected exactly one IRSB, found {len(program.blocks)}", "")
    return next(iter(program.blocks.values()))


# --- Printing -------------------------------------------------------------------


def print_expr(e: Expr) -> str:
    if isinstance(e, Const):
        if e.ty is IrType.I1:
            return str(e.value)
        return f"0x{e.value:0{e.ty.bits // 4}x}"
    if isinstance(e, RdTmp):
        return f"t{e.index}"
    if isinstance(e, Get):
        return f"GET:{e.ty.short}(offset={e.offset})"
    if isinstance(e, Load):
        return f"LDle:{e.ty.short}({print_expr(e.addr)})"
    if isinstance(e, Binop):
        return f"{e.op}({print_expr(e.lhs)},{print_expr(e.rhs)})"
    if isinstance(e, Unop):
        return f"{e.op}({print_expr(e.arg)})"
    if isinstance(e, ITE):
        return f"ITE({print_expr(e.cond)},{print_expr(e.ift)},{print_expr(e.iff)})"
    if isinstance(e, Opaque):
        return f"{e.name}({','.join(print_expr(a) for a in e.args)})"
    raise TypeError(f"not an expression: {e!r}")


def print_stmt_body(s: Statement) -> str:
    if isinstance(s, IMark):
        return f"------ IMark(0x{s.addr:x},{s.length},{s.delta}) ------"
    if isinstance(s, WrTmp):
        return f"t{s.target} = {print_expr(s.rhs)}"
    if isinstance(s, Put):
        return f"PUT(offset={s.offset}) = {print_expr(s.rhs)}"
    if isinstance(s, Store):
        return f"STOREle({print_expr(s.addr)}) = {print_expr(s.data)}"
    if isinstance(s, Exit):
        return (
            f"if ({print_expr(s.guard)}) "
            f"{{ PUT(offset={GUEST_PC_OFFSET}) = 0x{s.target:x}; Ijk_{s.jumpkind.value} }}"
        )
    if isinstance(s, NoOp):
        return "NoOp"
    raise TypeError(f"not a statement: {s!r}")


def print_irsb(block: IrSb) -> str:
    lines = [f"IRSB @ 0x{block.addr:x} {{"]
    decls = [f"t{i}:{ty.decl}" for i, ty in sorted(block.temps.items())]
    for start in range(0, len(decls), 10):
        lines.append("  " + " ".join(decls[start : start + 10]))
    if decls:
        lines.append("")
    for i, s in enumerate(block.stmts):
        lines.append(f"  {i:02d} | {print_stmt_body(s)}")
    lines.append(
        f"  NEXT: PUT(offset={GUEST_PC_OFFSET}) = {print_expr(block.next)}; "
        f"Ijk_{block.next_jumpkind.value}"
    )
    lines.append("}")
    return "\n".join(lines) + "\n"


def print_program(program: Program) -> str:
    return "\n".join(print_irsb(b) for b in program.blocks.values())
