"""Two-pass assembler and disassembler for the textual BBRISC-V dialect.

Sources are parsed into a :class:`SourceUnit` (labels, directives and
instruction statements with symbolic operands), which the CFG passes rewrite
and :func:`assemble` turns into a flat :class:`ProgramImage`.
"""
from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

from . import isa
from .isa import Fmt, Instruction, Op

CODE_BASE = 0x8000_0000
DATA_BASE = 0x8010_0000
STACK_TOP = 0x8020_0000
MEM_SIZE = 2 << 20

SYS_EXIT = 93
SYS_PUTCHAR = 64


class AsmError(Exception):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


class UndefinedLabel(AsmError):
    pass


class DuplicateLabel(AsmError):
    pass


class ImmediateOutOfRange(AsmError):
    pass


class MisalignedTarget(AsmError):
    pass


# -- expressions -------------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    """Sum of signed terms; a term is an int, a symbol name or a ``%hi``/``%lo`` wrapper."""

    terms: tuple = ()

    @staticmethod
    def const(v: int) -> "Expr":
        return Expr(((1, v),))

    @staticmethod
    def sym(name: str, offset: int = 0) -> "Expr":
        t = ((1, name),)
        return Expr(t + ((1, offset),) if offset else t)

    @property
    def symbols(self) -> list[str]:
        out = []
        for _, a in self.terms:
            if isinstance(a, str):
                out.append(a)
            elif isinstance(a, tuple):
                out.extend(a[1].symbols)
        return out

    @property
    def is_const(self) -> bool:
        return not self.symbols

    @property
    def label(self) -> str | None:
        """The symbol when the expression is exactly one bare symbol."""
        if len(self.terms) == 1 and self.terms[0][0] == 1 and isinstance(self.terms[0][1], str):
            return self.terms[0][1]
        return None

    def eval(self, symbols: dict[str, int], here: int = 0, line: int | None = None) -> int:
        total = 0
        for sign, a in self.terms:
            if isinstance(a, int):
                v = a
            elif isinstance(a, str):
                if a == ".":
                    v = here
                elif a in symbols:
                    v = symbols[a]
                else:
                    raise UndefinedLabel(f"undefined symbol {a!r}", line)
            else:
                kind, inner = a
                v = inner.eval(symbols, here, line)
                v = hi20(v) if kind == "hi" else lo12(v)
            total += sign * v
        return total

    def rename(self, mapping: dict[str, str]) -> "Expr":
        terms = []
        for s, a in self.terms:
            if isinstance(a, str):
                a = mapping.get(a, a)
            elif isinstance(a, tuple):
                a = (a[0], a[1].rename(mapping))
            terms.append((s, a))
        return Expr(tuple(terms))

    def __str__(self) -> str:
        parts = []
        for i, (s, a) in enumerate(self.terms):
            if isinstance(a, tuple):
                txt = f"%{a[0]}({a[1]})"
            else:
                txt = str(a)
            if isinstance(a, int) and a < 0:
                parts.append(("-" if s > 0 else "+") + str(-a) if i else str(s * a))
            else:
                parts.append(("" if s > 0 else "-") + txt if i == 0 else (" + " if s > 0 else " - ") + txt)
        return "".join(parts) if parts else "0"


def hi20(v: int) -> int:
    return ((v + 0x800) >> 12) & 0xFFFFF


def lo12(v: int) -> int:
    return isa.sext(v & 0xFFF, 12)


_TOKEN = re.compile(r"\s*(?:(%hi|%lo)\s*\(|(0[xX][0-9a-fA-F]+|0[bB][01]+|\d+)|'(\\?.)'|([A-Za-z_.$][\w.$]*)|(\()|(\))|([+-]))")


def parse_expr(text: str, line: int | None = None) -> Expr:
    pos, terms, sign = 0, [], 1
    text = text.strip()
    if not text:
        raise AsmError("empty expression", line)
    expect_term = True

    def parse_until_close(start: int) -> tuple[Expr, int]:
        depth, j = 1, start
        while j < len(text):
            if text[j] == "(":
                depth += 1
            elif text[j] == ")":
                depth -= 1
                if depth == 0:
                    return parse_expr(text[start:j], line), j + 1
            j += 1
        raise AsmError(f"unbalanced parentheses in {text!r}", line)

    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise AsmError(f"cannot parse expression {text!r}", line)
        hl, num, ch, ident, lp, rp, op = m.groups()
        if op:
            if expect_term:
                sign = -sign if op == "-" else sign
            else:
                sign = -1 if op == "-" else 1
                expect_term = True
            pos = m.end()
            continue
        if not expect_term:
            raise AsmError(f"missing operator in {text!r}", line)
        if hl:
            inner, pos = parse_until_close(m.end())
            terms.append((sign, (hl[1:], inner)))
        elif num:
            terms.append((sign, int(num, 0)))
            pos = m.end()
        elif ch:
            terms.append((sign, ord(ch.encode().decode("unicode_escape"))))
            pos = m.end()
        elif ident:
            terms.append((sign, ident))
            pos = m.end()
        elif lp:
            inner, pos = parse_until_close(m.end())
            terms.extend((sign * s, a) for s, a in inner.terms)
        else:
            raise AsmError(f"unexpected ')' in {text!r}", line)
        sign, expect_term = 1, False
    if expect_term:
        raise AsmError(f"dangling operator in {text!r}", line)
    return Expr(tuple(terms))


# -- source units ------------------------------------------------------------

@dataclass
class Label:
    name: str
    line: int = 0


@dataclass
class Directive:
    name: str
    args: tuple = ()
    line: int = 0


@dataclass
class AsmInstr:
    """Instruction statement; ``imm`` may still reference symbols.

    For branches and ``jal`` an expression containing a symbol denotes the
    target address, a pure number the raw pc-relative offset.  For ``lui`` and
    ``auipc`` the expression is the 20-bit field value.
    """

    op: Op
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: Expr = field(default_factory=lambda: Expr.const(0))
    n: int = 0
    seq: bool = False
    sflags: int = 0
    eflags: int = 0
    line: int = 0

    @property
    def target(self) -> str | None:
        if self.op in isa.BRANCHES or self.op is Op.JAL:
            return self.imm.label
        return None

    def shape(self) -> Instruction:
        """Instruction with the immediate dropped, for register/class analysis."""
        return Instruction(self.op, self.rd, self.rs1, self.rs2, 0, self.n, self.seq, self.sflags, self.eflags)

    def resolve(self, pc: int, symbols: dict[str, int]) -> Instruction:
        v = self.imm.eval(symbols, pc, self.line)
        fmt = self.op.fmt
        if fmt in (Fmt.B, Fmt.J):
            if not self.imm.is_const:
                v -= pc
            if v & 3:
                raise MisalignedTarget(f"{self.op.mnemonic} target offset {v} not word aligned", self.line)
        elif fmt is Fmt.U:
            if not -(1 << 19) <= v <= 0xFFFFF:
                raise ImmediateOutOfRange(f"upper immediate {v:#x}", self.line)
            v = isa.sext((v & 0xFFFFF) << 12, 32)
        return Instruction(self.op, self.rd, self.rs1, self.rs2, v, self.n, self.seq, self.sflags, self.eflags)

    def __str__(self) -> str:
        tgt = str(self.imm)
        i = self.shape()
        fmt = self.op.fmt
        r = isa.ABI_NAMES
        if fmt in (Fmt.B, Fmt.J):
            return isa.format_instruction(i, target=tgt)
        if fmt is Fmt.U:
            return f"{self.op.mnemonic} {r[self.rd]}, {tgt}"
        if fmt is Fmt.BB:
            return isa.format_instruction(i)
        if fmt is Fmt.LCNT:
            return f"lcnt {tgt}, lc{self.rd}" + (f", {r[self.rs1]}" if self.rs1 else "")
        if self.op in isa.LOADS or self.op is Op.JALR:
            return f"{self.op.mnemonic} {r[self.rd]}, {tgt}({r[self.rs1]})"
        if fmt is Fmt.S:
            return f"{self.op.mnemonic} {r[self.rs2]}, {tgt}({r[self.rs1]})"
        if fmt in (Fmt.I, Fmt.SHIFT):
            return f"{self.op.mnemonic} {r[self.rd]}, {r[self.rs1]}, {tgt}"
        if fmt is Fmt.FENCE:
            v = self.imm.eval({})
            if v == 0x0FF and not self.rd and not self.rs1:
                return "fence"
            return f"fence.raw {v:#x}, {r[self.rd]}, {r[self.rs1]}"
        return isa.format_instruction(i)


Item = Union[Label, Directive, AsmInstr]


@dataclass
class SourceUnit:
    items: list = field(default_factory=list)

    def instructions(self) -> Iterable[AsmInstr]:
        return (it for it in self.items if isinstance(it, AsmInstr))

    def text(self) -> str:
        return format_source(self)


@dataclass
class Segment:
    addr: int
    data: bytes


@dataclass
class ProgramImage:
    base: int
    code: bytes
    entry: int
    data: list = field(default_factory=list)
    symbols: dict = field(default_factory=dict)

    @property
    def segments(self) -> list[Segment]:
        return [Segment(self.base, self.code)] + list(self.data)

    @property
    def code_end(self) -> int:
        return self.base + len(self.code)

    def words(self) -> list[int]:
        return list(struct.unpack(f"<{len(self.code) // 4}I", self.code))

    def word_at(self, addr: int) -> int:
        off = addr - self.base
        return struct.unpack_from("<I", self.code, off)[0]

    def save(self, path: str | Path) -> None:
        """Write raw little-endian segment bytes plus a ``.json`` metadata sidecar."""
        path = Path(path)
        path.write_bytes(b"".join(s.data for s in self.segments))
        meta = {
            "base": self.base,
            "entry": self.entry,
            "segments": [{"addr": s.addr, "len": len(s.data)} for s in self.segments],
            "symbols": dict(sorted(self.symbols.items())),
        }
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ProgramImage":
        path = Path(path)
        raw = path.read_bytes()
        meta = json.loads(Path(str(path) + ".json").read_text())
        segs, off = [], 0
        for s in meta["segments"]:
            segs.append(Segment(s["addr"], raw[off:off + s["len"]]))
            off += s["len"]
        code = segs[0]
        return cls(code.addr, code.data, meta["entry"], segs[1:], dict(meta["symbols"]))


# -- parsing -----------------------------------------------------------------

_REGS = {name: i for i, name in enumerate(isa.ABI_NAMES)}
_REGS.update({f"x{i}": i for i in range(32)})
_REGS["fp"] = 8
_LABEL = re.compile(r"^\s*([A-Za-z_.$][\w.$]*)\s*:")
_MEMOP = re.compile(r"^(.*)\(\s*([\w]+)\s*\)\s*$")


def _strip_comment(line: str) -> str:
    out, quote = [], False
    for i, c in enumerate(line):
        if c == '"':
            quote = not quote
        if not quote and (c in ";#" or line.startswith("//", i)):
            break
        out.append(c)
    return "".join(out)


def _split_operands(s: str) -> list[str]:
    out, depth, cur, quote = [], 0, [], False
    for c in s:
        if c == '"':
            quote = not quote
        if c == "(" and not quote:
            depth += 1
        elif c == ")" and not quote:
            depth -= 1
        if c == "," and depth == 0 and not quote:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(c)
    if "".join(cur).strip():
        out.append("".join(cur).strip())
    return out


def _reg(tok: str, line: int) -> int:
    r = _REGS.get(tok.strip().lower())
    if r is None:
        raise AsmError(f"unknown register {tok!r}", line)
    return r


def _memop(tok: str, line: int) -> tuple[Expr, int]:
    m = _MEMOP.match(tok.strip())
    if not m:
        raise AsmError(f"expected offset(reg), got {tok!r}", line)
    off = m.group(1).strip() or "0"
    return parse_expr(off, line), _reg(m.group(2), line)


def _flags(tok: str, line: int) -> int:
    tok = tok.strip()
    if tok.lower().startswith(("0b", "0x")):
        v = int(tok, 0)
    elif re.fullmatch(r"[01]{1,4}", tok):
        v = sum(1 << k for k, c in enumerate(tok) if c == "1")
    else:
        raise AsmError(f"bad loop flag field {tok!r}", line)
    if not 0 <= v <= 0xF:
        raise AsmError(f"loop flags {tok!r} exceed 4 sets", line)
    return v


def _const(tok: str, line: int) -> int:
    e = parse_expr(tok, line)
    if not e.is_const:
        raise AsmError(f"constant expected, got {tok!r}", line)
    return e.eval({})


def _need(args: list[str], n: int, mnem: str, line: int) -> None:
    if len(args) != n:
        raise AsmError(f"{mnem} expects {n} operands, got {len(args)}", line)


_BRANCH_ALIASES = {
    "bgt": (Op.BLT, True), "ble": (Op.BGE, True),
    "bgtu": (Op.BLTU, True), "bleu": (Op.BGEU, True),
}
_BRANCH_ZERO = {
    "beqz": (Op.BEQ, False), "bnez": (Op.BNE, False), "bgez": (Op.BGE, False),
    "bltz": (Op.BLT, False), "blez": (Op.BGE, True), "bgtz": (Op.BLT, True),
}


def _li(rd: int, e: Expr, line: int) -> list[AsmInstr]:
    if e.is_const:
        v = e.eval({})
        if not -(1 << 31) <= v <= 0xFFFFFFFF:
            raise ImmediateOutOfRange(f"li value {v} does not fit 32 bits", line)
        v = isa.sext(v, 32)
        if -2048 <= v < 2048:
            return [AsmInstr(Op.ADDI, rd=rd, imm=Expr.const(v), line=line)]
        out = [AsmInstr(Op.LUI, rd=rd, imm=Expr.const(hi20(v)), line=line)]
        if lo12(v):
            out.append(AsmInstr(Op.ADDI, rd=rd, rs1=rd, imm=Expr.const(lo12(v)), line=line))
        return out
    return [AsmInstr(Op.LUI, rd=rd, imm=Expr(((1, ("hi", e)),)), line=line),
            AsmInstr(Op.ADDI, rd=rd, rs1=rd, imm=Expr(((1, ("lo", e)),)), line=line)]


def parse_instruction(mnem: str, args: list[str], line: int = 0) -> list[AsmInstr]:
    """Parse one (possibly pseudo) instruction into real instruction statements."""
    m = mnem.lower()
    A = AsmInstr
    if m == "nop":
        return [A(Op.ADDI, line=line)]
    if m in ("li", "la"):
        _need(args, 2, m, line)
        e = parse_expr(args[1], line)
        rd = _reg(args[0], line)
        if m == "la":
            return [A(Op.LUI, rd=rd, imm=Expr(((1, ("hi", e)),)), line=line),
                    A(Op.ADDI, rd=rd, rs1=rd, imm=Expr(((1, ("lo", e)),)), line=line)]
        return _li(rd, e, line)
    if m == "mv":
        _need(args, 2, m, line)
        return [A(Op.ADDI, rd=_reg(args[0], line), rs1=_reg(args[1], line), line=line)]
    if m == "not":
        _need(args, 2, m, line)
        return [A(Op.XORI, rd=_reg(args[0], line), rs1=_reg(args[1], line), imm=Expr.const(-1), line=line)]
    if m == "neg":
        _need(args, 2, m, line)
        return [A(Op.SUB, rd=_reg(args[0], line), rs2=_reg(args[1], line), line=line)]
    if m == "seqz":
        _need(args, 2, m, line)
        return [A(Op.SLTIU, rd=_reg(args[0], line), rs1=_reg(args[1], line), imm=Expr.const(1), line=line)]
    if m == "snez":
        _need(args, 2, m, line)
        return [A(Op.SLTU, rd=_reg(args[0], line), rs2=_reg(args[1], line), line=line)]
    if m == "j":
        _need(args, 1, m, line)
        return [A(Op.JAL, imm=parse_expr(args[0], line), line=line)]
    if m == "call":
        _need(args, 1, m, line)
        return [A(Op.JAL, rd=1, imm=parse_expr(args[0], line), line=line)]
    if m == "jr":
        _need(args, 1, m, line)
        return [A(Op.JALR, rs1=_reg(args[0], line), line=line)]
    if m == "ret":
        _need(args, 0, m, line)
        return [A(Op.JALR, rs1=1, line=line)]
    if m in _BRANCH_ALIASES:
        _need(args, 3, m, line)
        op, _ = _BRANCH_ALIASES[m]
        return [A(op, rs1=_reg(args[1], line), rs2=_reg(args[0], line), imm=parse_expr(args[2], line), line=line)]
    if m in _BRANCH_ZERO:
        _need(args, 2, m, line)
        op, swap = _BRANCH_ZERO[m]
        r = _reg(args[0], line)
        rs1, rs2 = (0, r) if swap else (r, 0)
        return [A(op, rs1=rs1, rs2=rs2, imm=parse_expr(args[1], line), line=line)]
    if m == "fence":
        return [A(Op.FENCE, imm=Expr.const(0x0FF), line=line)]
    if m == "fence.raw":
        _need(args, 3, m, line)
        return [A(Op.FENCE, imm=Expr.const(_const(args[0], line)), rd=_reg(args[1], line),
                  rs1=_reg(args[2], line), line=line)]

    op = isa.MNEMONICS.get(m)
    if op is None:
        raise AsmError(f"unknown mnemonic {mnem!r}", line)
    fmt = op.fmt
    if fmt is Fmt.BB:
        if len(args) not in (2, 4):
            raise AsmError("bb expects 'n, seq' or 'n, seq, sflags, eflags'", line)
        n = _const(args[0], line)
        seq = _const(args[1], line)
        if not 1 <= n <= isa.BB_MAX_N:
            raise ImmediateOutOfRange(f"bb size {n} outside 1..{isa.BB_MAX_N}", line)
        if seq not in (0, 1):
            raise AsmError("bb seq flag must be 0 or 1", line)
        sf, ef = (_flags(args[2], line), _flags(args[3], line)) if len(args) == 4 else (0, 0)
        return [A(op, n=n, seq=bool(seq), sflags=sf, eflags=ef, line=line)]
    if fmt is Fmt.LCNT:
        if len(args) not in (2, 3):
            raise AsmError("lcnt expects 'imm, lcK[, rs]'", line)
        setm = re.fullmatch(r"(?:lc|ls)?([0-3])", args[1].strip().lower())
        if not setm:
            raise AsmError(f"bad loop set {args[1]!r}", line)
        rs1 = _reg(args[2], line) if len(args) == 3 else 0
        return [A(op, rd=int(setm.group(1)), rs1=rs1, imm=parse_expr(args[0], line), line=line)]
    if fmt is Fmt.R:
        _need(args, 3, m, line)
        return [A(op, rd=_reg(args[0], line), rs1=_reg(args[1], line), rs2=_reg(args[2], line), line=line)]
    if op in isa.LOADS:
        _need(args, 2, m, line)
        off, base = _memop(args[1], line)
        return [A(op, rd=_reg(args[0], line), rs1=base, imm=off, line=line)]
    if op is Op.JALR:
        if len(args) == 1:
            return [A(op, rd=1, rs1=_reg(args[0], line), line=line)]
        if len(args) == 2:
            off, base = _memop(args[1], line)
            return [A(op, rd=_reg(args[0], line), rs1=base, imm=off, line=line)]
        _need(args, 3, m, line)
        return [A(op, rd=_reg(args[0], line), rs1=_reg(args[1], line), imm=parse_expr(args[2], line), line=line)]
    if fmt in (Fmt.I, Fmt.SHIFT):
        _need(args, 3, m, line)
        return [A(op, rd=_reg(args[0], line), rs1=_reg(args[1], line), imm=parse_expr(args[2], line), line=line)]
    if fmt is Fmt.S:
        _need(args, 2, m, line)
        off, base = _memop(args[1], line)
        return [A(op, rs2=_reg(args[0], line), rs1=base, imm=off, line=line)]
    if fmt is Fmt.B:
        _need(args, 3, m, line)
        return [A(op, rs1=_reg(args[0], line), rs2=_reg(args[1], line), imm=parse_expr(args[2], line), line=line)]
    if fmt is Fmt.U:
        _need(args, 2, m, line)
        return [A(op, rd=_reg(args[0], line), imm=parse_expr(args[1], line), line=line)]
    if fmt is Fmt.J:
        if len(args) == 1:
            return [A(op, rd=1, imm=parse_expr(args[0], line), line=line)]
        _need(args, 2, m, line)
        return [A(op, rd=_reg(args[0], line), imm=parse_expr(args[1], line), line=line)]
    _need(args, 0, m, line)
    return [A(op, line=line)]


def _parse_string(tok: str, line: int) -> bytes:
    tok = tok.strip()
    if len(tok) < 2 or tok[0] != '"' or tok[-1] != '"':
        raise AsmError(f"string literal expected, got {tok!r}", line)
    return tok[1:-1].encode().decode("unicode_escape").encode("latin-1")


def parse(text: str) -> SourceUnit:
    items: list = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        while True:
            m = _LABEL.match(line)
            if not m:
                break
            items.append(Label(m.group(1), lineno))
            line = line[m.end():].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        mnem = parts[0]
        args = _split_operands(parts[1]) if len(parts) > 1 else []
        if mnem.startswith("."):
            items.append(Directive(mnem.lower(), tuple(args), lineno))
        else:
            items.extend(parse_instruction(mnem, args, lineno))
    return SourceUnit(items)


# -- assembly ----------------------------------------------------------------

_SECTION_BASE = {".text": CODE_BASE, ".data": DATA_BASE}


class _Layout:
    """First pass: addresses of every item and the symbol table."""

    def __init__(self, src: SourceUnit):
        self.symbols: dict[str, int] = {}
        self.addr_of: list[int] = []
        self.section_of: list[str] = []
        self.globls: list[str] = []
        loc = dict(_SECTION_BASE)
        sec = ".text"
        for it in src.items:
            self.addr_of.append(loc[sec])
            self.section_of.append(sec)
            if isinstance(it, Label):
                if it.name in self.symbols:
                    raise DuplicateLabel(f"label {it.name!r} defined twice", it.line)
                self.symbols[it.name] = loc[sec]
            elif isinstance(it, AsmInstr):
                if loc[sec] & 3:
                    raise MisalignedTarget("instruction not word aligned", it.line)
                loc[sec] += 4
            else:
                d = it.name
                if d in (".text", ".data"):
                    sec = d
                    self.addr_of[-1] = loc[sec]
                    self.section_of[-1] = sec
                elif d in (".globl", ".global"):
                    self.globls.extend(a.strip() for a in it.args)
                elif d in (".equ", ".set"):
                    if len(it.args) != 2:
                        raise AsmError(".equ expects name, value", it.line)
                    name = it.args[0].strip()
                    if name in self.symbols:
                        raise DuplicateLabel(f"symbol {name!r} defined twice", it.line)
                    self.symbols[name] = parse_expr(it.args[1], it.line).eval(self.symbols, loc[sec], it.line)
                else:
                    loc[sec] += self._size(it, loc[sec])
        self.end = loc

    def _size(self, d: Directive, here: int) -> int:
        name, args = d.name, d.args
        if name == ".word":
            return 4 * len(args)
        if name == ".half":
            return 2 * len(args)
        if name == ".byte":
            return len(args)
        if name in (".space", ".zero", ".skip"):
            return _const(args[0], d.line)
        if name == ".align":
            a = 1 << _const(args[0], d.line)
            return (-here) % a
        if name == ".balign":
            a = _const(args[0], d.line)
            return (-here) % a
        if name == ".org":
            target = parse_expr(args[0], d.line).eval(self.symbols, here, d.line)
            if target < here:
                raise AsmError(f".org {target:#x} moves backwards from {here:#x}", d.line)
            return target - here
        if name == ".ascii":
            return sum(len(_parse_string(a, d.line)) for a in args)
        if name in (".asciz", ".string"):
            return sum(len(_parse_string(a, d.line)) + 1 for a in args)
        raise AsmError(f"unknown directive {name}", d.line)


def _entry(lay: _Layout) -> int:
    if "_start" in lay.symbols:
        return lay.symbols["_start"]
    for g in lay.globls:
        if g in lay.symbols:
            return lay.symbols[g]
    return CODE_BASE


def assemble(src: SourceUnit | str) -> ProgramImage:
    if isinstance(src, str):
        src = parse(src)
    lay = _Layout(src)
    syms = lay.symbols
    bufs = {s: bytearray() for s in _SECTION_BASE}

    def put(sec: str, addr: int, data: bytes) -> None:
        buf = bufs[sec]
        off = addr - _SECTION_BASE[sec]
        if len(buf) < off:
            buf.extend(bytes(off - len(buf)))
        buf[off:off + len(data)] = data

    for it, addr, sec in zip(src.items, lay.addr_of, lay.section_of):
        if isinstance(it, AsmInstr):
            try:
                word = isa.encode(it.resolve(addr, syms))
            except isa.UnencodableImmediate as e:
                raise ImmediateOutOfRange(str(e), it.line) from None
            except isa.IsaError as e:
                raise AsmError(str(e), it.line) from None
            put(sec, addr, struct.pack("<I", word))
        elif isinstance(it, Directive):
            n, a = it.name, it.args
            if n == ".word":
                vals = [parse_expr(x, it.line).eval(syms, addr, it.line) & 0xFFFFFFFF for x in a]
                put(sec, addr, struct.pack(f"<{len(vals)}I", *vals))
            elif n == ".half":
                vals = [parse_expr(x, it.line).eval(syms, addr, it.line) & 0xFFFF for x in a]
                put(sec, addr, struct.pack(f"<{len(vals)}H", *vals))
            elif n == ".byte":
                put(sec, addr, bytes(parse_expr(x, it.line).eval(syms, addr, it.line) & 0xFF for x in a))
            elif n in (".ascii", ".asciz", ".string"):
                z = b"" if n == ".ascii" else b"\0"
                put(sec, addr, b"".join(_parse_string(x, it.line) + z for x in a))
            elif n in (".space", ".zero", ".skip", ".align", ".balign", ".org"):
                size = lay._size(it, addr) if n != ".org" else \
                    parse_expr(a[0], it.line).eval(syms, addr, it.line) - addr
                put(sec, addr, bytes(size))
    for sec, end in lay.end.items():
        put(sec, end, b"")
    code = bytes(bufs[".text"])
    data = [Segment(DATA_BASE, bytes(bufs[".data"]))] if bufs[".data"] else []
    entry = _entry(lay)
    if code and not CODE_BASE <= entry < CODE_BASE + len(code):
        raise AsmError(f"entry {entry:#x} outside code")
    return ProgramImage(CODE_BASE, code, entry, data, dict(syms))


def assemble_text(text: str) -> ProgramImage:
    return assemble(parse(text))


# -- disassembly -------------------------------------------------------------

def disassemble(img: ProgramImage) -> SourceUnit:
    """Rebuild a source unit whose assembly reproduces ``img`` byte for byte."""
    words = img.words()
    base = img.base
    decoded = []
    for k, w in enumerate(words):
        try:
            decoded.append(isa.decode(w))
        except isa.IllegalInstruction as e:
            raise isa.IllegalInstruction(w, f"at {base + 4 * k:#010x}: {e}") from None

    names: dict[int, str] = {}
    for name, addr in sorted(img.symbols.items(), key=lambda kv: (kv[1], kv[0])):
        names.setdefault(addr, name)
    code_end = base + 4 * len(words)

    def label_for(addr: int) -> str:
        if addr not in names:
            names[addr] = f"L_{addr:08x}"
        return names[addr]

    if words:
        label_for(img.entry)
    targets = {}
    for k, i in enumerate(decoded):
        if i.op in isa.BRANCHES or i.op is Op.JAL:
            t = base + 4 * k + i.imm
            if base <= t <= code_end and t % 4 == 0:
                targets[k] = label_for(t)

    items: list = [Directive(".text")]
    entry_name = names.get(img.entry) if words else None
    if entry_name and entry_name != "_start":
        items.append(Directive(".globl", (entry_name,)))
    emitted = set()
    for k, i in enumerate(decoded):
        addr = base + 4 * k
        if addr in names:
            items.append(Label(names[addr]))
            emitted.add(addr)
        if k in targets:
            ai = AsmInstr(i.op, i.rd, i.rs1, i.rs2, Expr.sym(targets[k]))
        elif i.op.fmt is Fmt.U:
            ai = AsmInstr(i.op, i.rd, imm=Expr.const((i.imm >> 12) & 0xFFFFF))
        else:
            ai = AsmInstr(i.op, i.rd, i.rs1, i.rs2, Expr.const(i.imm), i.n, i.seq, i.sflags, i.eflags)
        items.append(ai)
    if code_end in names:
        items.append(Label(names[code_end]))
        emitted.add(code_end)

    for seg in img.data:
        items.append(Directive(".data"))
        if seg.addr != DATA_BASE:
            items.append(Directive(".org", (f"{seg.addr:#x}",)))
        cuts = sorted({a for a in names if seg.addr <= a <= seg.addr + len(seg.data)} | {seg.addr + len(seg.data)})
        pos = seg.addr
        for cut in cuts:
            chunk = seg.data[pos - seg.addr:cut - seg.addr]
            nw = len(chunk) // 4 if pos % 4 == 0 else 0
            if nw:
                vals = struct.unpack_from(f"<{nw}I", chunk)
                items.append(Directive(".word", tuple(f"{v:#010x}" for v in vals)))
            if chunk[4 * nw:]:
                items.append(Directive(".byte", tuple(str(b) for b in chunk[4 * nw:])))
            pos = cut
            if cut in names and cut not in emitted:
                items.append(Label(names[cut]))
                emitted.add(cut)
    for addr, name in sorted(names.items()):
        if addr not in emitted:
            for sname, saddr in img.symbols.items():
                if saddr == addr and sname == name:
                    items.insert(1, Directive(".equ", (name, f"{addr:#x}")))
    return SourceUnit(items)


def format_source(src: SourceUnit) -> str:
    out = []
    for it in src.items:
        if isinstance(it, Label):
            out.append(f"{it.name}:")
        elif isinstance(it, Directive):
            out.append(f"    {it.name} {', '.join(it.args)}".rstrip())
        else:
            out.append(f"    {it}")
    return "\n".join(out) + ("\n" if out else "")
