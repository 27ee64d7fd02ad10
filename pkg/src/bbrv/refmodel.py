"""Functional reference interpreter for RV32IM with basic-block semantics.

One call to :func:`step` executes exactly one instruction.  The bb state
registers follow this contract:

* ``IC`` counts the instructions left in the announced block,
* ``T`` holds the block's redirect target, ``B`` the number of control-flow
  instructions still allowed, ``E`` a sticky error flag,
* a ``bb`` seen while ``IC`` is non-zero clears ``IC`` and sets ``E``,
* control-flow instructions write their outcome to ``T`` instead of the pc,
  the pc changes to ``T`` once ``IC`` drops to zero.

Loop-counter sets (``lcnt`` plus the s/e flags of ``bb``) sit on top of this.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator

from . import isa
from .asm import CODE_BASE, MEM_SIZE, STACK_TOP, SYS_EXIT, SYS_PUTCHAR, ProgramImage
from .isa import Fmt, Instruction, Op

MASK = 0xFFFFFFFF


class Mode(enum.Enum):
    BB = "bb"
    LEGACY = "legacy"


class ArchException(Exception):
    kind = "arch"

    def __init__(self, addr: int, msg: str = ""):
        self.addr = addr
        super().__init__(f"{self.kind} at {addr:#010x}" + (f": {msg}" if msg else ""))


class BbRequiredException(ArchException):
    kind = "bb-required"


class BbSemanticsException(ArchException):
    kind = "bb-semantics"


class IllegalInstructionException(ArchException):
    kind = "illegal-instruction"


class MisalignedAccess(ArchException):
    kind = "misaligned"


class OutOfRangeAccess(ArchException):
    kind = "out-of-range"


class Breakpoint(ArchException):
    kind = "ebreak"


# -- terminal states ---------------------------------------------------------

@dataclass(frozen=True)
class Halted:
    code: int


@dataclass(frozen=True)
class Excepted:
    kind: str
    addr: int


@dataclass(frozen=True)
class FuelExhausted:
    fuel: int


# -- state -------------------------------------------------------------------

class Memory:
    """Flat little-endian RAM starting at the code base."""

    def __init__(self, base: int = CODE_BASE, size: int = MEM_SIZE):
        self.base = base
        self.size = size
        self.data = bytearray(size)

    def copy(self) -> "Memory":
        m = Memory.__new__(Memory)
        m.base, m.size, m.data = self.base, self.size, bytearray(self.data)
        return m

    def offset(self, addr: int, width: int, pc: int) -> int:
        if addr % width:
            raise MisalignedAccess(pc, f"{width}-byte access at {addr:#x}")
        off = addr - self.base
        if off < 0 or off + width > self.size:
            raise OutOfRangeAccess(pc, f"access at {addr:#x}")
        return off

    def load(self, addr: int, width: int, pc: int = 0) -> int:
        off = self.offset(addr, width, pc)
        return int.from_bytes(self.data[off:off + width], "little")

    def store(self, addr: int, width: int, value: int, pc: int = 0) -> None:
        off = self.offset(addr, width, pc)
        self.data[off:off + width] = (value & ((1 << (8 * width)) - 1)).to_bytes(width, "little")

    def read(self, addr: int, length: int) -> bytes:
        off = addr - self.base
        if off < 0 or off + length > self.size:
            raise OutOfRangeAccess(addr, f"range {addr:#x}+{length}")
        return bytes(self.data[off:off + length])

    def write(self, addr: int, blob: bytes) -> None:
        off = addr - self.base
        if off < 0 or off + len(blob) > self.size:
            raise OutOfRangeAccess(addr, f"range {addr:#x}+{len(blob)}")
        self.data[off:off + len(blob)] = blob


@dataclass
class LoopSet:
    count: int = 0
    start: int = 0
    active: bool = False


@dataclass
class ArchState:
    pc: int
    mem: Memory
    regs: list = field(default_factory=lambda: [0] * 32)
    ic: int = 0
    t: int = 0
    b: int = 0
    e: int = 0
    p: tuple | None = None
    loops: list = field(default_factory=lambda: [LoopSet() for _ in range(isa.NUM_LOOP_SETS)])
    mode: Mode = Mode.BB
    output: bytearray = field(default_factory=bytearray)

    def fork(self) -> "ArchState":
        return ArchState(self.pc, self.mem.copy(), list(self.regs), self.ic, self.t, self.b, self.e, self.p,
                         [LoopSet(ls.count, ls.start, ls.active) for ls in self.loops], self.mode,
                         bytearray(self.output))

    def bb_regs(self) -> tuple:
        return self.ic, self.t, self.b, self.e

    def reg(self, name: str) -> int:
        return self.regs[isa.ABI_NAMES.index(name)]


def initial_state(img: ProgramImage, mode: Mode = Mode.BB, regs: dict | None = None) -> ArchState:
    mem = Memory()
    for seg in img.segments:
        mem.write(seg.addr, seg.data)
    s = ArchState(img.entry, mem, mode=mode)
    s.regs[2] = STACK_TOP
    for r, v in (regs or {}).items():
        idx = r if isinstance(r, int) else isa.ABI_NAMES.index(r)
        if idx:
            s.regs[idx] = v & MASK
    return s


# -- execution ---------------------------------------------------------------

@dataclass(frozen=True)
class RetireEntry:
    index: int
    addr: int
    instr: Instruction


@dataclass
class StepInfo:
    """What one step did, beyond the state update itself."""

    entry: RetireEntry
    next_pc: int
    rd: int = 0
    mem_addr: int | None = None
    is_store: bool = False
    taken: bool = False
    redirect: int | None = None
    changed_bb: tuple = ()
    changed_loops: tuple = ()
    halt: int | None = None
    in_block: bool = False
    block_end: bool = False
    lcnt_count: int = 0


def _s(v: int) -> int:
    return v - (1 << 32) if v & 0x80000000 else v


def _div(a: int, b: int) -> int:
    a, b = _s(a), _s(b)
    if b == 0:
        return MASK
    if a == -(1 << 31) and b == -1:
        return a & MASK
    q = abs(a) // abs(b)
    return (-q if (a < 0) != (b < 0) else q) & MASK


def _rem(a: int, b: int) -> int:
    sa, sb = _s(a), _s(b)
    if sb == 0:
        return a
    if sa == -(1 << 31) and sb == -1:
        return 0
    r = abs(sa) % abs(sb)
    return (-r if sa < 0 else r) & MASK


_ALU = {
    Op.ADD: lambda a, b: (a + b) & MASK,
    Op.SUB: lambda a, b: (a - b) & MASK,
    Op.SLL: lambda a, b: (a << (b & 31)) & MASK,
    Op.SLT: lambda a, b: int(_s(a) < _s(b)),
    Op.SLTU: lambda a, b: int(a < b),
    Op.XOR: lambda a, b: a ^ b,
    Op.SRL: lambda a, b: a >> (b & 31),
    Op.SRA: lambda a, b: (_s(a) >> (b & 31)) & MASK,
    Op.OR: lambda a, b: a | b,
    Op.AND: lambda a, b: a & b,
    Op.MUL: lambda a, b: (a * b) & MASK,
    Op.MULH: lambda a, b: ((_s(a) * _s(b)) >> 32) & MASK,
    Op.MULHSU: lambda a, b: ((_s(a) * b) >> 32) & MASK,
    Op.MULHU: lambda a, b: ((a * b) >> 32) & MASK,
    Op.DIV: _div,
    Op.DIVU: lambda a, b: MASK if b == 0 else a // b,
    Op.REM: _rem,
    Op.REMU: lambda a, b: a if b == 0 else a % b,
}
_ALU_IMM = {
    Op.ADDI: Op.ADD, Op.SLTI: Op.SLT, Op.SLTIU: Op.SLTU, Op.XORI: Op.XOR, Op.ORI: Op.OR,
    Op.ANDI: Op.AND, Op.SLLI: Op.SLL, Op.SRLI: Op.SRL, Op.SRAI: Op.SRA,
}
_BRANCH = {
    Op.BEQ: lambda a, b: a == b,
    Op.BNE: lambda a, b: a != b,
    Op.BLT: lambda a, b: _s(a) < _s(b),
    Op.BGE: lambda a, b: _s(a) >= _s(b),
    Op.BLTU: lambda a, b: a < b,
    Op.BGEU: lambda a, b: a >= b,
}
_SIGNED_LOAD = {Op.LB: 8, Op.LH: 16}


def fetch(s: ArchState, pc: int) -> Instruction:
    if pc & 3:
        raise MisalignedAccess(pc, "instruction fetch")
    word = s.mem.load(pc, 4, pc)
    try:
        return isa.decode(word)
    except isa.IllegalInstruction as e:
        raise IllegalInstructionException(pc, str(e)) from None


def execute_base(s: ArchState, i: Instruction, pc: int, info: StepInfo, link: int) -> tuple[bool, int | None]:
    """Data semantics shared by both modes.

    Returns ``(is_cf, target)`` where ``target`` is the taken destination or
    ``None`` for a not-taken branch.  ``link`` is the value a call writes.
    """
    op = i.op
    r = s.regs
    rd = 0
    val = 0
    cf = False
    target = None
    if op in _ALU:
        rd, val = i.rd, _ALU[op](r[i.rs1], r[i.rs2])
    elif op in _ALU_IMM:
        rd, val = i.rd, _ALU[_ALU_IMM[op]](r[i.rs1], i.imm & MASK)
    elif op in _BRANCH:
        cf = True
        if _BRANCH[op](r[i.rs1], r[i.rs2]):
            target = (pc + i.imm) & MASK
    elif op in isa.LOADS:
        addr = (r[i.rs1] + i.imm) & MASK
        w = isa.MEM_WIDTH[op]
        info.mem_addr = addr
        v = s.mem.load(addr, w, pc)
        bits = _SIGNED_LOAD.get(op)
        rd, val = i.rd, (isa.sext(v, bits) & MASK) if bits else v
    elif op in isa.STORES:
        addr = (r[i.rs1] + i.imm) & MASK
        info.mem_addr, info.is_store = addr, True
        s.mem.store(addr, isa.MEM_WIDTH[op], r[i.rs2], pc)
    elif op is Op.LUI:
        rd, val = i.rd, i.imm & MASK
    elif op is Op.AUIPC:
        rd, val = i.rd, (pc + i.imm) & MASK
    elif op is Op.JAL:
        cf, target = True, (pc + i.imm) & MASK
        rd, val = i.rd, link
    elif op is Op.JALR:
        cf, target = True, (r[i.rs1] + i.imm) & ~1 & MASK
        rd, val = i.rd, link
    elif op is Op.LCNT:
        ls = s.loops[i.rd]
        ls.count = (i.imm + _s(r[i.rs1])) & MASK
        ls.active = True
        info.changed_loops = (i.rd,)
        info.lcnt_count = ls.count
    elif op is Op.ECALL:
        a7 = r[17]
        if a7 == SYS_EXIT:
            info.halt = _s(r[10])
        elif a7 == SYS_PUTCHAR:
            s.output.append(r[10] & 0xFF)
    elif op is Op.EBREAK:
        raise Breakpoint(pc)
    # FENCE is a no-op in this single-hart model
    if rd:
        r[rd] = val
        info.rd = rd
    return cf, target


def step(s: ArchState, index: int = 0) -> StepInfo:
    """Execute one instruction in place.

    Raises an :class:`ArchException` subclass for anything architecturally
    illegal.  Exceptions detected before the instruction runs leave ``s``
    unchanged; a block-semantics violation is raised after the offending
    instruction has updated the state.
    """
    pc = s.pc
    i = fetch(s, pc)
    info = StepInfo(RetireEntry(index, pc, i), pc)
    before = (s.ic, s.t, s.b, s.e)

    if i.op is Op.BB:
        if s.ic != 0:
            s.ic, s.e = 0, 1
        else:
            _exec_bb(s, i, pc, info)
        s.pc = info.next_pc = (pc + 4) & MASK
    elif s.ic == 0:
        if s.mode is Mode.BB:
            raise BbRequiredException(pc, f"{i.op.mnemonic} outside any bb range")
        cf, target = execute_base(s, i, pc, info, (pc + 4) & MASK)
        info.taken = target is not None
        s.pc = info.next_pc = target if info.taken else (pc + 4) & MASK
        info.redirect = s.pc if cf else None
        return info
    else:
        info.in_block = True
        ic = s.ic - 1
        fall = (pc + 4 * (ic + 1)) & MASK
        s.ic = ic
        cf, target = execute_base(s, i, pc, info, fall)
        if cf:
            info.taken = target is not None
            redirect = target if info.taken else fall
            info.redirect = redirect
            if s.b > 0:
                s.t = redirect
                s.b -= 1
            else:
                s.e = 1
        if s.ic == 0:
            info.block_end = True
            s.pc = s.t
            if s.b > 0:
                s.e = 1
        else:
            s.pc = (pc + 4) & MASK
        info.next_pc = s.pc
    after = (s.ic, s.t, s.b, s.e)
    if after != before:
        info.changed_bb = tuple(n for n, x, y in zip(("IC", "T", "B", "E"), before, after) if x != y)
    if s.ic == 0 and s.e:
        exc = BbSemanticsException(pc, "block structure violated")
        exc.info = info
        raise exc
    return info


def _exec_bb(s: ArchState, i: Instruction, pc: int, info: StepInfo) -> None:
    changed = []
    for k in range(isa.NUM_LOOP_SETS):
        ls = s.loops[k]
        if i.sflags >> k & 1 and ls.active:
            ls.start = pc
            if ls.count > 0:
                ls.count -= 1
            changed.append(k)
    s.ic = i.n
    looped = False
    as_seq = i.seq
    for k in range(isa.NUM_LOOP_SETS):
        ls = s.loops[k]
        if i.eflags >> k & 1 and ls.active:
            if ls.count > 0:
                if not looped:
                    s.t, s.b = ls.start, 0
                    looped = True
            else:
                ls.active = False
                as_seq = True
            if k not in changed:
                changed.append(k)
    if not looped:
        if as_seq:
            s.b, s.t = 0, (pc + 4 * (i.n + 1)) & MASK
        else:
            s.b = 1
    info.changed_loops = tuple(sorted(changed))


# -- whole runs --------------------------------------------------------------

@dataclass
class RetireLog:
    """Retired instructions in program order plus the terminal status.

    Logs produced by the pipeline also carry the fetch sequence number of
    each retired instruction, the sequence numbers of exception-raising
    instructions and the id of the run they came from.
    """

    entries: list = field(default_factory=list)
    status: object = None
    run_id: str | None = None
    fetch_seqs: list = field(default_factory=list)
    raised: set = field(default_factory=set)

    def addresses(self) -> list[int]:
        return [e.addr for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class RunResult:
    log: RetireLog
    state: ArchState
    output: bytes

    @property
    def status(self):
        return self.log.status


def steps(s: ArchState, fuel: int) -> Iterator[StepInfo]:
    """Yield successive step records; the terminal status is the generator's return value."""
    for idx in range(fuel):
        try:
            info = step(s, idx)
        except BbSemanticsException as e:
            yield e.info
            return Excepted(e.kind, e.addr)
        except ArchException as e:
            return Excepted(e.kind, e.addr)
        yield info
        if info.halt is not None:
            return Halted(info.halt)
    return FuelExhausted(fuel)


def run(img: ProgramImage, mode: Mode = Mode.BB, fuel: int = 1_000_000,
        regs: dict | None = None) -> RunResult:
    s = initial_state(img, mode, regs)
    log = RetireLog()
    gen = steps(s, fuel)
    while True:
        try:
            info = next(gen)
        except StopIteration as stop:
            log.status = stop.value
            break
        log.entries.append(info.entry)
    return RunResult(log, s, bytes(s.output))


def fetch_order_trace(img: ProgramImage, fuel: int = 100_000, regs: dict | None = None) -> list[int]:
    """Instruction addresses in the order a bb-aware fetch unit requests them.

    The next block's ``bb`` is requested as soon as its address is certain:
    at a sequential or loop-flagged ``bb``, or at the control-flow
    instruction of a non-sequential block.  Execution stops at the first
    address outside the code image.
    """
    s = initial_state(img, Mode.BB, regs)
    lo, hi = img.base, img.code_end
    out: list[int] = []
    pending: set[int] = set()

    def interpose(addr: int) -> None:
        if lo <= addr < hi and isa.decode(img.word_at(addr)).op is Op.BB:
            out.append(addr)
            pending.add(addr)

    for idx in range(fuel):
        pc = s.pc
        if not lo <= pc < hi:
            break
        if pc in pending:
            pending.discard(pc)
        else:
            out.append(pc)
        b_before = s.b
        try:
            info = step(s, idx)
        except ArchException:
            break
        i = info.entry.instr
        if i.op is Op.BB:
            if s.ic and s.b == 0:
                interpose(s.t)
        elif i.op in isa.CONTROL_FLOW and b_before > 0:
            interpose(s.t)
        if info.halt is not None:
            break
    return out
