"""Encoding, decoding and classification of RV32IM plus the ``bb`` and ``lcnt`` extension.

Bit layouts of the two custom instructions::

    bb    | n[31:16] | eflags[15:12] | sflags[11:8] | seq[7] | 0001011 |
    lcnt  | imm[31:20] | rs1[19:15] | 000 | set[11:7] | 0101011 |

``n`` counts the instructions that follow the ``bb`` (the ``bb`` itself is not
included) and must be non-zero.  Bit ``k`` of ``sflags``/``eflags`` refers to
loop-counter set ``k``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

OPC_BB = 0b0001011
OPC_LCNT = 0b0101011

BB_MAX_N = 0xFFFF
NUM_LOOP_SETS = 4

ABI_NAMES = (
    "zero ra sp gp tp t0 t1 t2 s0 s1 a0 a1 a2 a3 a4 a5 "
    "a6 a7 s2 s3 s4 s5 s6 s7 s8 s9 s10 s11 t3 t4 t5 t6"
).split()


class IsaError(Exception):
    pass


class IllegalInstruction(IsaError):
    def __init__(self, word: int, reason: str = "unknown encoding"):
        self.word = word
        super().__init__(f"illegal instruction 0x{word:08x}: {reason}")


class IllegalBb(IllegalInstruction):
    pass


class IllegalLcnt(IllegalInstruction):
    pass


class UnencodableImmediate(IsaError):
    pass


class Fmt(enum.Enum):
    R = "R"
    I = "I"
    S = "S"
    B = "B"
    U = "U"
    J = "J"
    SHIFT = "SHIFT"
    SYS = "SYS"
    FENCE = "FENCE"
    BB = "BB"
    LCNT = "LCNT"


class Op(enum.Enum):
    # value: (mnemonic, format, opcode, funct3, funct7)
    LUI = ("lui", Fmt.U, 0b0110111, None, None)
    AUIPC = ("auipc", Fmt.U, 0b0010111, None, None)
    JAL = ("jal", Fmt.J, 0b1101111, None, None)
    JALR = ("jalr", Fmt.I, 0b1100111, 0b000, None)
    BEQ = ("beq", Fmt.B, 0b1100011, 0b000, None)
    BNE = ("bne", Fmt.B, 0b1100011, 0b001, None)
    BLT = ("blt", Fmt.B, 0b1100011, 0b100, None)
    BGE = ("bge", Fmt.B, 0b1100011, 0b101, None)
    BLTU = ("bltu", Fmt.B, 0b1100011, 0b110, None)
    BGEU = ("bgeu", Fmt.B, 0b1100011, 0b111, None)
    LB = ("lb", Fmt.I, 0b0000011, 0b000, None)
    LH = ("lh", Fmt.I, 0b0000011, 0b001, None)
    LW = ("lw", Fmt.I, 0b0000011, 0b010, None)
    LBU = ("lbu", Fmt.I, 0b0000011, 0b100, None)
    LHU = ("lhu", Fmt.I, 0b0000011, 0b101, None)
    SB = ("sb", Fmt.S, 0b0100011, 0b000, None)
    SH = ("sh", Fmt.S, 0b0100011, 0b001, None)
    SW = ("sw", Fmt.S, 0b0100011, 0b010, None)
    ADDI = ("addi", Fmt.I, 0b0010011, 0b000, None)
    SLTI = ("slti", Fmt.I, 0b0010011, 0b010, None)
    SLTIU = ("sltiu", Fmt.I, 0b0010011, 0b011, None)
    XORI = ("xori", Fmt.I, 0b0010011, 0b100, None)
    ORI = ("ori", Fmt.I, 0b0010011, 0b110, None)
    ANDI = ("andi", Fmt.I, 0b0010011, 0b111, None)
    SLLI = ("slli", Fmt.SHIFT, 0b0010011, 0b001, 0b0000000)
    SRLI = ("srli", Fmt.SHIFT, 0b0010011, 0b101, 0b0000000)
    SRAI = ("srai", Fmt.SHIFT, 0b0010011, 0b101, 0b0100000)
    ADD = ("add", Fmt.R, 0b0110011, 0b000, 0b0000000)
    SUB = ("sub", Fmt.R, 0b0110011, 0b000, 0b0100000)
    SLL = ("sll", Fmt.R, 0b0110011, 0b001, 0b0000000)
    SLT = ("slt", Fmt.R, 0b0110011, 0b010, 0b0000000)
    SLTU = ("sltu", Fmt.R, 0b0110011, 0b011, 0b0000000)
    XOR = ("xor", Fmt.R, 0b0110011, 0b100, 0b0000000)
    SRL = ("srl", Fmt.R, 0b0110011, 0b101, 0b0000000)
    SRA = ("sra", Fmt.R, 0b0110011, 0b101, 0b0100000)
    OR = ("or", Fmt.R, 0b0110011, 0b110, 0b0000000)
    AND = ("and", Fmt.R, 0b0110011, 0b111, 0b0000000)
    MUL = ("mul", Fmt.R, 0b0110011, 0b000, 0b0000001)
    MULH = ("mulh", Fmt.R, 0b0110011, 0b001, 0b0000001)
    MULHSU = ("mulhsu", Fmt.R, 0b0110011, 0b010, 0b0000001)
    MULHU = ("mulhu", Fmt.R, 0b0110011, 0b011, 0b0000001)
    DIV = ("div", Fmt.R, 0b0110011, 0b100, 0b0000001)
    DIVU = ("divu", Fmt.R, 0b0110011, 0b101, 0b0000001)
    REM = ("rem", Fmt.R, 0b0110011, 0b110, 0b0000001)
    REMU = ("remu", Fmt.R, 0b0110011, 0b111, 0b0000001)
    FENCE = ("fence", Fmt.FENCE, 0b0001111, 0b000, None)
    ECALL = ("ecall", Fmt.SYS, 0b1110011, 0b000, None)
    EBREAK = ("ebreak", Fmt.SYS, 0b1110011, 0b000, None)
    BB = ("bb", Fmt.BB, OPC_BB, None, None)
    LCNT = ("lcnt", Fmt.LCNT, OPC_LCNT, 0b000, None)

    @property
    def mnemonic(self) -> str:
        return self.value[0]

    @property
    def fmt(self) -> Fmt:
        return self.value[1]


MNEMONICS = {op.mnemonic: op for op in Op}

BRANCHES = frozenset({Op.BEQ, Op.BNE, Op.BLT, Op.BGE, Op.BLTU, Op.BGEU})
CONTROL_FLOW = BRANCHES | {Op.JAL, Op.JALR}
LOADS = frozenset({Op.LB, Op.LH, Op.LW, Op.LBU, Op.LHU})
STORES = frozenset({Op.SB, Op.SH, Op.SW})
MEM_WIDTH = {Op.LB: 1, Op.LBU: 1, Op.SB: 1, Op.LH: 2, Op.LHU: 2, Op.SH: 2, Op.LW: 4, Op.SW: 4}


@dataclass(frozen=True)
class Instruction:
    """One decoded instruction.

    ``imm`` is the sign-extended immediate as the hardware uses it: the byte
    offset for branches and jumps, the already shifted value for LUI/AUIPC,
    the shift amount for immediate shifts and the raw 12-bit field for FENCE.
    For LCNT the loop-set index lives in ``rd``.
    """

    op: Op
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0
    n: int = 0
    seq: bool = False
    sflags: int = 0
    eflags: int = 0

    @property
    def loop_set(self) -> int:
        return self.rd

    def __str__(self) -> str:
        return format_instruction(self)


@dataclass(frozen=True)
class InstrClass:
    is_control_flow: bool
    is_conditional_branch: bool
    is_call: bool
    is_load: bool
    is_store: bool
    is_bb: bool
    is_lcnt: bool


def sext(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


def _fits_signed(value: int, bits: int) -> bool:
    return -(1 << (bits - 1)) <= value < (1 << (bits - 1))


_BY_KEY: dict = {}
for _op in Op:
    _, _fmt, _opc, _f3, _f7 = _op.value
    if _fmt in (Fmt.R, Fmt.SHIFT):
        _BY_KEY[(_opc, _f3, _f7)] = _op
    elif _fmt in (Fmt.I, Fmt.S, Fmt.B, Fmt.FENCE, Fmt.LCNT):
        _BY_KEY[(_opc, _f3)] = _op
    elif _fmt in (Fmt.U, Fmt.J, Fmt.BB):
        _BY_KEY[_opc] = _op


@lru_cache(maxsize=1 << 16)
def decode(word: int) -> Instruction:
    """Decode a 32-bit word, raising ``IllegalInstruction`` for anything unknown."""
    if not 0 <= word <= 0xFFFFFFFF:
        raise IllegalInstruction(word & 0xFFFFFFFF, "not a 32-bit word")
    opc = word & 0x7F
    rd = (word >> 7) & 0x1F
    f3 = (word >> 12) & 0x7
    rs1 = (word >> 15) & 0x1F
    rs2 = (word >> 20) & 0x1F
    f7 = word >> 25

    if opc == OPC_BB:
        n = word >> 16
        if n == 0:
            raise IllegalBb(word, "bb size must be non-zero")
        return Instruction(
            Op.BB, n=n, seq=bool((word >> 7) & 1),
            sflags=(word >> 8) & 0xF, eflags=(word >> 12) & 0xF,
        )
    if opc in (0b0110111, 0b0010111, 0b1101111):
        op = _BY_KEY[opc]
        if op is Op.JAL:
            imm = ((word >> 31) << 20) | (((word >> 12) & 0xFF) << 12) \
                | (((word >> 20) & 1) << 11) | (((word >> 21) & 0x3FF) << 1)
            return Instruction(op, rd=rd, imm=sext(imm, 21))
        return Instruction(op, rd=rd, imm=sext(word & 0xFFFFF000, 32))
    if opc == 0b1110011:
        if word == 0x00000073:
            return Instruction(Op.ECALL)
        if word == 0x00100073:
            return Instruction(Op.EBREAK)
        raise IllegalInstruction(word, "unsupported SYSTEM instruction")
    if opc in (0b0110011,):
        op = _BY_KEY.get((opc, f3, f7))
        if op is None:
            raise IllegalInstruction(word)
        return Instruction(op, rd=rd, rs1=rs1, rs2=rs2)
    if opc == 0b0010011 and f3 in (0b001, 0b101):
        op = _BY_KEY.get((opc, f3, f7))
        if op is None:
            raise IllegalInstruction(word, "bad shift funct7")
        return Instruction(op, rd=rd, rs1=rs1, imm=rs2)
    op = _BY_KEY.get((opc, f3))
    if op is None:
        raise IllegalInstruction(word)
    fmt = op.fmt
    if fmt is Fmt.I:
        return Instruction(op, rd=rd, rs1=rs1, imm=sext(word >> 20, 12))
    if fmt is Fmt.LCNT:
        if rd >= NUM_LOOP_SETS:
            raise IllegalLcnt(word, f"loop set {rd} out of range")
        return Instruction(op, rd=rd, rs1=rs1, imm=sext(word >> 20, 12))
    if fmt is Fmt.FENCE:
        return Instruction(op, rd=rd, rs1=rs1, imm=word >> 20)
    if fmt is Fmt.S:
        return Instruction(op, rs1=rs1, rs2=rs2, imm=sext((f7 << 5) | rd, 12))
    if fmt is Fmt.B:
        imm = ((word >> 31) << 12) | (((word >> 7) & 1) << 11) \
            | (((word >> 25) & 0x3F) << 5) | (((word >> 8) & 0xF) << 1)
        return Instruction(op, rs1=rs1, rs2=rs2, imm=sext(imm, 13))
    raise IllegalInstruction(word)  # pragma: no cover


def _reg(r: int) -> int:
    if not 0 <= r < 32:
        raise IsaError(f"register index {r} out of range")
    return r


def encode(i: Instruction) -> int:
    """Inverse of :func:`decode`."""
    op = i.op
    _, fmt, opc, f3, f7 = op.value
    rd, rs1, rs2, imm = _reg(i.rd), _reg(i.rs1), _reg(i.rs2), i.imm
    if fmt is Fmt.BB:
        if not 1 <= i.n <= BB_MAX_N:
            raise UnencodableImmediate(f"bb size {i.n} outside 1..{BB_MAX_N}")
        if not (0 <= i.sflags <= 0xF and 0 <= i.eflags <= 0xF):
            raise UnencodableImmediate("loop flags must fit in 4 bits")
        return (i.n << 16) | (i.eflags << 12) | (i.sflags << 8) | (int(i.seq) << 7) | OPC_BB
    if fmt is Fmt.R:
        return (f7 << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | opc
    if fmt is Fmt.SHIFT:
        if not 0 <= imm < 32:
            raise UnencodableImmediate(f"shift amount {imm}")
        return (f7 << 25) | (imm << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | opc
    if fmt in (Fmt.I, Fmt.LCNT):
        if fmt is Fmt.LCNT and rd >= NUM_LOOP_SETS:
            raise UnencodableImmediate(f"loop set {rd} out of range")
        if not _fits_signed(imm, 12):
            raise UnencodableImmediate(f"{op.mnemonic} immediate {imm} does not fit 12 bits")
        return ((imm & 0xFFF) << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | opc
    if fmt is Fmt.FENCE:
        if not 0 <= imm <= 0xFFF:
            raise UnencodableImmediate("fence field")
        return (imm << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | opc
    if fmt is Fmt.S:
        if not _fits_signed(imm, 12):
            raise UnencodableImmediate(f"{op.mnemonic} offset {imm} does not fit 12 bits")
        imm &= 0xFFF
        return ((imm >> 5) << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | ((imm & 0x1F) << 7) | opc
    if fmt is Fmt.B:
        if not _fits_signed(imm, 13) or imm & 1:
            raise UnencodableImmediate(f"branch offset {imm}")
        imm &= 0x1FFF
        return (((imm >> 12) & 1) << 31) | (((imm >> 5) & 0x3F) << 25) | (rs2 << 20) | (rs1 << 15) \
            | (f3 << 12) | (((imm >> 1) & 0xF) << 8) | (((imm >> 11) & 1) << 7) | opc
    if fmt is Fmt.U:
        if imm & 0xFFF or not _fits_signed(imm, 32):
            raise UnencodableImmediate(f"upper immediate {imm:#x}")
        return (imm & 0xFFFFF000) | (rd << 7) | opc
    if fmt is Fmt.J:
        if not _fits_signed(imm, 21) or imm & 1:
            raise UnencodableImmediate(f"jump offset {imm}")
        imm &= 0x1FFFFF
        return (((imm >> 20) & 1) << 31) | (((imm >> 1) & 0x3FF) << 21) | (((imm >> 11) & 1) << 20) \
            | (((imm >> 12) & 0xFF) << 12) | (rd << 7) | opc
    if op is Op.ECALL:
        return 0x00000073
    if op is Op.EBREAK:
        return 0x00100073
    raise IsaError(f"cannot encode {op}")  # pragma: no cover


def classify(i: Instruction) -> InstrClass:
    op = i.op
    cf = op in CONTROL_FLOW
    return InstrClass(
        is_control_flow=cf,
        is_conditional_branch=op in BRANCHES,
        is_call=op in (Op.JAL, Op.JALR) and i.rd != 0,
        is_load=op in LOADS,
        is_store=op in STORES,
        is_bb=op is Op.BB,
        is_lcnt=op is Op.LCNT,
    )


def reads(i: Instruction) -> tuple[int, ...]:
    """Source registers actually read (x0 excluded)."""
    fmt = i.op.fmt
    if fmt in (Fmt.R, Fmt.S, Fmt.B):
        regs = (i.rs1, i.rs2)
    elif fmt in (Fmt.I, Fmt.SHIFT, Fmt.LCNT):
        regs = (i.rs1,)
    elif i.op is Op.ECALL:
        regs = (10, 17)
    else:
        regs = ()
    return tuple(r for r in regs if r)


def writes(i: Instruction) -> int:
    """Destination register, 0 when nothing architectural is written."""
    fmt = i.op.fmt
    if fmt in (Fmt.R, Fmt.I, Fmt.SHIFT, Fmt.U, Fmt.J):
        return i.rd
    return 0


def reg_name(r: int) -> str:
    return ABI_NAMES[r]


def flags_str(mask: int) -> str:
    """Loop flags as a left-to-right vector: character ``k`` is loop set ``k``.

    At least two characters are printed, more only when a higher set is used.
    """
    width = max(2, mask.bit_length())
    return "".join("1" if mask >> k & 1 else "0" for k in range(width))


def format_instruction(i: Instruction, target: str | None = None) -> str:
    """Assembler syntax for ``i``; ``target`` replaces numeric branch/jump offsets."""
    op, fmt, m = i.op, i.op.fmt, i.op.mnemonic
    r = ABI_NAMES
    if fmt is Fmt.BB:
        s = f"bb {i.n}, {int(i.seq)}"
        if i.sflags or i.eflags:
            s += f", {flags_str(i.sflags)}, {flags_str(i.eflags)}"
        return s
    if fmt is Fmt.LCNT:
        s = f"lcnt {i.imm}, lc{i.rd}"
        return s + (f", {r[i.rs1]}" if i.rs1 else "")
    if fmt is Fmt.R:
        return f"{m} {r[i.rd]}, {r[i.rs1]}, {r[i.rs2]}"
    if fmt is Fmt.SHIFT:
        return f"{m} {r[i.rd]}, {r[i.rs1]}, {i.imm}"
    if op in LOADS or op is Op.JALR:
        return f"{m} {r[i.rd]}, {i.imm}({r[i.rs1]})"
    if fmt is Fmt.I:
        return f"{m} {r[i.rd]}, {r[i.rs1]}, {i.imm}"
    if fmt is Fmt.S:
        return f"{m} {r[i.rs2]}, {i.imm}({r[i.rs1]})"
    if fmt is Fmt.B:
        return f"{m} {r[i.rs1]}, {r[i.rs2]}, {target if target is not None else i.imm}"
    if fmt is Fmt.U:
        return f"{m} {r[i.rd]}, {(i.imm >> 12) & 0xFFFFF:#x}"
    if fmt is Fmt.J:
        return f"{m} {r[i.rd]}, {target if target is not None else i.imm}"
    if fmt is Fmt.FENCE:
        if i.imm == 0x0FF and i.rd == 0 and i.rs1 == 0:
            return "fence"
        return f"fence.raw {i.imm:#x}, {r[i.rd]}, {r[i.rs1]}"
    return m
