"""Synthetic programs: random structured CFGs and a stall-free block chain."""
from __future__ import annotations

import random

DATA_WORDS = 16
_VALS = ["t0", "t1", "t2", "t3", "t4", "t5", "a0", "a1", "a2", "a3", "a4", "a5"]
_COUNTERS = ["s2", "s3", "s4"]
_ALU = ["add", "sub", "xor", "or", "and", "sll", "srl", "sra", "slt", "sltu", "mul", "mulh", "div", "remu"]
_ALUI = ["addi", "xori", "ori", "andi", "slti", "slli", "srli"]
_BR = ["beq", "bne", "blt", "bge", "bltu", "bgeu"]

_HALT = """\
    la      t6, out
    sw      a0, 0(t6)
    xor     a0, a0, a1
    xor     a0, a0, t0
halt:
    li      a7, 93
    ecall
    j       halt
"""


class _Gen:
    def __init__(self, rng: random.Random, max_depth: int, budget: int):
        self.rng = rng
        self.max_depth = max_depth
        self.budget = budget
        self.labels = 0
        self.lines: list[str] = []
        self.funcs: list[list[str]] = []

    def label(self, stem: str) -> str:
        self.labels += 1
        return f"{stem}{self.labels}"

    def emit(self, s: str) -> None:
        self.lines.append("    " + s)

    def straight(self, k: int) -> None:
        r = self.rng
        for _ in range(k):
            c = r.random()
            d, a, b = r.choice(_VALS), r.choice(_VALS), r.choice(_VALS)
            if c < 0.45:
                self.emit(f"{r.choice(_ALU)} {d}, {a}, {b}")
            elif c < 0.75:
                op = r.choice(_ALUI)
                imm = r.randrange(0, 31) if op in ("slli", "srli") else r.randrange(-200, 200)
                self.emit(f"{op} {d}, {a}, {imm}")
            elif c < 0.88:
                self.emit(f"lw {d}, {4 * r.randrange(DATA_WORDS)}(s1)")
            else:
                self.emit(f"sw {a}, {4 * r.randrange(DATA_WORDS)}(s1)")

    def stmt_list(self, depth: int) -> None:
        for _ in range(self.rng.randint(1, 3)):
            self.stmt(depth)

    def stmt(self, depth: int) -> None:
        r = self.rng
        c = r.random()
        if depth >= self.max_depth or self.budget <= 0 or c < 0.35:
            self.straight(r.randint(1, 5))
        elif c < 0.6:
            self.if_else(depth)
        elif c < 0.85:
            self.loop(depth)
        else:
            self.call(depth)
        self.budget -= 1

    def if_else(self, depth: int) -> None:
        r = self.rng
        els, end = self.label(".Lelse"), self.label(".Lend")
        self.emit(f"{r.choice(_BR)} {r.choice(_VALS)}, {r.choice(_VALS)}, {els}")
        self.stmt_list(depth + 1)
        if r.random() < 0.7:
            self.emit(f"j {end}")
            self.lines.append(f"{els}:")
            self.stmt_list(depth + 1)
            self.lines.append(f"{end}:")
        else:
            self.lines.append(f"{els}:")
        self.straight(r.randint(0, 1))

    def loop(self, depth: int) -> None:
        r = self.rng
        cnt = _COUNTERS[depth % len(_COUNTERS)]
        head = self.label(".Lloop")
        self.emit(f"li {cnt}, {r.randint(1, 5)}")
        self.lines.append(f"{head}:")
        if r.random() < 0.5:
            self.straight(r.randint(1, 6))
        else:
            self.stmt_list(depth + 1)
        self.emit(f"addi {cnt}, {cnt}, -1")
        self.emit(f"bnez {cnt}, {head}")

    def call(self, depth: int) -> None:
        name = self.label("fn")
        body = [f"{name}:"]
        saved, self.lines = self.lines, body
        self.straight(self.rng.randint(1, 6))
        if self.rng.random() < 0.5:
            skip = self.label(".Lskip")
            self.emit(f"{self.rng.choice(_BR)} {self.rng.choice(_VALS)}, {self.rng.choice(_VALS)}, {skip}")
            self.straight(self.rng.randint(1, 3))
            self.lines.append(f"{skip}:")
        self.emit("ret")
        self.lines = saved
        self.funcs.append(body)
        self.emit(f"call {name}")


def random_program(seed: int, max_depth: int = 3, budget: int = 10) -> str:
    """Terminating RV32IM program with branches, loops, calls, loads and stores.

    Loops are counted with dedicated registers, so every program halts; its
    exit code and the ``out`` word depend on the computed values.
    """
    rng = random.Random(seed)
    g = _Gen(rng, max_depth, budget)
    g.lines.append("_start:")
    g.emit("la s1, data")
    for k, reg in enumerate(_VALS):
        g.emit(f"li {reg}, {rng.randrange(-1000, 1000) or k + 1}")
    g.stmt_list(0)
    while g.budget > 0 and rng.random() < 0.7:
        g.stmt(0)
    text = ["    .text"] + g.lines + [_HALT.rstrip("\n")]
    for f in g.funcs:
        text += f
    text += ["    .data", "out:", "    .word 0", "data:"]
    text += ["    .word " + ", ".join(str(rng.randrange(-5000, 5000)) for _ in range(DATA_WORDS))]
    return "\n".join(text) + "\n"


def zero_stall_chain(iterations: int = 40, sizes: tuple = (8, 12, 16), tail: int = 4) -> str:
    """A loop of fall-through blocks, each ending in a branch behind ``tail`` independent instructions.

    The branch operand of each block is produced by a dependence chain, so
    terminator rescheduling leaves the branch exactly ``tail`` instructions
    before the block end (the loop-closing block gets more).  Every block
    but the last ends in a not-taken forward branch.  All blocks, including
    the entry and the exit, hold at least eight instructions.  The exit block ends in
    the exit call with no jump, so no block has a late terminator.
    """
    if tail < 1 or min(sizes) < tail + 2:
        raise ValueError("blocks must hold the terminator, its operand chain and the tail")
    pad = [f"    addi    t{2 + (j % 4)}, zero, {j}" for j in range(5)]
    out = ["    .text", "_start:", f"    li      s0, {iterations}", "    li      t0, 0", "    li      t1, 0"]
    out += pad
    out.append("loop:")
    for k, size in enumerate(sizes):
        last = k == len(sizes) - 1
        chain = size - tail - 1
        for j in range(chain):
            out.append("    addi    s0, s0, -1" if last and j == 0 else "    addi    t1, t1, 1")
        for j in range(tail):
            out.append(f"    add     t0, t0, t{2 + (j % 4)}")
        if last:
            out.append("    bnez    s0, loop")
        else:
            out.append(f"    bltz    t1, skip{k}")
            out.append(f"skip{k}:")
    out += ["    andi    a0, t0, 255"] + [f"    add     t{2 + (j % 4)}, t0, t1" for j in range(7)]
    out += ["halt:"] + pad + ["    addi    t6, zero, 0", "    li      a7, 93", "    ecall"]
    out += ["    .data", "out:", "    .word 0"]
    return "\n".join(out) + "\n"
