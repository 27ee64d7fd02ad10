import pytest

from bbrv import asm

LOOP_COUNTER_SRC = """\
    bb 2, 1, 00, 00
    add a0, a0, a1
    lcnt 3, lc1
    bb 2, 0, 01, 01
    add a1, a2, a2
    mul a2, a1, a2
    bb 7, 0, 00, 00
"""

# blocks of 6, 2 and 16 instructions; the first ends in a bne that only
# depends on the addi three instructions earlier
THREE_BLOCKS_SRC = """\
top:
    add     a5, a0, a4
    add     t4, a3, a4
    addi    a4, a4, 8
    mul     a1, t3, t2
    lh      t2, 0(a5)
    bne     a4, a6, top
    lh      a7, 0(a1)
    li      a4, 0
mid:
    sh      a1, 0(a0)
    sh      t4, 2(a0)
    sh      a7, 4(a0)
    sh      a4, 6(a0)
    addi    t0, a4, 1
    addi    t1, a4, 2
    add     t5, t0, t1
    sh      t5, 8(a0)
    sh      t0, 10(a0)
    sh      t1, 12(a0)
    xor     t6, t5, t0
    sh      t6, 14(a0)
    andi    a2, t6, 255
    addi    a0, a0, 16
    addi    s0, s0, -1
    bnez    s0, mid
"""


def halting(body: str, data: str = "") -> str:
    """Wrap straight-line code with an entry label and the exit sequence."""
    src = "    .text\n_start:\n" + body
    src += "halt:\n    li a7, 93\n    ecall\n    j halt\n"
    if data:
        src += "    .data\n" + data
    return src


@pytest.fixture
def loop_counter_image():
    return asm.assemble_text(LOOP_COUNTER_SRC)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if not mod or not mod.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.REPORT, key=str):
        terminalreporter.line(mod.REPORT[key])
