"""Block-semantics conformance cases shared by the unit and acceptance tests.

Each case assembles a tiny program, runs it on the reference model and
checks the terminal status and the retired path.  Addresses are given as
word indices from the code base.
"""
from bbrv import asm
from bbrv.refmodel import Excepted, Halted, Mode, initial_state, run, step

CASES = []

EXIT = "li a7, 93\necall\n"
EXIT_BLOCK = "bb 3, 0\n" + EXIT + "j 0\n"


def case(fn):
    CASES.append(fn)
    return fn


def execute(src, mode=Mode.BB, regs=None, fuel=200):
    img = asm.assemble_text(src)
    res = run(img, mode, fuel, regs)
    path = [(e.addr - img.base) // 4 for e in res.log.entries]
    return res, path


def at(k):
    return asm.CODE_BASE + 4 * k


@case
def second_bb_inside_a_block_clears_ic_and_raises():
    img = asm.assemble_text("bb 3, 1\naddi a0, a0, 1\nbb 1, 1\naddi a0, a0, 1\naddi a0, a0, 1\n")
    s = initial_state(img, Mode.BB)
    step(s)
    step(s)
    assert s.ic == 2
    try:
        step(s)
    except Exception as e:  # the offending bb has already updated the state
        assert e.kind == "bb-semantics" and e.addr == at(2)
        assert (s.ic, s.e) == (0, 1)
    else:
        raise AssertionError("nested bb accepted")
    res, path = execute("bb 3, 1\naddi a0, a0, 1\nbb 1, 1\naddi a0, a0, 1\naddi a0, a0, 1\n")
    assert res.status == Excepted("bb-semantics", at(2))
    assert path == [0, 1, 2]


@case
def taken_branch_redirects_at_block_end():
    res, path = execute("bb 2, 0\nbeq zero, zero, tgt\naddi a0, a0, 1\n"
                        "bb 1, 1\naddi a0, a0, 100\ntgt:\nbb 4, 0\naddi a0, a0, 10\n" + EXIT + "j 0\n")
    assert path == [0, 1, 2, 5, 6, 7, 8]
    assert res.status == Halted(11)


@case
def block_without_control_flow_must_be_sequential():
    res, path = execute("bb 2, 0\naddi a0, a0, 1\naddi a0, a0, 1\n" + EXIT_BLOCK)
    assert res.status == Excepted("bb-semantics", at(2))
    assert path == [0, 1, 2]


@case
def two_control_flow_instructions_in_one_block():
    res, path = execute("bb 2, 0\nbeq a0, a1, end\nbne a0, a1, end\nend:\nbb 2, 0\n" + EXIT)
    assert res.status == Excepted("bb-semantics", at(2))
    assert path == [0, 1, 2]


@case
def sequential_block_with_control_flow():
    res, path = execute("bb 2, 1\naddi a0, a0, 1\nbeq a0, a0, end\nend:\nbb 2, 0\n" + EXIT)
    assert res.status == Excepted("bb-semantics", at(2))
    assert path == [0, 1, 2]


@case
def not_taken_branch_falls_through_to_block_end():
    res, path = execute("bb 3, 0\nbne zero, zero, far\naddi a0, a0, 1\naddi a0, a0, 2\n"
                        + EXIT_BLOCK + "far:\n" + EXIT_BLOCK)
    assert path == [0, 1, 2, 3, 4, 5, 6]
    assert res.status == Halted(3)


@case
def instruction_outside_any_block_needs_bb():
    res, path = execute("addi a0, a0, 1\n" + EXIT)
    assert res.status == Excepted("bb-required", at(0))
    assert path == []


@case
def falling_off_a_block_into_plain_code():
    res, path = execute("bb 1, 1\naddi a0, a0, 1\naddi a0, a0, 1\n" + EXIT)
    assert res.status == Excepted("bb-required", at(2))
    assert path == [0, 1]


@case
def legacy_mode_runs_plain_code():
    res, path = execute("addi a0, a0, 1\nj skip\naddi a0, a0, 5\nskip:\n" + EXIT, mode=Mode.LEGACY)
    assert path == [0, 1, 3, 4]
    assert res.status == Halted(1)


@case
def legacy_mode_uses_block_semantics_inside_a_range():
    res, path = execute("bb 2, 0\nj skip\naddi a0, a0, 5\naddi a0, a0, 7\nskip:\n" + EXIT, mode=Mode.LEGACY)
    assert path == [0, 1, 2, 4, 5]
    assert res.status == Halted(5)


@case
def sequential_block_continues_after_its_body():
    res, path = execute("bb 2, 1\naddi a0, a0, 1\naddi a0, a0, 1\n" + EXIT_BLOCK)
    assert path == [0, 1, 2, 3, 4, 5]
    assert res.status == Halted(2)


@case
def call_links_to_the_block_fall_through():
    res, path = execute("_start:\nbb 3, 0\njal ra, f\naddi a0, a0, 1\naddi a0, a0, 1\n"
                        + EXIT_BLOCK + "f:\nbb 2, 0\nret\naddi a0, a0, 10\n")
    assert path == [0, 1, 2, 3, 8, 9, 10, 4, 5, 6]
    assert res.status == Halted(12)
    assert res.state.reg("ra") == at(4)


@case
def early_branch_executes_the_rest_of_the_block():
    res, path = execute("bb 4, 0\nbeq zero, zero, tgt\naddi a0, a0, 1\naddi a0, a0, 1\naddi a0, a0, 1\n"
                        "bb 1, 1\naddi a0, a0, 50\ntgt:\n" + EXIT_BLOCK)
    assert path == [0, 1, 2, 3, 4, 7, 8, 9]
    assert res.status == Halted(3)


@case
def loop_end_flag_with_exhausted_counter_exits_sequentially():
    res, path = execute("bb 2, 1\naddi a0, a0, 0\nlcnt 1, lc0\nbb 1, 0, 1, 1\naddi a0, a0, 1\n"
                        + EXIT_BLOCK)
    assert path == [0, 1, 2, 3, 4, 5, 6, 7]
    assert res.status == Halted(1)


@case
def zero_register_ignores_writes():
    res, _ = execute("bb 5, 0\naddi zero, zero, 5\nadd a0, zero, zero\n" + EXIT + "j 0\n")
    assert res.status == Halted(0)
    assert res.state.regs[0] == 0


@case
def exit_call_halts():
    res, path = execute("ecall\n", mode=Mode.LEGACY, regs={"a0": 7, "a7": 93})
    assert res.status == Halted(7)
    assert path == [0]


@case
def breakpoint_stops_with_failure():
    res, _ = execute("bb 1, 0\nebreak\n")
    assert res.status == Excepted("ebreak", at(1))


@case
def misaligned_and_out_of_range_accesses():
    res, _ = execute("bb 2, 1\naddi t0, sp, -2\nlw a0, 0(t0)\n")
    assert res.status == Excepted("misaligned", at(2))
    res, _ = execute("bb 2, 1\nlui t0, 0x10000\nlw a0, 0(t0)\n")
    assert res.status == Excepted("out-of-range", at(2))


@case
def illegal_word_is_reported():
    img = asm.ProgramImage(asm.CODE_BASE, b"\xff\xff\xff\xff", asm.CODE_BASE)
    res = run(img, Mode.LEGACY, 10)
    assert res.status == Excepted("illegal-instruction", at(0))
