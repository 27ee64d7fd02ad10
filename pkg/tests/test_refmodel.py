"""Reference interpreter: block semantics, loop counters and whole runs."""
import pytest

from bbrv import asm, harness, isa, refmodel
from bbrv.isa import Op
from bbrv.refmodel import FuelExhausted, Halted, Mode

from conftest import LOOP_COUNTER_SRC
from semantics_cases import CASES

EXPECTED_ORDER = [0x0, 0xC, 0x4, 0x8, 0xC, 0x10, 0x14, 0xC, 0x10, 0x14, 0x18, 0x10, 0x14]


@pytest.mark.parametrize("case", CASES, ids=[c.__name__ for c in CASES])
def test_block_semantics(case):
    case()


def test_there_are_enough_semantics_cases():
    assert len(CASES) >= 12


def test_loop_counter_fetch_order(loop_counter_image):
    trace = refmodel.fetch_order_trace(loop_counter_image)
    assert [a - asm.CODE_BASE for a in trace[:13]] == EXPECTED_ORDER


def test_loop_counter_body_count(loop_counter_image):
    res = refmodel.run(loop_counter_image, Mode.BB, 100)
    mul = asm.CODE_BASE + 0x14
    assert sum(e.addr == mul for e in res.log.entries) == 3


def test_two_sequential_blocks_fetch_order():
    img = asm.assemble_text("bb 2, 1\nnop\nnop\nbb 2, 1\nnop\nnop\n")
    assert [a - asm.CODE_BASE for a in refmodel.fetch_order_trace(img)] == [0, 12, 4, 8, 16, 20]


def test_single_block_fetch_order():
    img = asm.assemble_text("bb 3, 0\nli a7, 93\necall\nj 0\n")
    assert [a - asm.CODE_BASE for a in refmodel.fetch_order_trace(img)] == [0, 4, 8]


def test_fuel_exhaustion_is_distinct():
    img = asm.assemble_text("loop: j loop\n")
    res = refmodel.run(img, Mode.LEGACY, fuel=25)
    assert res.status == FuelExhausted(25)
    assert len(res.log) == 25


def test_output_stream():
    img = asm.assemble_text("li a7, 64\nli a0, 104\necall\nli a0, 105\necall\nli a7, 93\nli a0, 0\necall\n")
    res = refmodel.run(img, Mode.LEGACY)
    assert res.output == b"hi"


@pytest.mark.parametrize("op,a,b,want", [
    ("div", -7, 2, -3), ("rem", -7, 2, -1), ("div", 5, 0, -1), ("rem", 5, 0, 5),
    ("div", -2**31, -1, -2**31), ("rem", -2**31, -1, 0), ("divu", 7, 0, 2**32 - 1),
    ("mulh", -1, -1, 0), ("mulhu", -1, -1, 2**32 - 2), ("mulhsu", -1, 2, -1),
    ("sra", -16, 2, -4), ("srl", -16, 28, 15), ("sltu", -1, 1, 0), ("slt", -1, 1, 1),
])
def test_m_extension_and_shifts(op, a, b, want):
    img = asm.assemble_text(f"{op} a0, a1, a2\nli a7, 93\necall\n")
    res = refmodel.run(img, Mode.LEGACY, regs={"a1": a, "a2": b})
    assert res.state.reg("a0") == want & refmodel.MASK


def test_sign_extending_loads():
    img = asm.assemble_text("la t0, v\nlb a1, 0(t0)\nlbu a2, 0(t0)\nlh a3, 0(t0)\nlhu a4, 0(t0)\n"
                            "li a7, 93\necall\n.data\nv: .word 0xfffff880\n")
    r = refmodel.run(img, Mode.LEGACY).state
    assert [r.reg(x) for x in ("a1", "a2", "a3", "a4")] == [0xFFFFFF80, 0x80, 0xFFFFF880, 0xF880]


@pytest.mark.parametrize("name", harness.CORPUS)
def test_corpus_control_flow_lands_on_block_starts(name):
    b = harness.build(harness.corpus_source(name), harness.Version.BB_RESCHED)
    res = refmodel.run(b.img, Mode.BB)
    assert isinstance(res.status, Halted)
    entries = res.log.entries
    for prev, cur in zip(entries, entries[1:]):
        if cur.addr != prev.addr + 4:
            assert cur.instr.op is Op.BB, f"{cur.addr:#x}"
    assert res.state.regs[0] == 0


@pytest.mark.parametrize("name", harness.CORPUS)
def test_corpus_legacy_run_halts(name):
    res = refmodel.run(asm.assemble_text(harness.corpus_source(name)), Mode.LEGACY)
    assert isinstance(res.status, Halted)
    assert res.state.regs[0] == 0


def test_prefetch_register_is_unused():
    img = asm.assemble_text(LOOP_COUNTER_SRC)
    s = refmodel.initial_state(img)
    assert s.bb_regs() == (0, 0, 0, 0)
    for _ in range(6):
        refmodel.step(s)
    assert s.p is None


def test_step_is_atomic_on_early_exceptions():
    img = asm.assemble_text("addi a0, a0, 1\n")
    s = refmodel.initial_state(img, Mode.BB)
    before = (s.pc, list(s.regs), s.bb_regs())
    with pytest.raises(refmodel.BbRequiredException):
        refmodel.step(s)
    assert (s.pc, list(s.regs), s.bb_regs()) == before
