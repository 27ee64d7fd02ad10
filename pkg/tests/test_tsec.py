"""t-security checking and the bounds-check bypass gadget."""
import pytest

from bbrv import asm, harness, tsec
from bbrv.pipeline import PipelineConfig, Stage, Strategy, TraceLog, simulate
from bbrv.refmodel import Mode, RetireLog

SPECULATIVE = [s for s in Strategy if s.speculative]


@pytest.fixture(scope="module")
def gadget():
    return tsec.spectre_v1_scenario()


def taken_branch_program():
    # the branch is the last word of the first icache line, so the fall-through fetch misses
    return asm.assemble_text("_start:\nli t0, 1\n" + "nop\n" * 6 + "bnez t0, far\naddi a0, a0, 1\naddi a0, a0, 1\n"
                             + "nop\n" * 16 + "far:\nli a7, 93\necall\nj far\n")


def test_empty_trace_is_secure():
    v = tsec.check_tsec(TraceLog("r"), RetireLog(run_id="r"))
    assert v.secure and v.strong and v.violations == []


def test_mismatched_run():
    a = simulate(taken_branch_program(), PipelineConfig(strategy=Strategy.BASELINE, mode=Mode.LEGACY))
    b = simulate(taken_branch_program(), PipelineConfig(strategy=Strategy.BASELINE, mode=Mode.LEGACY))
    with pytest.raises(tsec.MismatchedRun):
        tsec.check_tsec(a.trace, b.log)


@pytest.mark.parametrize("strategy", SPECULATIVE)
def test_speculative_fetch_leaves_icache_footprints(strategy):
    c = PipelineConfig(strategy=strategy, mode=Mode.LEGACY)
    _, v = tsec.run_and_check(taken_branch_program(), c)
    assert not v.secure
    assert v.by_resource().get("ICacheLine", 0) >= 1


@pytest.mark.parametrize("strategy", [Strategy.SIMPLEST, Strategy.BASIC_BLOCKER])
@pytest.mark.parametrize("name", harness.CORPUS)
def test_non_speculative_strategies_are_secure(strategy, name):
    version = harness.Version.BB_RESCHED if strategy is Strategy.BASIC_BLOCKER else harness.Version.BASELINE
    b = harness.build(harness.corpus_source(name), version)
    res, v = tsec.run_and_check(b.img, PipelineConfig(strategy=strategy, mode=b.mode))
    assert v.secure and res.stats.flushes == 0


def test_retired_effects_match_reference():
    b = harness.build(harness.corpus_source("crc32"), harness.Version.BB_RESCHED)
    res = simulate(b.img, PipelineConfig(strategy=Strategy.BASIC_BLOCKER))
    seq_to_addr = dict(zip(res.log.fetch_seqs, res.log.addresses()))
    writes = [(seq_to_addr[e.cause], e.arg) for e in res.trace.events if e.resource == "RegFile"]
    expect = [(e.addr, e.instr.rd) for e in res.log.entries if e.instr.rd and e.instr.op.fmt.name in
              ("R", "I", "SHIFT", "U", "J")]
    assert writes == expect
    assert sum(e.resource == "PcWrite" for e in res.trace.events) == len(res.log)


def test_exception_clause():
    img = asm.assemble_text("bb 2, 1\naddi a0, a0, 1\nlw a1, 0(zero)\n")
    c = PipelineConfig(strategy=Strategy.BASIC_BLOCKER)
    res, weak = tsec.run_and_check(img, c)
    assert weak.secure and weak.excused
    assert not weak.strong
    strong = tsec.check_tsec(res.trace, res.log, strong=True)
    assert not strong.secure


def test_clean_run_is_strongly_secure():
    b = harness.build(harness.corpus_source("fsm"), harness.Version.BB_RESCHED)
    _, v = tsec.run_and_check(b.img, PipelineConfig(strategy=Strategy.BASIC_BLOCKER), strong=True)
    assert v.strong


def test_verdict_json():
    _, v = tsec.run_and_check(taken_branch_program(), PipelineConfig(strategy=Strategy.BASELINE, mode=Mode.LEGACY))
    d = v.to_dict()
    assert d["violations"] and d["violations"][0]["addr"].startswith("0x")
    assert d["strong"] is False


class TestGadget:
    def test_dynamic_target_leaks_the_secret(self, gadget):
        out = gadget.run(Strategy.DYNAMIC_TARGET_BP)
        assert out.leaked
        assert tsec.SECRET in out.hot_values
        assert out.verdict.by_resource().get("DCacheLine", 0) >= 1

    def test_basicblocker_does_not_leak(self, gadget):
        out = gadget.run(Strategy.BASIC_BLOCKER)
        assert not out.leaked
        assert out.verdict.secure and out.result.stats.flushes == 0

    def test_baseline_only_pollutes_the_icache(self, gadget):
        out = gadget.run(Strategy.BASELINE)
        assert not out.leaked
        assert "DCacheLine" not in out.verdict.by_resource()
        assert out.verdict.by_resource().get("ICacheLine", 0) >= 1

    def test_simplest_is_clean(self, gadget):
        out = gadget.run(Strategy.SIMPLEST)
        assert not out.leaked and out.verdict.secure

    def test_early_resolution_closes_the_window(self, gadget):
        assert not gadget.run(Strategy.DYNAMIC_TARGET_BP, resolve=Stage.EX).leaked

    def test_training_values_are_hot_everywhere(self, gadget):
        for s in (Strategy.SIMPLEST, Strategy.BASIC_BLOCKER, Strategy.DYNAMIC_TARGET_BP):
            assert {1, 2, 3, 4} <= set(gadget.run(s).hot_values)

    def test_same_architectural_result(self, gadget):
        a = gadget.run(Strategy.DYNAMIC_TARGET_BP).result
        b = gadget.run(Strategy.BASIC_BLOCKER).result
        assert a.status == b.status
