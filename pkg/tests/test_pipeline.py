"""Cycle-level pipeline: oracle equivalence, timing contract, accounting."""
import itertools

import pytest

from bbrv import asm, cfg, harness, refmodel, synth
from bbrv.pipeline import (STALL_CAUSES, PipelineConfig, Stage, Strategy, hotspot_analysis, simulate,
                           weighted_distribution)
from bbrv.refmodel import Halted, Mode
from bbrv.uarch import ConfigError

NO_CACHE = PipelineConfig().without_caches()


def legacy_cfg(strategy, **kw):
    return PipelineConfig(strategy=strategy, mode=Mode.LEGACY, **kw)


def straight(n):
    return asm.assemble_text("_start:\n" + "addi t0, t0, 1\n" * n + "halt: li a7, 93\necall\nj halt\n")


def jump_over(taken):
    mid = "j L\naddi t2, t2, 1\naddi t2, t2, 1\nL:\n" if taken else "addi t1, t1, 1\n"
    return asm.assemble_text("_start:\n" + "addi t0, t0, 1\n" * 5 + mid + "addi t0, t0, 1\n" * 5
                             + "halt: li a7, 93\necall\nj halt\n")


def bb_loop(iterations, r, branch_first=True):
    """Loop block with ``r`` independent instructions after (or before) its branch."""
    work = "addi t0, t0, 1\n" * r
    br = "addi s0, s0, -1\nbnez s0, loop\n"
    body = br + work if branch_first else work + br
    return asm.assemble_text(f"_start:\nbb 2, 1\nli s0, {iterations}\nli t0, 0\nloop:\nbb {r + 2}, 0\n"
                             + body + "bb 3, 0\nli a7, 93\necall\nj 0\n")


def check_identities(st):
    assert st.cycles == st.fetches + sum(st.stalls.values()) + st.drain
    assert st.fetches + st.side_fetches == st.retired + st.flushes + st.excepted
    assert st.cycles >= st.retired


def same_as_reference(img, c, fuel=200_000):
    res = simulate(img, c, fuel)
    ref = refmodel.run(img, c.mode, fuel)
    assert res.log.addresses() == ref.log.addresses()
    assert res.status == ref.status
    assert res.output == ref.output
    assert res.state.regs == ref.state.regs
    assert res.state.mem.data == ref.state.mem.data
    check_identities(res.stats)
    return res


STRATEGIES = list(Strategy)
CONFIGS = list(itertools.product(STRATEGIES, (Stage.MEM, Stage.EX), (True, False)))


@pytest.mark.parametrize("strategy,resolve,caches", CONFIGS)
def test_random_programs_match_reference(strategy, resolve, caches):
    for seed in range(4):
        src = asm.parse(synth.random_program(seed))
        legacy = PipelineConfig(strategy=strategy, resolve=resolve, mode=Mode.LEGACY)
        if not caches:
            legacy = legacy.without_caches()
        same_as_reference(asm.assemble(src), legacy)
        out, _ = cfg.transform(src)
        same_as_reference(asm.assemble(out), legacy.with_(mode=Mode.BB))


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_exceptions_match_reference(strategy):
    img = asm.assemble_text("bb 2, 1\naddi a0, a0, 1\nlw a1, 2(sp)\naddi a0, a0, 1\n")
    res = same_as_reference(img, PipelineConfig(strategy=strategy))
    assert res.status == refmodel.Excepted("misaligned", asm.CODE_BASE + 8)


@pytest.mark.parametrize("resolve,penalty", [(Stage.MEM, 3), (Stage.EX, 2)])
def test_baseline_taken_jump_penalty(resolve, penalty):
    c = legacy_cfg(Strategy.BASELINE, resolve=resolve).without_caches()
    base = simulate(jump_over(False), c).stats
    taken = simulate(jump_over(True), c).stats
    assert taken.retired == base.retired
    assert taken.cycles - base.cycles == penalty


@pytest.mark.parametrize("strategy", [Strategy.STATIC_BP, Strategy.DYNAMIC_BP, Strategy.DYNAMIC_TARGET_BP])
def test_jump_target_known_at_decode(strategy):
    c = legacy_cfg(strategy).without_caches()
    assert simulate(jump_over(True), c).stats.cycles - simulate(jump_over(False), c).stats.cycles == 1


def test_simplest_waits_for_decode():
    c = legacy_cfg(Strategy.SIMPLEST).without_caches()
    slow = simulate(straight(200), c).stats.cycles
    fast = simulate(straight(200), legacy_cfg(Strategy.BASELINE).without_caches()).stats.cycles
    assert slow / fast >= 1.9


def test_cold_icache_misses():
    st = simulate(straight(64), legacy_cfg(Strategy.BASELINE)).stats
    lines = -(-(67 * 4) // 32)
    assert st.stalls["icacheMiss"] == lines * PipelineConfig().icache.miss_penalty


def test_straight_block_approaches_one_ipc():
    def run(n):
        img = asm.assemble_text(f"bb {n}, 1\n" + "addi t0, t0, 1\n" * n + "bb 3, 0\nli a7, 93\necall\nj 0\n")
        return simulate(img, PipelineConfig(strategy=Strategy.BASIC_BLOCKER).without_caches()).stats
    a, b = run(100), run(1000)
    assert b.cycles - a.cycles == 900
    assert b.ipc > 0.99


class TestBasicBlockerBoundaries:
    cfg = PipelineConfig(strategy=Strategy.BASIC_BLOCKER).without_caches()

    def per_iteration_stalls(self, c, r, branch_first=True):
        s1 = simulate(bb_loop(10, r, branch_first), c).stats
        s2 = simulate(bb_loop(20, r, branch_first), c).stats
        return {k: (s2.stalls[k] - s1.stalls[k]) / 10 for k in STALL_CAUSES}

    def test_four_trailing_instructions_hide_the_branch(self):
        st = self.per_iteration_stalls(self.cfg, 4)
        assert st["waitBranch"] == 0 and st["waitBb"] == 0
        whole = simulate(bb_loop(10, 4), self.cfg).stats
        assert whole.stalls["waitBranch"] == 0
        assert whole.stalls["waitBb"] == 1   # the very first block header

    def test_three_trailing_instructions_leave_a_bubble(self):
        st = self.per_iteration_stalls(self.cfg, 3)
        assert st["waitBranch"] == 0 and st["waitBb"] == 1

    def test_branch_at_block_end_is_worst(self):
        worst = self.per_iteration_stalls(self.cfg, 4, branch_first=False)
        best = self.per_iteration_stalls(self.cfg, 4)
        assert worst["waitBranch"] + worst["waitBb"] > best["waitBranch"] + best["waitBb"]
        assert worst["waitBranch"] == 3

    @pytest.mark.parametrize("variant", [dict(bb_forward=Stage.ID), dict(resolve=Stage.EX),
                                         dict(dual_port_bb=True)])
    def test_optimisations_need_fewer_trailing_instructions(self, variant):
        st = self.per_iteration_stalls(self.cfg.with_(**variant), 3)
        assert st["waitBranch"] == 0 and st["waitBb"] == 0

    def test_no_flushes(self):
        for r in range(6):
            assert simulate(bb_loop(5, r), self.cfg).stats.flushes == 0


@pytest.mark.parametrize("name", harness.CORPUS)
def test_basicblocker_on_legacy_code_times_like_simplest(name):
    img = asm.assemble_text(harness.corpus_source(name))
    a = simulate(img, legacy_cfg(Strategy.SIMPLEST), trace=False).stats
    b = simulate(img, legacy_cfg(Strategy.BASIC_BLOCKER), trace=False).stats
    assert a.cycles == b.cycles and b.flushes == 0


def test_invalid_configurations():
    with pytest.raises(ConfigError):
        PipelineConfig(strategy=Strategy.BASELINE, dual_port_bb=True).validate()
    with pytest.raises(ConfigError):
        PipelineConfig(resolve=Stage.WB).validate()
    with pytest.raises(ConfigError):
        PipelineConfig(strategy=Strategy.STATIC_BP, bb_forward=Stage.ID).validate()
    with pytest.raises(ConfigError):
        simulate(straight(4), PipelineConfig(strategy=Strategy.SIMPLEST, dual_port_bb=True))
    with pytest.raises(ConfigError):
        PipelineConfig(bht_entries=48).validate()


def test_deterministic():
    img = asm.assemble_text(harness.corpus_source("fsm"))
    c = legacy_cfg(Strategy.DYNAMIC_TARGET_BP)
    a, b = simulate(img, c), simulate(img, c)
    assert a.stats.to_dict() == b.stats.to_dict()
    assert [e[:2] + e[3:] for e in a.trace.events] == [e[:2] + e[3:] for e in b.trace.events]


def test_predictor_statistics():
    img = asm.assemble_text(harness.corpus_source("isort64"))
    st = simulate(img, legacy_cfg(Strategy.DYNAMIC_BP), trace=False).stats
    assert 0 < st.mispredictions < st.predictions
    base = simulate(img, legacy_cfg(Strategy.BASELINE), trace=False).stats
    assert base.predictions == st.predictions   # fall-through is Baseline's implicit guess
    assert base.mispredictions > st.mispredictions


def test_weighted_block_sizes():
    d = weighted_distribution([(3, 100), (10, 1)])
    assert d.mean == pytest.approx((3 * 100 + 10) / 101)
    assert round(d.mean, 3) == 3.069
    assert d.median == 3


def test_single_block_loop_histogram():
    b = harness.build(harness.corpus_source("dot256"), harness.Version.BB_RESCHED)
    res = simulate(b.img, PipelineConfig(strategy=Strategy.BASIC_BLOCKER), trace=False)
    sizes, resched = hotspot_analysis(res.stats, b.report)
    assert sum(sizes.hist.values()) == sum(res.stats.block_counts.get(x.addr, 0) for x in b.report.per_block)
    assert sizes.mean >= 1 and resched.mean >= 0
    one = weighted_distribution([(12, 40)])
    assert one.hist == {12: 40} and one.mean == one.median == 12


def test_stats_json_fields():
    d = simulate(straight(8), legacy_cfg(Strategy.BASELINE)).stats.to_dict()
    for k in ("cycles", "retired", "flushes", "stalls", "predictions", "mispredictions",
              "block_counts", "block_size_hist", "resched_hist"):
        assert k in d
    assert set(d["stalls"]) == set(STALL_CAUSES)


def test_halted_status_passes_through():
    assert simulate(straight(3), legacy_cfg(Strategy.STATIC_BP)).status == Halted(0)
