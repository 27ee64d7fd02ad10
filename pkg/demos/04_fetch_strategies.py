"""Cycle counts and stall breakdown of one kernel under every fetch strategy."""
from bbrv import harness
from bbrv.harness import Version
from bbrv.pipeline import Stage, Strategy, simulate

legacy = harness.build(harness.corpus_source("isort64"), Version.BASELINE)
blocked = harness.build(harness.corpus_source("isort64"), Version.BB_RESCHED)

rows = []
for name, c in harness.presets().items():
    b = blocked if c.strategy is Strategy.BASIC_BLOCKER else legacy
    res = simulate(b.img, c.with_(mode=b.mode), trace=False)
    st = res.stats
    stalls = {k: v for k, v in st.stalls.items() if v}
    rows.append((name, st.cycles))
    print(f"{name:26s} cycles={st.cycles:7d} ipc={st.retired / st.cycles:.3f} flushes={st.flushes:5d} {stalls}")

base = dict(rows)["Baseline"]
for name, cyc in rows:
    print(f"{name:26s} {harness.normalize(cyc, base):.4f} x Baseline")

# resolving branches in EX shortens the penalty for the speculative strategies too
c = harness.presets()["Baseline"]
for stage in (Stage.MEM, Stage.EX):
    print("Baseline resolve", stage.name, simulate(legacy.img, c.with_(resolve=stage, mode=legacy.mode),
                                                   trace=False).stats.cycles)
