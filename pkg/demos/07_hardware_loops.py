"""Replace a counted loop branch with a loop-counter set and count what it saves."""
from bbrv import asm, cfg, refmodel
from bbrv.pipeline import PipelineConfig, Strategy, simulate
from bbrv.refmodel import Mode

SRC = """
    .text
_start:
    li      a0, 0
    li      s0, 10
loop:
    addi    a0, a0, 3
    xor     a1, a1, a0
    addi    s0, s0, -1
    bnez    s0, loop
halt:
    li      a7, 93
    ecall
    j       halt
"""
src = asm.parse(SRC)
for hw in (False, True):
    out, rep = cfg.transform(src, hwloops=hw)
    img = asm.assemble(out)
    ref = refmodel.run(img, Mode.BB)
    st = simulate(img, PipelineConfig(strategy=Strategy.BASIC_BLOCKER), trace=False).stats
    print(f"hwloops={hw}: {rep.lcnt} lcnt, {rep.removed} removed, result {ref.status}, "
          f"{len(ref.log)} retired, {st.cycles} cycles")
    if hw:
        print(asm.format_source(out))

# a trip count computed at run time is left alone
out, rep = cfg.transform(asm.parse(SRC.replace("li      s0, 10", "lw      s0, 0(sp)")), hwloops=True)
print("data-dependent count:", rep.lcnt, "lcnt")
