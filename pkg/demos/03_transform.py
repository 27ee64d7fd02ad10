"""Convert legacy assembly to bb form, then compare the three code versions."""
from bbrv import asm, cfg, harness, refmodel
from bbrv.refmodel import Mode

src = asm.parse(harness.corpus_source("crc32"))
legacy = asm.assemble(src)
want = refmodel.run(legacy, Mode.LEGACY)

for name, kw in [("info", dict(resched=False)), ("resched", {}), ("resched+hwloops", dict(hwloops=True))]:
    out, rep = cfg.transform(src, **kw)
    img = asm.assemble(out)
    got = refmodel.run(img, Mode.BB)
    params = [b.resched for b in rep.per_block if b.resched is not None]
    print(f"{name:16s} blocks={rep.blocks:3d} lcnt={rep.lcnt} removed={rep.removed} "
          f"overhead={rep.overhead:.1%} bytes {len(legacy.code)}->{len(img.code)} "
          f"mean resched={sum(params) / len(params):.2f} same result={got.status == want.status}")

# one block before and after rescheduling
g = cfg.insert_bb(cfg.split_at_calls(cfg.build_cfg(src)))
loop = max(g.blocks, key=lambda b: b.size)
print(asm.format_source(cfg.to_source(cfg.ControlFlowGraph([loop], g.data))))
moved = cfg.reschedule_terminators(g)
print(asm.format_source(cfg.to_source(cfg.ControlFlowGraph([b for b in moved.blocks if b.label == loop.label],
                                                            g.data))))
