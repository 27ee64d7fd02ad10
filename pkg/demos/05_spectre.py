"""A bounds-check bypass gadget: which strategies leave the secret in the data cache."""
from bbrv import tsec
from bbrv.pipeline import Stage, Strategy

scen = tsec.spectre_v1_scenario()
print(f"secret value {scen.secret}, probe array at {scen.probe:#x}")

for s in Strategy:
    out = scen.run(s)
    print(f"{s.value:16s} hot probe slots {out.hot_values} leaked={out.leaked} "
          f"violations={out.verdict.by_resource()} exit={out.result.status}")

# same gadget with branches resolved one stage earlier
out = scen.run(Strategy.DYNAMIC_TARGET_BP, resolve=Stage.EX)
print("dynamic-target, resolve EX: leaked =", out.leaked)

# the first offending event of the leaking run
v = scen.run(Strategy.DYNAMIC_TARGET_BP).verdict
ev = next(e for e in v.violations if e.resource == "DCacheLine")
where = {v: k for k, v in scen.legacy.symbols.items()}.get(ev.addr, "?")
print(f"cycle {ev.cycle}: {ev.resource} {ev.arg:#x} caused by a wrong-path fetch at {ev.addr:#x} ({where})")
