"""Command-line entry point ``bbrv``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import asm, cfg, harness, refmodel, tsec
from .pipeline import PipelineConfig, Stage, Strategy, simulate
from .refmodel import Excepted, FuelExhausted, Halted, Mode
from .uarch import ConfigError

_STRATEGIES = {
    "simplest": Strategy.SIMPLEST,
    "baseline": Strategy.BASELINE,
    "static": Strategy.STATIC_BP,
    "staticbp": Strategy.STATIC_BP,
    "dynamic": Strategy.DYNAMIC_BP,
    "dynamicbp": Strategy.DYNAMIC_BP,
    "dynamic-target": Strategy.DYNAMIC_TARGET_BP,
    "dynamictargetbp": Strategy.DYNAMIC_TARGET_BP,
    "basicblocker": Strategy.BASIC_BLOCKER,
}


def _status_dict(st) -> dict:
    if isinstance(st, Halted):
        return {"status": "halted", "code": st.code}
    if isinstance(st, Excepted):
        return {"status": "exception", "kind": st.kind, "addr": f"{st.addr:#010x}"}
    if isinstance(st, FuelExhausted):
        return {"status": "fuel-exhausted", "fuel": st.fuel}
    return {"status": str(st)}


def _exit_code(st) -> int:
    if isinstance(st, Halted):
        return st.code & 0xFF
    return 2


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_asm(a) -> int:
    img = asm.assemble_text(Path(a.input).read_text())
    img.save(a.output)
    return 0


def cmd_dis(a) -> int:
    sys.stdout.write(asm.format_source(asm.disassemble(asm.ProgramImage.load(a.input))))
    return 0


def cmd_transform(a) -> int:
    src = asm.parse(Path(a.input).read_text())
    out, rep = cfg.transform(src, resched=not a.no_resched, hwloops=a.hwloops)
    text = asm.format_source(out)
    if a.output:
        Path(a.output).write_text(text)
    else:
        sys.stdout.write(text)
    if a.report:
        rep.attach_addresses(asm.assemble(out))
        d = rep.to_dict()
        d["byte_delta"] = rep.byte_delta
        _write_json(d, a.report)
    return 0


def _parse_range(text: str) -> tuple[int, int]:
    addr, _, length = text.partition(":")
    return int(addr, 0), int(length, 0)


def cmd_run(a) -> int:
    img = asm.ProgramImage.load(a.img)
    mode = Mode(a.mode)
    if a.trace == "fetch":
        for addr in refmodel.fetch_order_trace(img, a.fuel):
            print(f"{addr:#010x}")
        return 0
    res = refmodel.run(img, mode, a.fuel)
    if a.trace == "retire":
        for e in res.log.entries:
            print(f"{e.index:6d} {e.addr:#010x}  {e.instr}")
    if res.output:
        sys.stdout.write(res.output.decode("latin-1"))
        sys.stdout.write("\n")
    info = _status_dict(res.status)
    info["retired"] = len(res.log)
    if a.dump_range:
        addr, length = _parse_range(a.dump_range)
        info["dump"] = res.state.mem.read(addr, length).hex()
    print(json.dumps(info), file=sys.stderr)
    return _exit_code(res.status)


def _config(a) -> PipelineConfig:
    strategy = _STRATEGIES[a.strategy.lower()]
    mode = Mode(a.mode) if getattr(a, "mode", None) else (
        Mode.BB if strategy is Strategy.BASIC_BLOCKER else Mode.LEGACY)
    c = PipelineConfig(strategy=strategy, mode=mode,
                       resolve=Stage[getattr(a, "resolve", "mem").upper()],
                       bb_forward=Stage[getattr(a, "bb_forward", "ex").upper()],
                       dual_port_bb=getattr(a, "dual_port_bb", False))
    if getattr(a, "no_cache", False):
        c = c.without_caches()
    c.validate()
    return c


def cmd_sim(a) -> int:
    img = asm.ProgramImage.load(a.img)
    c = _config(a)
    res = simulate(img, c, a.fuel, trace=False)
    out = {"config": c.name, **_status_dict(res.status), "stats": res.stats.to_dict()}
    _write_json(out, a.stats)
    return _exit_code(res.status) if a.stats else 0


def cmd_tsec(a) -> int:
    img = asm.ProgramImage.load(a.img)
    c = _config(a)
    _, verdict = tsec.run_and_check(img, c, a.fuel, strong=a.strong)
    _write_json(verdict.to_dict(), None)
    return 0 if verdict.secure else 1


def cmd_bench(a) -> int:
    if a.matrix != "default":
        raise SystemExit(f"unknown matrix {a.matrix!r}")
    m = harness.BenchMatrix()
    if a.config:
        text = Path(a.config).read_text()
        m.configs = {k: harness.apply_overrides(v, text) for k, v in m.configs.items()}
    results = harness.run_matrix(m, jobs=a.jobs)
    if a.out:
        harness.emit_report(results, a.out, "json")
    if a.csv:
        harness.emit_report(results, a.csv, "csv")
    if not (a.out or a.csv):
        sys.stdout.write(harness.render_report(results, "csv"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bbrv", description="bb-extended RV32IM toolchain and simulators")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("asm", help="assemble to a flat image plus JSON sidecar")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(fn=cmd_asm)

    s = sub.add_parser("dis", help="disassemble an image")
    s.add_argument("input")
    s.set_defaults(fn=cmd_dis)

    s = sub.add_parser("transform", help="insert bb instructions, reschedule, place hardware loops")
    s.add_argument("input")
    s.add_argument("-o", "--output")
    s.add_argument("--no-resched", action="store_true")
    s.add_argument("--hwloops", action="store_true")
    s.add_argument("--report")
    s.set_defaults(fn=cmd_transform)

    s = sub.add_parser("run", help="run on the functional reference model")
    s.add_argument("img")
    s.add_argument("--mode", choices=[m.value for m in Mode], default="bb")
    s.add_argument("--fuel", type=int, default=1_000_000)
    s.add_argument("--trace", choices=["fetch", "retire"])
    s.add_argument("--dump-range", metavar="ADDR:LEN")
    s.set_defaults(fn=cmd_run)

    def pipeline_args(s):
        s.add_argument("img")
        s.add_argument("--strategy", required=True, choices=sorted(_STRATEGIES))
        s.add_argument("--resolve", choices=["ex", "mem"], default="mem")
        s.add_argument("--bb-forward", choices=["ex", "id"], default="ex")
        s.add_argument("--dual-port-bb", action="store_true")
        s.add_argument("--no-cache", action="store_true")
        s.add_argument("--mode", choices=[m.value for m in Mode])
        s.add_argument("--fuel", type=int, default=1_000_000)

    s = sub.add_parser("sim", help="cycle-level pipeline simulation")
    pipeline_args(s)
    s.add_argument("--stats")
    s.set_defaults(fn=cmd_sim)

    s = sub.add_parser("tsec", help="check that every microarchitectural effect comes from a retired instruction")
    pipeline_args(s)
    s.add_argument("--strong", action="store_true")
    s.set_defaults(fn=cmd_tsec)

    s = sub.add_parser("bench", help="run the corpus benchmark matrix")
    s.add_argument("--matrix", default="default")
    s.add_argument("--out")
    s.add_argument("--csv")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--config", help="key=value overrides applied to every hardware preset")
    s.set_defaults(fn=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    a = build_parser().parse_args(argv)
    try:
        return a.fn(a)
    except (asm.AsmError, cfg.CfgError, ConfigError, OSError) as e:
        print(f"bbrv: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
