"""Benchmark matrix over the bundled corpus, normalisation and reports."""
from __future__ import annotations

import csv
import enum
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import asm, cfg, refmodel
from .asm import ProgramImage
from .pipeline import STALL_CAUSES, PipelineConfig, RunStats, Stage, Strategy, hotspot_analysis, simulate
from .refmodel import Mode
from .uarch import ConfigError

CORPUS = ("matmul8", "crc32", "isort64", "dot256", "fsm")


def corpus_source(name: str) -> str:
    if name not in CORPUS:
        raise KeyError(f"unknown corpus program {name!r}")
    return resources.files("bbrv.corpus").joinpath(f"{name}.s").read_text()


class Version(enum.Enum):
    BASELINE = "Baseline"
    BB_INFO = "BBInfo"
    BB_RESCHED = "BBResched"
    BB_HWLOOPS = "BBResched+HWLoops"

    @property
    def uses_bb(self) -> bool:
        return self is not Version.BASELINE


@dataclass
class Build:
    img: ProgramImage
    mode: Mode
    report: cfg.SizeReport | None


def build(source: str, version: Version) -> Build:
    src = asm.parse(source)
    if version is Version.BASELINE:
        return Build(asm.assemble(src), Mode.LEGACY, None)
    out, rep = cfg.transform(src, resched=version is not Version.BB_INFO, hwloops=version is Version.BB_HWLOOPS)
    img = asm.assemble(out)
    return Build(img, Mode.BB, rep.attach_addresses(img))


def presets() -> dict[str, PipelineConfig]:
    """Hardware configurations: one per fetch strategy plus BasicBlocker variants."""
    bb = PipelineConfig(strategy=Strategy.BASIC_BLOCKER)
    return {
        "Simplest": PipelineConfig(strategy=Strategy.SIMPLEST),
        "Baseline": PipelineConfig(strategy=Strategy.BASELINE),
        "StaticBP": PipelineConfig(strategy=Strategy.STATIC_BP),
        "DynamicBP": PipelineConfig(strategy=Strategy.DYNAMIC_BP),
        "DynamicTargetBP": PipelineConfig(strategy=Strategy.DYNAMIC_TARGET_BP),
        "BasicBlocker": bb,
        "BasicBlocker-EarlyBranch": bb.with_(resolve=Stage.EX),
        "BasicBlocker-IdForward": bb.with_(bb_forward=Stage.ID),
        "BasicBlocker-DualPort": bb.with_(dual_port_bb=True),
    }


def apply_overrides(config: PipelineConfig, text: str) -> PipelineConfig:
    """Apply ``key=value`` lines (``#`` comments allowed) to a configuration.

    Keys: ``resolve``, ``bb_forward`` (ex|mem|id), ``dual_port_bb``,
    ``bht_entries``, ``btb_entries`` and ``icache.<field>`` / ``dcache.<field>``
    for ``enabled``, ``size``, ``line``, ``miss_penalty``.
    """
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (s.strip() for s in line.partition("="))
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value")
        if key in ("resolve", "bb_forward"):
            config = replace(config, **{key: Stage[val.upper()]})
        elif key == "dual_port_bb":
            config = replace(config, dual_port_bb=_bool(val, lineno))
        elif key in ("bht_entries", "btb_entries"):
            config = replace(config, **{key: int(val, 0)})
        elif key.partition(".")[0] in ("icache", "dcache") and "." in key:
            which, _, f = key.partition(".")
            cur = getattr(config, which)
            if f == "enabled":
                new = replace(cur, enabled=_bool(val, lineno))
            elif f in ("size", "line", "miss_penalty"):
                new = replace(cur, **{f: int(val, 0)})
            else:
                raise ConfigError(f"line {lineno}: unknown cache field {f!r}")
            config = replace(config, **{which: new})
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    config.validate()
    return config


def _bool(val: str, lineno: int) -> bool:
    v = val.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"line {lineno}: expected a boolean, got {val!r}")


def normalize(cycles: int, baseline_cycles: int) -> float:
    """``cycles / baseline_cycles`` computed exactly, rounded half-even to 4 places."""
    if baseline_cycles == 0:
        raise ZeroDivisionError("baseline cycle count is zero")
    return float(round(Fraction(cycles, baseline_cycles), 4))


@dataclass
class BenchMatrix:
    programs: tuple = CORPUS
    versions: tuple = tuple(Version)
    configs: dict = field(default_factory=presets)
    repetitions: int = 1  # the simulator is deterministic, so repeats would be identical
    fuel: int = 2_000_000
    baseline_config: str = "Baseline"

    def cells(self) -> list[tuple[str, Version, str]]:
        out = []
        for p in self.programs:
            for v in self.versions:
                for name, c in self.configs.items():
                    if compatible(v, c):
                        out.append((p, v, name))
        return out


def compatible(version: Version, config: PipelineConfig) -> bool:
    """bb-converted code needs bb-aware hardware; legacy code runs everywhere."""
    return not version.uses_bb or config.strategy is Strategy.BASIC_BLOCKER


class OracleMismatch(RuntimeError):
    def __init__(self, program: str, version: Version, config: str, what: str):
        self.cell = (program, version.value, config)
        super().__init__(f"{program}/{version.value}/{config}: {what}")


@dataclass
class CellResult:
    program: str
    version: Version
    config: str
    cycles: int
    retired: int
    stats: RunStats
    baseline_cycles: int = 0
    size: cfg.SizeReport | None = None
    mean_block: float | None = None
    median_block: float | None = None
    mean_resched: float | None = None

    @property
    def ratio(self) -> float:
        return normalize(self.cycles, self.baseline_cycles)

    @property
    def key(self) -> tuple:
        return self.program, list(Version).index(self.version), self.config


def run_cell(program: str, version: Version, config_name: str, config: PipelineConfig,
             fuel: int = 2_000_000, check: bool = True) -> CellResult:
    b = build(corpus_source(program), version)
    c = replace(config, mode=b.mode)
    res = simulate(b.img, c, fuel, trace=False)
    if check:
        ref = refmodel.run(b.img, b.mode, fuel)
        if res.log.addresses() != ref.log.addresses():
            raise OracleMismatch(program, version, config_name, "retire log differs")
        if res.status != ref.status or res.output != ref.output:
            raise OracleMismatch(program, version, config_name, "halt status or output differs")
        if res.state.mem.data != ref.state.mem.data or res.state.regs != ref.state.regs:
            raise OracleMismatch(program, version, config_name, "final state differs")
    cell = CellResult(program, version, config_name, res.stats.cycles, res.stats.retired, res.stats, size=b.report)
    if b.report is not None:
        sizes, resched = hotspot_analysis(res.stats, b.report)
        cell.mean_block, cell.median_block = sizes.mean, sizes.median
        cell.mean_resched = resched.mean
    return cell


def _run_cell_args(args):
    return run_cell(*args)


def run_matrix(m: BenchMatrix, jobs: int = 1) -> list[CellResult]:
    """Run every compatible cell, oracle-checked, sorted by (program, version, config)."""
    configs = dict(m.configs)
    if m.baseline_config not in configs:
        configs[m.baseline_config] = presets()[m.baseline_config]
    work = [(p, v, n, configs[n], m.fuel) for p, v, n in m.cells()]
    base_keys = {(p, Version.BASELINE, m.baseline_config) for p in m.programs}
    have = {(p, v, n) for p, v, n, _, _ in work}
    work += [(p, v, n, configs[n], m.fuel) for p, v, n in sorted(base_keys - have, key=str)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_cell_args, work))
    else:
        results = [_run_cell_args(w) for w in work]
    base = {r.program: r.cycles for r in results if r.version is Version.BASELINE and r.config == m.baseline_config}
    wanted = set(m.cells())
    out = []
    for r in results:
        if (r.program, r.version, r.config) in wanted:
            r.baseline_cycles = base[r.program]
            out.append(r)
    out.sort(key=lambda r: r.key)
    return out


# -- reports -----------------------------------------------------------------

COLUMNS = (
    ["program", "version", "config", "cycles", "baseline_cycles", "ratio", "retired"]
    + [f"stall_{c}" for c in STALL_CAUSES]
    + ["flushes", "mean_block_size", "median_block_size", "mean_resched", "code_size_overhead"]
)

_num = {"type": ["number", "null"]}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["columns", "rows"],
    "additionalProperties": False,
    "properties": {
        "columns": {"type": "array", "items": {"type": "string"}},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": COLUMNS,
                "additionalProperties": False,
                "properties": {
                    **{c: _num for c in COLUMNS},
                    "program": {"type": "string"},
                    "version": {"enum": [v.value for v in Version]},
                    "config": {"type": "string"},
                    "cycles": {"type": "integer", "minimum": 0},
                    "baseline_cycles": {"type": "integer", "minimum": 1},
                    "retired": {"type": "integer", "minimum": 0},
                    "flushes": {"type": "integer", "minimum": 0},
                    **{f"stall_{c}": {"type": "integer", "minimum": 0} for c in STALL_CAUSES},
                },
            },
        },
    },
}


def _round(x: float | None) -> float | None:
    return None if x is None else round(float(x), 4)


def report_rows(results: list[CellResult]) -> list[dict]:
    rows = []
    for r in results:
        row = {
            "program": r.program,
            "version": r.version.value,
            "config": r.config,
            "cycles": r.cycles,
            "baseline_cycles": r.baseline_cycles,
            "ratio": r.ratio,
            "retired": r.retired,
        }
        for c in STALL_CAUSES:
            row[f"stall_{c}"] = r.stats.stalls[c]
        row["flushes"] = r.stats.flushes
        row["mean_block_size"] = _round(r.mean_block)
        row["median_block_size"] = _round(r.median_block)
        row["mean_resched"] = _round(r.mean_resched)
        row["code_size_overhead"] = _round(r.size.overhead) if r.size is not None else None
        rows.append(row)
    return rows


def render_report(results: list[CellResult], fmt: str = "json") -> str:
    rows = report_rows(results)
    if fmt == "json":
        doc = {"columns": list(COLUMNS), "rows": rows}
        jsonschema.validate(doc, REPORT_SCHEMA)
        return json.dumps(doc, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: "" if v is None else v for k, v in row.items()})
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(results: list[CellResult], path: str | Path, fmt: str | None = None) -> Path:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".") or "json"
    text = render_report(results, fmt)
    path.write_text(text)
    return path


def load_report(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    jsonschema.validate(doc, REPORT_SCHEMA)
    return doc


# -- summaries ---------------------------------------------------------------

def ratio_table(results: list[CellResult]) -> dict:
    """``{(version, config): numpy array of ratios ordered by program}``."""
    table: dict = {}
    for r in results:
        table.setdefault((r.version, r.config), []).append(r.ratio)
    return {k: np.array(v) for k, v in table.items()}


def corpus_mean(results: list[CellResult], version: Version, config: str) -> float:
    vals = [r.ratio for r in results if r.version is version and r.config == config]
    if not vals:
        raise KeyError((version, config))
    return float(np.mean(vals))


@dataclass
class SizeSummary:
    program: str
    version: Version
    original_bytes: int
    bb: int
    lcnt: int
    removed: int
    byte_delta: int
    overhead: float


def code_size_table(programs=CORPUS, versions=(Version.BB_INFO, Version.BB_RESCHED, Version.BB_HWLOOPS)):
    """Measured byte growth of each transformed program next to the bb/lcnt count."""
    out = []
    for p in programs:
        src = corpus_source(p)
        legacy = asm.assemble(asm.parse(src))
        for v in versions:
            b = build(src, v)
            rep = b.report
            measured = len(b.img.code) - len(legacy.code)
            if measured != rep.byte_delta:
                raise AssertionError(f"{p}/{v.value}: code grew by {measured} bytes, "
                                     f"expected {rep.byte_delta}")
            out.append(SizeSummary(p, v, len(legacy.code), rep.blocks, rep.lcnt, rep.removed,
                                   measured, rep.overhead))
    return out
