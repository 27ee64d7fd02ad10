"""Transient-execution security checks over pipeline traces.

A run is *t-secure* when every microarchitectural state change it records
was caused by an instruction that retired or raised an exception.  The
*strong* variant does not excuse exception-raising instructions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import asm
from .asm import ProgramImage
from .cfg import transform
from .pipeline import PipelineConfig, SimResult, Stage, Strategy, TraceEvent, TraceLog, simulate
from .refmodel import Mode, RetireLog


class MismatchedRun(ValueError):
    """The trace and the retire log come from different simulations."""


@dataclass
class TsecVerdict:
    violations: list = field(default_factory=list)
    excused: list = field(default_factory=list)
    strong_check: bool = False

    @property
    def secure(self) -> bool:
        return not self.violations

    @property
    def strong(self) -> bool:
        """True when the exception clause was never needed."""
        return not self.violations and not self.excused

    def by_resource(self) -> dict:
        out: dict = {}
        for ev in self.violations:
            out[ev.resource] = out.get(ev.resource, 0) + 1
        return out

    def to_dict(self) -> dict:
        return {
            "violations": [_event_dict(e) for e in self.violations],
            "excused": len(self.excused),
            "strong": self.strong,
            "strong_check": self.strong_check,
        }


def _event_dict(e: TraceEvent) -> dict:
    arg = e.arg
    if isinstance(arg, int) and e.resource in ("FetchBus", "ICacheLine", "DCacheLine"):
        arg = f"{arg:#010x}"
    return {"cycle": e.cycle, "resource": e.resource, "arg": arg, "cause": e.cause, "addr": f"{e.addr:#010x}"}


def check_tsec(trace: TraceLog, log: RetireLog, strong: bool = False) -> TsecVerdict:
    """Classify every event by whether its cause retired.

    With ``strong`` the effects of exception-raising instructions count as
    violations too.  Effects an excepting instruction caused before raising
    are treated as its own and therefore excused.
    """
    if log.run_id is not None and trace.run_id != log.run_id:
        raise MismatchedRun(f"trace {trace.run_id} vs retire log {log.run_id}")
    retired = set(log.fetch_seqs)
    raised = log.raised
    v = TsecVerdict(strong_check=strong)
    for ev in trace.events:
        if ev.cause in retired and ev.cause not in raised:
            continue
        if ev.cause in raised:
            (v.violations if strong else v.excused).append(ev)
        else:
            v.violations.append(ev)
    return v


def run_and_check(img: ProgramImage, cfg: PipelineConfig, fuel: int = 1_000_000,
                  strong: bool = False) -> tuple[SimResult, TsecVerdict]:
    res = simulate(img, cfg, fuel)
    return res, check_tsec(res.trace, res.log, strong)


# -- bounds-check bypass gadget ------------------------------------------------

SPECTRE_SOURCE = """\
# Bounds-check bypass: victim() reads array1[idx] and, only when idx is in
# bounds, touches probe[array1[idx] * 64].  Training calls use idx 1..4,
# the final call passes the offset of the secret byte.
    .text
# kept out of every fall-through path so only direction speculation reaches it
inb:
    lbu     t4, 0(t3)
    ret

_start:
    la      s0, array1
    la      s1, probe
    la      t0, array1_len
    lw      s3, 0(t0)
    li      s4, 0
    li      s5, 12
train:
    andi    a0, s4, 3
    addi    a0, a0, 1
    call    victim
    addi    s4, s4, 1
    blt     s4, s5, train
    la      t0, secret
    sub     a0, t0, s0
    call    victim
    li      a0, 0
halt:
    li      a7, 93
    ecall
    j       halt

victim:
    add     t0, s0, a0
    lbu     t1, 0(t0)
    slli    t2, t1, 6
    add     t3, s1, t2
    bltu    a0, s3, inb
    ret

    .data
    .org    0x80100800
array1:
    .byte   0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15
array1_len:
    .word   16
    .org    0x80100840
secret:
    .byte   11
    .org    0x80101000
probe:
    .space  1024
"""

SECRET = 11
PROBE_STRIDE = 64
PROBE_SLOTS = 16


@dataclass
class SpectreOutcome:
    strategy: Strategy
    leaked: bool
    hot_values: list
    verdict: TsecVerdict
    result: SimResult


@dataclass
class SpectreScenario:
    source: str
    legacy: ProgramImage
    blocked: ProgramImage
    probe: int
    secret: int = SECRET

    def image_for(self, strategy: Strategy) -> ProgramImage:
        return self.blocked if strategy is Strategy.BASIC_BLOCKER else self.legacy

    def probe_lines(self, res: SimResult) -> list[int]:
        """Probe slots whose cache line is resident after the run."""
        return [v for v in range(PROBE_SLOTS) if res.dcache.contains(self.probe + PROBE_STRIDE * v)]

    def run(self, strategy: Strategy, resolve: Stage = Stage.MEM) -> SpectreOutcome:
        mode = Mode.BB if strategy is Strategy.BASIC_BLOCKER else Mode.LEGACY
        cfg = PipelineConfig(strategy=strategy, resolve=resolve, mode=mode)
        res, verdict = run_and_check(self.image_for(strategy), cfg, fuel=10_000)
        hot = self.probe_lines(res)
        return SpectreOutcome(strategy, self.secret in hot, hot, verdict, res)


def spectre_v1_scenario() -> SpectreScenario:
    src = asm.parse(SPECTRE_SOURCE)
    legacy = asm.assemble(src)
    blocked_src, _ = transform(src, resched=True, hwloops=False)
    blocked = asm.assemble(blocked_src)
    return SpectreScenario(SPECTRE_SOURCE, legacy, blocked, legacy.symbols["probe"])
