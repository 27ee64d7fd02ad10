"""Cycle-level model of a single-issue, in-order IF/ID/EX/MEM/WB pipeline.

Architectural results come from the reference model, stepped in program
order as instructions are fetched on the correct path; the pipeline decides
*when* things happen and which wrong-path work touches shared resources.
Every state change of a modelled resource is recorded as a
:class:`TraceEvent` tagged with the fetch that caused it.

Fetch strategies:

``SIMPLEST``
    fetch the next instruction only once the current one is decoded, or
    resolved if it can redirect control flow.
``BASELINE``
    fetch ``pc+4`` every cycle, redirect at the resolve stage.
``STATIC_BP`` / ``DYNAMIC_BP``
    additionally redirect at decode using backward-taken or a BHT.
``DYNAMIC_TARGET_BP``
    BTB lookup at fetch, BHT for direction.
``BASIC_BLOCKER``
    fetch only what the ``bb`` announcements make certain; the next
    block's ``bb`` is fetched as soon as its address is known.
"""
from __future__ import annotations

import enum
import uuid
from dataclasses import dataclass, field, replace
from typing import NamedTuple

from . import isa
from .asm import ProgramImage
from .isa import Op
from .refmodel import (MASK, ArchException, ArchState, Excepted, LoopSet, Mode, RetireLog, execute_base,
                       initial_state, steps)
from .uarch import Bht, Btb, CacheConfig, ConfigError, DirectMappedCache

IF, ID, EX, MEM, WB = range(5)
STALL_CAUSES = ("waitDecode", "waitBranch", "waitBb", "icacheMiss", "dcacheMiss", "loadUse")
_SERIAL = (Op.ECALL, Op.EBREAK)


class SimulationError(RuntimeError):
    """Internal inconsistency between the timing model and the architecture."""


class Strategy(enum.Enum):
    SIMPLEST = "simplest"
    BASELINE = "baseline"
    STATIC_BP = "static"
    DYNAMIC_BP = "dynamic"
    DYNAMIC_TARGET_BP = "dynamic-target"
    BASIC_BLOCKER = "basicblocker"

    @property
    def speculative(self) -> bool:
        return self not in (Strategy.SIMPLEST, Strategy.BASIC_BLOCKER)


class Stage(enum.IntEnum):
    IF = IF
    ID = ID
    EX = EX
    MEM = MEM
    WB = WB


@dataclass(frozen=True)
class PipelineConfig:
    strategy: Strategy = Strategy.BASELINE
    resolve: Stage = Stage.MEM
    bb_forward: Stage = Stage.EX
    dual_port_bb: bool = False
    icache: CacheConfig = CacheConfig()
    dcache: CacheConfig = CacheConfig()
    bht_entries: int = 64
    btb_entries: int = 64
    mode: Mode = Mode.BB

    def validate(self) -> None:
        if self.resolve not in (Stage.EX, Stage.MEM):
            raise ConfigError("branches resolve in EX or MEM")
        if self.bb_forward not in (Stage.ID, Stage.EX):
            raise ConfigError("bb information is forwarded from ID or EX")
        if self.dual_port_bb and self.strategy is not Strategy.BASIC_BLOCKER:
            raise ConfigError("dual-port bb fetch needs the BasicBlocker fetch unit")
        if self.bb_forward is not Stage.EX and self.strategy is not Strategy.BASIC_BLOCKER:
            raise ConfigError("bb forwarding only applies to the BasicBlocker fetch unit")
        self.icache.validate()
        self.dcache.validate()
        Bht(self.bht_entries)
        Btb(self.btb_entries)

    def with_(self, **kw) -> "PipelineConfig":
        return replace(self, **kw)

    def without_caches(self) -> "PipelineConfig":
        return replace(self, icache=replace(self.icache, enabled=False),
                       dcache=replace(self.dcache, enabled=False))

    @property
    def name(self) -> str:
        parts = [self.strategy.value]
        if self.resolve is Stage.EX:
            parts.append("ex")
        if self.bb_forward is Stage.ID:
            parts.append("idfwd")
        if self.dual_port_bb:
            parts.append("dual")
        if not (self.icache.enabled or self.dcache.enabled):
            parts.append("nocache")
        return "-".join(parts)


@dataclass
class RunStats:
    cycles: int = 0
    retired: int = 0
    flushes: int = 0
    excepted: int = 0
    fetches: int = 0
    side_fetches: int = 0
    drain: int = 0
    stalls: dict = field(default_factory=lambda: dict.fromkeys(STALL_CAUSES, 0))
    predictions: int = 0
    mispredictions: int = 0
    block_counts: dict = field(default_factory=dict)
    block_size_hist: dict = field(default_factory=dict)
    resched_hist: dict = field(default_factory=dict)

    @property
    def ipc(self) -> float:
        return self.retired / self.cycles if self.cycles else 0.0

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("cycles", "retired", "flushes", "excepted", "fetches",
                                            "side_fetches", "drain", "predictions", "mispredictions")}
        d["stalls"] = dict(self.stalls)
        d["block_counts"] = {f"{a:#010x}": n for a, n in sorted(self.block_counts.items())}
        d["block_size_hist"] = {str(k): v for k, v in sorted(self.block_size_hist.items())}
        d["resched_hist"] = {str(k): v for k, v in sorted(self.resched_hist.items())}
        return d


class TraceEvent(NamedTuple):
    cycle: int
    resource: str
    arg: object
    cause: int
    addr: int


@dataclass
class TraceLog:
    run_id: str
    events: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)


@dataclass
class SimResult:
    stats: RunStats
    log: RetireLog
    trace: TraceLog
    state: ArchState
    output: bytes
    icache: DirectMappedCache | None = None
    dcache: DirectMappedCache | None = None

    @property
    def status(self):
        return self.log.status


# -- helpers -----------------------------------------------------------------

class _ArchStream:
    """Lazily stepped reference execution, indexed by dynamic instruction number."""

    def __init__(self, img: ProgramImage, mode: Mode, fuel: int, regs: dict | None):
        self.state = initial_state(img, mode, regs)
        self._gen = steps(self.state, fuel)
        self.recs: list = []
        self.status = None

    def get(self, i: int):
        recs = self.recs
        while len(recs) <= i and self.status is None:
            try:
                recs.append(next(self._gen))
            except StopIteration as stop:
                self.status = stop.value
        return recs[i] if i < len(recs) else None

    def peek_pc(self, i: int) -> int | None:
        """Address of instruction ``i`` without executing it (``i`` at most one past the end)."""
        if i < len(self.recs):
            return self.recs[i].entry.addr
        if self.status is not None:
            return self.pre_exception(i)
        if self.recs and self.recs[-1].halt is not None:
            return None
        return self.state.pc

    def pre_exception(self, i: int) -> int | None:
        st = self.status
        if i == len(self.recs) and isinstance(st, Excepted) and st.kind != "bb-semantics":
            return st.addr
        return None

    def ended_at(self, i: int) -> bool:
        """True when no instruction ``i`` will ever retire or raise."""
        self.get(i)
        return i >= len(self.recs) and self.pre_exception(i) is None


class _OverlayMem:
    """Copy-on-write view of memory for wrong-path execution."""

    def __init__(self, base):
        self.base = base
        self.over: dict = {}

    def load(self, addr: int, width: int, pc: int = 0) -> int:
        self.base.offset(addr, width, pc)
        v = 0
        for k in range(width):
            b = self.over.get(addr + k)
            if b is None:
                b = self.base.data[addr + k - self.base.base]
            v |= b << (8 * k)
        return v

    def store(self, addr: int, width: int, value: int, pc: int = 0) -> None:
        self.base.offset(addr, width, pc)
        for k in range(width):
            self.over[addr + k] = (value >> (8 * k)) & 0xFF


class _Fork:
    def __init__(self, s: ArchState):
        self.regs = list(s.regs)
        self.mem = _OverlayMem(s.mem)
        self.loops = [LoopSet(ls.count, ls.start, ls.active) for ls in s.loops]
        self.output = bytearray()


class _Slot:
    __slots__ = ("seq", "pc", "instr", "idx", "rec", "wrong", "exc", "fetch_left", "ex_left", "ex_started",
                 "id_done", "resolved", "mem_addr", "is_store", "side", "btb_hit", "blk", "ready")

    def __init__(self, seq: int, pc: int):
        self.seq = seq
        self.pc = pc
        self.instr = None
        self.idx = None
        self.rec = None
        self.wrong = False
        self.exc = False
        self.fetch_left = 0
        self.ex_left = 0
        self.ex_started = False
        self.id_done = False
        self.resolved = False
        self.mem_addr = None
        self.is_store = False
        self.side = False
        self.btb_hit = False
        self.blk = None
        self.ready = 0


class _Block:
    """Fetch-unit view of one bb-announced block."""

    __slots__ = ("bb_idx", "pc", "instr", "known", "fetched", "decided", "next_pc", "cf_next",
                 "next_state", "next_block", "flags_applied")

    def __init__(self, bb_idx: int, pc: int, instr):
        self.bb_idx = bb_idx
        self.pc = pc
        self.instr = instr
        self.known = False
        self.fetched = 0
        self.decided = False
        self.next_pc = None
        self.cf_next = None
        self.next_state = None
        self.next_block = None
        self.flags_applied = False

    @property
    def n(self) -> int:
        return self.instr.n


# -- simulator ---------------------------------------------------------------

class _Sim:
    def __init__(self, img: ProgramImage, cfg: PipelineConfig, fuel: int, regs: dict | None, trace: bool):
        cfg.validate()
        self.img = img
        self.cfg = cfg
        self.strat = cfg.strategy
        self.arch = _ArchStream(img, cfg.mode, fuel, regs)
        self.mem = self.arch.state.mem
        self.icache = DirectMappedCache(cfg.icache)
        self.dcache = DirectMappedCache(cfg.dcache)
        self.bht = Bht(cfg.bht_entries)
        self.btb = Btb(cfg.btb_entries)
        self.R = int(cfg.resolve)
        self.F = int(cfg.bb_forward)
        self.lat: list = [None] * 5
        self.cycle = 0
        self.seq = 0
        self.run_id = uuid.uuid4().hex
        self.events: list | None = [] if trace else None
        self.stats = RunStats()
        self.log = RetireLog(run_id=self.run_id)
        self.done = False
        self.stop = False
        self.hold_cause = "dcacheMiss"
        self.flush_seq: int | None = None
        self.redirect: int | None = None
        self.redirect_idx: int | None = None
        self.last_retire_cycle = 0
        self.max_cycles = 200 * fuel + 10_000
        # speculative fetch
        self.fetch_pc = img.entry
        self.next_idx = 0
        self.wrong = False
        self.fork: _Fork | None = None
        # in-order fetch units
        self.last: _Slot | None = None
        # basic-block fetch unit
        self.cur: _Block | None = None
        self.need: tuple | None = (img.entry, 0)
        self.outside: _Slot | None = None
        self.serial: set = set()
        self.waits: dict = {}
        self.mloops = [[0, 0, False] for _ in range(isa.NUM_LOOP_SETS)]
        self.side_pending: list = []
        self.rob: dict = {}
        self.retire_next = 0
        self.code_lo = img.base
        self.code_hi = img.code_end

    # -- events ----------------------------------------------------------

    def _ev(self, resource: str, arg, slot: _Slot) -> None:
        if self.events is not None:
            self.events.append(TraceEvent(self.cycle, resource, arg, slot.seq, slot.pc))

    def _stall(self, cause: str) -> None:
        self.stats.stalls[cause] += 1

    def _wait_on(self, seq: int) -> None:
        """Fetch waits for instruction ``seq`` to resolve.

        Counted as waitBranch, or as drain once that instruction turns out to
        end the program.
        """
        self.waits[seq] = self.waits.get(seq, 0) + 1

    def _settle_wait(self, seq: int, terminal: bool) -> None:
        n = self.waits.pop(seq, 0)
        if terminal:
            self.stats.drain += n
        else:
            self.stats.stalls["waitBranch"] += n

    # -- fetch -----------------------------------------------------------

    def _new_slot(self, pc: int, idx: int | None, side: bool = False) -> _Slot:
        s = _Slot(self.seq, pc)
        self.seq += 1
        s.side = side
        if side:
            self.stats.side_fetches += 1
        else:
            self.stats.fetches += 1
        if idx is not None:
            rec = self.arch.get(idx)
            if rec is not None:
                if rec.entry.addr != pc:
                    raise SimulationError(f"fetched {pc:#x} but instruction {idx} is at {rec.entry.addr:#x}")
                s.idx, s.rec, s.instr = idx, rec, rec.entry.instr
            elif self.arch.pre_exception(idx) == pc:
                s.idx, s.exc = idx, True
            elif self.strat.speculative:
                idx = None
            else:
                raise SimulationError(f"non-speculative fetch of {pc:#x} past the end of execution")
        in_mem = pc % 4 == 0 and self.mem.base <= pc <= self.mem.base + self.mem.size - 4
        if s.instr is None and in_mem:
            try:
                s.instr = isa.decode(self.mem.load(pc, 4))
            except isa.IllegalInstruction:
                s.instr = None
        if idx is None:
            s.wrong = True
            self._wrong_exec(s)
        if in_mem:
            self._ev("FetchBus", pc, s)
            if not self.icache.access(pc):
                self._ev("ICacheLine", self.icache.line_addr(pc), s)
                s.fetch_left = self.cfg.icache.miss_penalty
        return s

    def _wrong_exec(self, s: _Slot) -> None:
        if self.fork is None:
            self.fork = _Fork(self.arch.state)
        i = s.instr
        if i is None or i.op in (Op.BB, Op.ECALL, Op.EBREAK, Op.FENCE):
            return
        f = self.fork
        if i.op in isa.LOADS or i.op in isa.STORES:
            addr = (f.regs[i.rs1] + i.imm) & MASK
            try:
                f.mem.base.offset(addr, isa.MEM_WIDTH[i.op], s.pc)
            except ArchException:
                return
            s.mem_addr, s.is_store = addr, i.op in isa.STORES
        try:
            execute_base(f, i, s.pc, _Scratch(), (s.pc + 4) & MASK)
        except ArchException:
            s.mem_addr = None

    def _successor_pc(self, slot: _Slot) -> int:
        best = None
        for t in self.lat:
            if t is not None and t.seq > slot.seq and (best is None or t.seq < best.seq):
                best = t
        return best.pc if best is not None else self.fetch_pc

    def _fetch(self) -> None:
        st = self.strat
        if st is Strategy.BASIC_BLOCKER:
            self._fetch_bb()
        elif st is Strategy.SIMPLEST:
            self._fetch_simplest()
        else:
            self._fetch_spec()

    def _fetch_spec(self) -> None:
        if self.stop:
            self.stats.drain += 1
            return
        pc = self.fetch_pc
        idx = None
        if not self.wrong:
            if self.arch.peek_pc(self.next_idx) == pc:
                idx = self.next_idx
            else:
                self.wrong = True
        s = self._new_slot(pc, idx)
        if s.wrong:
            self.wrong = True
        else:
            self.next_idx += 1
        nxt = (pc + 4) & MASK
        if self.strat is Strategy.DYNAMIC_TARGET_BP:
            e = self.btb.lookup(pc)
            if e is not None and (e[2] or self.bht.predict(pc)):
                nxt = e[1]
                s.btb_hit = True
        self.fetch_pc = nxt
        self.lat[IF] = s

    def _needs_resolve(self, s: _Slot) -> bool:
        if s.exc or s.instr is None:
            return True
        op = s.instr.op
        return op in isa.CONTROL_FLOW or op in _SERIAL or (s.rec is not None and s.rec.block_end)

    def _fetch_simplest(self) -> None:
        last = self.last
        if self.stop:
            self.stats.drain += 1
            return
        if last is None:
            pc, idx = self.img.entry, 0
        else:
            if not last.id_done:
                self._stall("waitDecode")
                return
            if self._needs_resolve(last) and not last.resolved:
                self._wait_on(last.seq)
                return
            pc, idx = last.rec.next_pc, last.idx + 1
        if self.arch.ended_at(idx):
            self.stop = True
            self.stats.drain += 1
            return
        self.last = self.lat[IF] = self._new_slot(pc, idx)

    # -- BasicBlocker fetch unit -----------------------------------------

    def _older_pending(self, idx: int) -> bool:
        for t in self.lat:
            if t is None or t.idx is None or t.idx >= idx:
                continue
            if not t.id_done:
                return True
            if t.instr is not None and t.instr.op is Op.LCNT and t.rec is not None and not t.ex_started:
                return True
            if t.instr is not None and t.instr.op is Op.LCNT and t.ex_left > 0:
                return True
        return False

    def _decide(self, blk: _Block) -> None:
        if blk.decided or not blk.known or self.serial:
            return
        i = blk.instr
        seq_eff = i.seq
        nxt = None
        if i.sflags or i.eflags:
            if self._older_pending(blk.bb_idx):
                return
            ml = self.mloops
            for k in range(isa.NUM_LOOP_SETS):
                if i.sflags >> k & 1 and ml[k][2]:
                    ml[k][1] = blk.pc
                    if ml[k][0] > 0:
                        ml[k][0] -= 1
            for k in range(isa.NUM_LOOP_SETS):
                if i.eflags >> k & 1 and ml[k][2]:
                    if ml[k][0] > 0:
                        if nxt is None:
                            nxt = ml[k][1]
                    else:
                        ml[k][2] = False
                        seq_eff = True
        if nxt is None:
            if seq_eff:
                nxt = (blk.pc + 4 * (blk.n + 1)) & MASK
            elif blk.cf_next is not None:
                nxt = blk.cf_next
            else:
                return
        last = self.arch.get(blk.bb_idx + blk.n)
        if last is not None and last.next_pc != nxt:
            raise SimulationError(f"fetch unit chose {nxt:#x} after block {blk.pc:#x}, "
                                  f"architecture continues at {last.next_pc:#x}")
        blk.decided, blk.next_pc = True, nxt

    def _prefetch_target_ok(self, pc: int) -> bool:
        if pc % 4 or not self.code_lo <= pc < self.code_hi:
            return False
        try:
            return isa.decode(self.mem.load(pc, 4)).op is Op.BB
        except isa.IllegalInstruction:
            return False

    def _start_block(self, slot: _Slot) -> _Block:
        blk = _Block(slot.idx, slot.pc, slot.instr)
        slot.blk = blk
        return blk

    def _fetch_bb(self) -> None:
        main_free = self.lat[IF] is None
        if self.side_pending:
            for s in [s for s in self.side_pending if s.ready <= self.cycle]:
                self.side_pending.remove(s)
                self._forward(s)
                self.rob[s.idx] = s
        if self.stop:
            if main_free:
                self.stats.drain += 1
            return
        if not main_free:
            # only the side port can act while the main port is busy
            blk = self.cur
            if blk is not None and self.cfg.dual_port_bb:
                self._decide(blk)
                self._issue_next_bb(blk, main=False)
            return
        self._fetch_bb_main()

    def _issue_next_bb(self, blk: _Block, main: bool) -> bool:
        """Fetch the successor block's bb if it is known; True when the main port was used."""
        if not blk.decided or blk.next_state is not None:
            return False
        if not self._prefetch_target_ok(blk.next_pc):
            blk.next_state = "skipped"
            return False
        idx = blk.bb_idx + blk.n + 1
        if self.arch.ended_at(idx):
            blk.next_state = "skipped"
            return False
        if self.cfg.dual_port_bb:
            s = self._new_slot(blk.next_pc, idx, side=True)
            s.ready = self.cycle + 1 + s.fetch_left
            s.fetch_left = 0
            blk.next_block = self._start_block(s)
            blk.next_state = "fetched"
            self.side_pending.append(s)
            return False
        if not main:
            return False
        s = self._new_slot(blk.next_pc, idx)
        blk.next_block = self._start_block(s)
        blk.next_state = "fetched"
        self.lat[IF] = s
        return True

    def _fetch_bb_main(self) -> None:
        for _ in range(3):
            blk = self.cur
            if blk is None:
                self._fetch_outside()
                return
            self._decide(blk)
            if self._issue_next_bb(blk, main=True):
                return
            limit = blk.n if blk.known else 1
            if blk.fetched < limit:
                if self.serial:
                    self._wait_on(min(self.serial))
                    return
                idx = blk.bb_idx + 1 + blk.fetched
                if self.arch.ended_at(idx):
                    self.stats.drain += 1
                    return
                s = self._new_slot((blk.pc + 4 * (1 + blk.fetched)) & MASK, idx)
                s.blk = blk
                blk.fetched += 1
                if s.instr is not None and s.instr.op in _SERIAL or s.exc:
                    self.serial.add(s.seq)
                self.lat[IF] = s
                return
            if not blk.known:
                self._stall("waitBb")
                return
            if blk.next_state == "fetched":
                self.cur = blk.next_block
                continue
            if blk.next_state == "skipped":
                self.cur = None
                self.need = (blk.next_pc, blk.bb_idx + blk.n + 1)
                continue
            if self.serial:
                self._wait_on(min(self.serial))
            elif not blk.instr.seq and blk.cf_next is None and not blk.instr.eflags:
                self._stall("waitBranch")
            else:
                self._stall("waitBb")
            return
        raise SimulationError("fetch unit failed to settle")  # pragma: no cover

    def _fetch_outside(self) -> None:
        """Fetch outside any announced block (legacy code or a block start of unknown kind)."""
        o = self.outside
        if o is not None:
            if not o.id_done:
                self._stall("waitDecode")
                return
            if o.instr is not None and o.instr.op is Op.BB and not o.exc:
                self.outside = None
                self.cur = o.blk
                self._fetch_bb_main()
                return
            if self._needs_resolve(o) and not o.resolved:
                self._wait_on(o.seq)
                return
            self.outside = None
            self.need = (o.rec.next_pc, o.idx + 1)
        if self.need is None:
            self.stats.drain += 1
            return
        pc, idx = self.need
        if self.arch.ended_at(idx):
            self.stop = True
            self.stats.drain += 1
            return
        self.need = None
        s = self._new_slot(pc, idx)
        self.lat[IF] = s
        if s.exc:
            self.serial.add(s.seq)
            self.outside = s
            return
        if s.instr.op is Op.BB:
            blk = self._start_block(s)
            if self.cfg.mode is Mode.BB:
                self.cur = blk
                return
        elif s.instr.op in _SERIAL:
            self.serial.add(s.seq)
        self.outside = s

    def _forward(self, s: _Slot) -> None:
        """bb information reaches the fetch unit."""
        if s.blk is not None and not s.blk.known:
            s.blk.known = True
            self._ev("BbState", "P", s)

    # -- stages ----------------------------------------------------------

    def _decode(self, s: _Slot) -> None:
        s.id_done = True
        st = self.strat
        if st is Strategy.BASIC_BLOCKER:
            if self.F == ID and s.instr is not None and s.instr.op is Op.BB:
                self._forward(s)
            return
        if st in (Strategy.SIMPLEST, Strategy.BASELINE) or s.instr is None or s.exc:
            return
        if self.flush_seq is not None and s.seq > self.flush_seq:
            return
        i = s.instr
        if i.op is not Op.JAL and i.op not in isa.BRANCHES:
            return
        if s.rec is not None and s.rec.in_block and not s.rec.block_end:
            return
        if s.btb_hit:
            return
        if i.op is Op.JAL:
            taken = True
        elif st is Strategy.STATIC_BP:
            taken = i.imm < 0
        else:
            taken = self.bht.predict(s.pc)
        target = ((s.pc + i.imm) if taken else (s.pc + 4)) & MASK
        if self._successor_pc(s) != target:
            self._request_flush(s, target)

    def _request_flush(self, s: _Slot, target: int) -> None:
        if self.flush_seq is None or s.seq < self.flush_seq:
            self.flush_seq = s.seq
            self.redirect = target
            self.redirect_idx = None if s.wrong else s.idx + 1

    def _execute(self, s: _Slot) -> None:
        s.ex_started = True
        addr = s.mem_addr if s.wrong else (s.rec.mem_addr if s.rec is not None else None)
        if addr is not None:
            if not self.dcache.access(addr):
                self._ev("DCacheLine", self.dcache.line_addr(addr), s)
                s.ex_left = self.cfg.dcache.miss_penalty

    def _ex_complete(self, s: _Slot) -> None:
        if self.strat is Strategy.BASIC_BLOCKER and s.instr is not None:
            op = s.instr.op
            if op is Op.BB and self.F == EX:
                self._forward(s)
            elif op is Op.LCNT and s.rec is not None:
                self.mloops[s.instr.rd] = [s.rec.lcnt_count, self.mloops[s.instr.rd][1], True]

    def _terminal(self, s: _Slot) -> bool:
        if s.exc:
            return True
        rec = s.rec
        if rec.halt is not None:
            return True
        n = len(self.arch.recs)
        return self.arch.status is not None and s.idx == n - 1 and self.arch.pre_exception(n) is None

    def _resolve(self, s: _Slot) -> None:
        if s.wrong:
            raise SimulationError(f"wrong-path instruction at {s.pc:#x} reached the resolve stage")
        if self.flush_seq is not None and s.seq > self.flush_seq:
            return
        s.resolved = True
        self.serial.discard(s.seq)
        st = self.strat
        terminal = self._terminal(s)
        self._settle_wait(s.seq, terminal)
        if terminal:
            self.stop = True
            if st.speculative:
                self._request_flush(s, s.pc)
            return
        rec = s.rec
        i = rec.entry.instr
        if st is Strategy.BASIC_BLOCKER:
            if i.op in isa.CONTROL_FLOW and s.blk is not None and s.blk.cf_next is None:
                s.blk.cf_next = rec.redirect
            return
        if st is Strategy.SIMPLEST:
            return
        actual = rec.next_pc
        is_cf = i.op in isa.CONTROL_FLOW
        transfer = (is_cf and not rec.in_block) or rec.block_end
        if transfer:
            self.stats.predictions += 1
            taken = actual != ((s.pc + 4) & MASK)
            if st in (Strategy.DYNAMIC_BP, Strategy.DYNAMIC_TARGET_BP) and \
                    (rec.block_end or (i.op in isa.BRANCHES and not rec.in_block)):
                k = self.bht.update(s.pc, taken)
                if k is not None:
                    self._ev("BhtEntry", k, s)
            if st is Strategy.DYNAMIC_TARGET_BP and taken:
                uncond = i.op in (Op.JAL, Op.JALR) and not rec.in_block
                k = self.btb.update(s.pc, actual, uncond)
                if k is not None:
                    self._ev("BtbEntry", k, s)
        if self._successor_pc(s) != actual:
            if transfer:
                self.stats.mispredictions += 1
            self._request_flush(s, actual)

    def _writeback(self, s: _Slot) -> None:
        if s.wrong:
            raise SimulationError(f"wrong-path instruction at {s.pc:#x} reached write-back")
        if self.strat is Strategy.BASIC_BLOCKER:
            self.rob[s.idx] = s
        else:
            if s.idx != self.retire_next:
                raise SimulationError("out-of-order retirement")
            self.rob[s.idx] = s

    def _drain_rob(self) -> None:
        rob = self.rob
        while self.retire_next in rob:
            s = rob.pop(self.retire_next)
            self.retire_next += 1
            self.last_retire_cycle = self.cycle
            if s.exc:
                self.log.raised.add(s.seq)
                self.stats.excepted += 1
                self.done = True
                return
            rec = s.rec
            self._ev("PcWrite", None, s)
            if rec.rd:
                self._ev("RegFile", rec.rd, s)
            for f in rec.changed_bb:
                self._ev("BbState", f, s)
            for k in rec.changed_loops:
                self._ev("LoopSet", k, s)
            self.log.entries.append(rec.entry)
            self.log.fetch_seqs.append(s.seq)
            self.stats.retired += 1
            if rec.halt is not None or (self.arch.status is not None and self.retire_next == len(self.arch.recs)
                                        and self.arch.pre_exception(self.retire_next) is None):
                if self.arch.status is not None and rec is self.arch.recs[-1] and \
                        isinstance(self.arch.status, Excepted):
                    self.log.raised.add(s.seq)
                self.done = True
                return

    # -- cycle -----------------------------------------------------------

    def _load_use(self, ex: _Slot, nxt: _Slot) -> bool:
        i = ex.instr
        if i is None or i.op not in isa.LOADS or i.rd == 0 or nxt.instr is None:
            return False
        return i.rd in isa.reads(nxt.instr)

    def _apply_flush(self) -> None:
        thr = self.flush_seq
        lat = self.lat
        for k in range(5):
            s = lat[k]
            if s is not None and s.seq > thr:
                lat[k] = None
                self.stats.flushes += 1
                self.serial.discard(s.seq)
                self._settle_wait(s.seq, False)
        if self.strat.speculative and not self.stop:
            self.fetch_pc = self.redirect
            if self.redirect_idx is not None:
                self.next_idx = self.redirect_idx
                self.wrong = False
                self.fork = None
        self.flush_seq = self.redirect = self.redirect_idx = None

    def step(self) -> None:
        self.cycle += 1
        lat = self.lat
        ifs = lat[IF]
        if ifs is None:
            self._fetch()
        else:
            if ifs.fetch_left > 0:
                ifs.fetch_left -= 1
                self._stall("icacheMiss")
            else:
                self._stall(self.hold_cause)
            if self.strat is Strategy.BASIC_BLOCKER:
                self._fetch_bb()

        wb = lat[WB]
        if wb is not None:
            self._writeback(wb)
        self._drain_rob()
        mem = lat[MEM]
        if mem is not None and self.R == MEM:
            self._resolve(mem)
        ex = lat[EX]
        ex_done = True
        if ex is not None:
            if not ex.ex_started:
                self._execute(ex)
            elif ex.ex_left > 0:
                ex.ex_left -= 1
            ex_done = ex.ex_left == 0
            if ex_done:
                if self.R == EX:
                    self._resolve(ex)
                self._ex_complete(ex)
        idn = lat[ID]
        if idn is not None and not idn.id_done:
            self._decode(idn)

        # advance
        lat[WB] = lat[MEM]
        if ex_done:
            lat[MEM], lat[EX] = ex, None
        else:
            lat[MEM] = None
        if idn is not None:
            if lat[EX] is None and not (ex is not None and ex_done and self._load_use(ex, idn)):
                lat[EX], lat[ID] = idn, None
            else:
                self.hold_cause = "dcacheMiss" if lat[EX] is not None else "loadUse"
        ifs = lat[IF]
        if ifs is not None and ifs.fetch_left == 0 and lat[ID] is None:
            lat[ID], lat[IF] = ifs, None
        if self.flush_seq is not None:
            self._apply_flush()

    def run(self) -> SimResult:
        while not self.done:
            self.step()
            if self.cycle - self.last_retire_cycle > 5_000 or self.cycle > self.max_cycles:
                raise SimulationError(f"no progress at cycle {self.cycle} ({self.strat.value})")
        leftover = sum(1 for s in self.lat if s is not None) + len(self.side_pending)
        leftover += sum(1 for k in self.rob if k >= self.retire_next)
        self.stats.flushes += leftover
        for seq in list(self.waits):
            self._settle_wait(seq, True)
        self.stats.cycles = self.cycle
        self.arch.get(len(self.arch.recs))
        self.log.status = self.arch.status
        self.stats.block_counts = block_counts(self.log)
        st = self.arch.state
        return SimResult(self.stats, self.log, TraceLog(self.run_id, self.events or []), st, bytes(st.output),
                         self.icache, self.dcache)


class _Scratch:
    """Throw-away step record for wrong-path execution."""

    __slots__ = ("mem_addr", "is_store", "rd", "halt", "changed_loops", "lcnt_count")

    def __init__(self):
        self.mem_addr = None
        self.is_store = False
        self.rd = 0
        self.halt = None
        self.changed_loops = ()
        self.lcnt_count = 0


def block_counts(log: RetireLog) -> dict:
    """Dynamic execution count per block start address."""
    counts: dict = {}
    prev = None
    for e in log.entries:
        op = e.instr.op
        start = op is Op.BB or (prev is None or (prev.instr.op is not Op.BB and (
            prev.instr.op in isa.CONTROL_FLOW or e.addr != prev.addr + 4)))
        if start:
            counts[e.addr] = counts.get(e.addr, 0) + 1
        prev = e
    return counts


def simulate(img: ProgramImage, cfg: PipelineConfig | None = None, fuel: int = 1_000_000,
             regs: dict | None = None, trace: bool = True) -> SimResult:
    """Run ``img`` on the pipeline; architectural results equal :func:`refmodel.run`."""
    return _Sim(img, cfg or PipelineConfig(), fuel, regs, trace).run()


# -- hotspot analysis --------------------------------------------------------

@dataclass
class Distribution:
    hist: dict
    mean: float
    median: float

    def to_dict(self) -> dict:
        return {"hist": {str(k): v for k, v in sorted(self.hist.items())}, "mean": self.mean, "median": self.median}


def weighted_distribution(pairs) -> Distribution:
    """``pairs`` of (value, weight) to a histogram with weighted mean and median."""
    hist: dict = {}
    for v, w in pairs:
        if w:
            hist[v] = hist.get(v, 0) + w
    total = sum(hist.values())
    if not total:
        return Distribution({}, 0.0, 0.0)
    mean = sum(v * w for v, w in hist.items()) / total
    acc, median = 0, 0.0
    for v in sorted(hist):
        acc += hist[v]
        if 2 * acc >= total:
            median = float(v)
            break
    return Distribution(hist, mean, median)


def hotspot_analysis(stats: RunStats, report) -> tuple[Distribution, Distribution]:
    """Block-size and rescheduling-parameter distributions weighted by execution count.

    ``report`` is a :class:`cfg.SizeReport` whose blocks carry addresses.
    """
    sizes, resched = [], []
    for b in report.per_block:
        addr = getattr(b, "addr", None)
        w = stats.block_counts.get(addr, 0) if addr is not None else 0
        sizes.append((b.size, w))
        if b.resched is not None:
            resched.append((b.resched, w))
    ds, dr = weighted_distribution(sizes), weighted_distribution(resched)
    stats.block_size_hist, stats.resched_hist = dict(ds.hist), dict(dr.hist)
    return ds, dr
