"""Control-flow graphs over assembly source and the bb-insertion passes.

Every pass takes a :class:`ControlFlowGraph` and returns a new one; inputs are
never mutated.  Typical use::

    g = build_cfg(parse(text))
    g = reschedule_terminators(insert_bb(split_at_calls(g)))
    out = to_source(g)
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

from . import isa
from .asm import AsmError, AsmInstr, Directive, Expr, Label, SourceUnit
from .isa import Op

COMPUTED = "<computed>"


class CfgError(Exception):
    pass


class TargetIntoMiddleOfInstruction(CfgError):
    pass


class NoFreeLoopSet(CfgError):
    pass


def _is_cf(ins: AsmInstr) -> bool:
    return ins.op in isa.CONTROL_FLOW


def _is_call(ins: AsmInstr) -> bool:
    return ins.op in (Op.JAL, Op.JALR) and ins.rd != 0


@dataclass
class BasicBlock:
    label: str
    instrs: list
    aliases: list = field(default_factory=list)
    succs: list = field(default_factory=list)
    resched: int | None = None

    @property
    def has_bb(self) -> bool:
        return bool(self.instrs) and self.instrs[0].op is Op.BB

    @property
    def body(self) -> list:
        return self.instrs[1:] if self.has_bb else self.instrs

    @property
    def terminator_index(self) -> int | None:
        """Index into ``instrs`` of the control-flow instruction, if any."""
        for k, ins in enumerate(self.instrs):
            if _is_cf(ins):
                return k
        return None

    @property
    def terminator(self) -> AsmInstr | None:
        k = self.terminator_index
        return None if k is None else self.instrs[k]

    @property
    def seq(self) -> bool:
        return self.terminator_index is None

    @property
    def size(self) -> int:
        return len(self.body)

    @property
    def names(self) -> list[str]:
        return [self.label] + self.aliases


@dataclass
class ControlFlowGraph:
    blocks: list
    entry: str
    preamble: list = field(default_factory=list)
    data: list = field(default_factory=list)
    trailing: list = field(default_factory=list)

    def block(self, label: str) -> BasicBlock:
        for b in self.blocks:
            if label in b.names:
                return b
        raise KeyError(label)

    def edges(self) -> set[tuple[str, str]]:
        return {(b.label, s) for b in self.blocks for s in b.succs}

    def instruction_count(self) -> int:
        return sum(len(b.instrs) for b in self.blocks)

    def copy(self) -> "ControlFlowGraph":
        return copy.deepcopy(self)


def _fresh(prefix: str, taken: set) -> str:
    k = 0
    while f"{prefix}{k}" in taken:
        k += 1
    name = f"{prefix}{k}"
    taken.add(name)
    return name


def _all_names(g: ControlFlowGraph) -> set:
    names = set(g.trailing)
    for b in g.blocks:
        names.update(b.names)
    return names


def _link(g: ControlFlowGraph) -> ControlFlowGraph:
    """Recompute successor lists from terminators and memory order."""
    canon = {n: b.label for b in g.blocks for n in b.names}
    for k, b in enumerate(g.blocks):
        nxt = g.blocks[k + 1].label if k + 1 < len(g.blocks) else None
        t = b.terminator
        succs = []
        if t is None:
            if nxt:
                succs.append(nxt)
        elif t.op is Op.JALR:
            succs.append(COMPUTED)
            if t.rd and nxt:
                succs.append(nxt)
        else:
            tgt = t.target
            succs.append(canon.get(tgt, tgt))
            if (t.op in isa.BRANCHES or t.rd) and nxt and nxt not in succs:
                succs.append(nxt)
        b.succs = succs
    return g


def build_cfg(src: SourceUnit) -> ControlFlowGraph:
    """Split the text section into basic blocks.

    Leaders are the first instruction, every labelled instruction and every
    instruction following a control-flow instruction.  Branches written with
    numeric offsets get a synthetic label at their target.
    """
    text: list = []       # labels and instructions of the text section
    data: list = []
    preamble: list = []
    sec = ".text"
    for it in src.items:
        if isinstance(it, Directive) and it.name in (".text", ".data"):
            sec = it.name
            continue
        if isinstance(it, Directive) and it.name in (".globl", ".global", ".equ", ".set"):
            preamble.append(it)
            continue
        if sec == ".data":
            data.append(it)
        elif isinstance(it, Directive):
            raise CfgError(f"directive {it.name} not supported inside code (line {it.line})")
        else:
            text.append(it)

    instrs: list = []
    labels_at: dict[int, list] = {}
    for it in text:
        if isinstance(it, Label):
            labels_at.setdefault(len(instrs), []).append(it.name)
        else:
            instrs.append(it)
    names = {n for ls in labels_at.values() for n in ls}
    pos_of = {n: k for k, ls in labels_at.items() for n in ls}

    # numeric branch offsets become labels so later passes can move code
    for k, ins in enumerate(instrs):
        if (ins.op in isa.BRANCHES or ins.op is Op.JAL) and ins.imm.is_const:
            off = ins.imm.eval({})
            if off % 4:
                raise TargetIntoMiddleOfInstruction(f"offset {off} at line {ins.line}")
            tk = k + off // 4
            if not 0 <= tk <= len(instrs):
                raise TargetIntoMiddleOfInstruction(f"offset {off} at line {ins.line} leaves the code")
            if tk in labels_at:
                name = labels_at[tk][0]
            else:
                name = _fresh(".Lt", names)
                labels_at[tk] = [name]
                pos_of[name] = tk
            instrs[k] = replace(ins, imm=Expr.sym(name))

    leaders = {0} | set(labels_at)
    leaders.update(k + 1 for k, ins in enumerate(instrs) if _is_cf(ins))
    leaders = sorted(x for x in leaders if x < len(instrs))

    blocks = []
    for a, b in zip(leaders, leaders[1:] + [len(instrs)]):
        ls = labels_at.get(a) or [_fresh(".Lb", names)]
        blocks.append(BasicBlock(ls[0], list(instrs[a:b]), aliases=ls[1:]))
    trailing = labels_at.get(len(instrs), [])

    entry = None
    for d in preamble:
        if d.name in (".globl", ".global"):
            for a in d.args:
                if a in pos_of and entry is None:
                    entry = a
    if "_start" in pos_of:
        entry = "_start"
    if entry is None:
        entry = blocks[0].label if blocks else (trailing[0] if trailing else "")
    g = ControlFlowGraph(blocks, entry, preamble, data, list(trailing))
    for b in g.blocks:
        t = b.terminator
        if t is not None and t.target and t.target not in pos_of and t.target not in names:
            raise CfgError(f"branch to unknown label {t.target!r}")
    return _link(g)


def to_source(g: ControlFlowGraph) -> SourceUnit:
    items: list = list(g.preamble) + [Directive(".text")]
    for b in g.blocks:
        items.extend(Label(n) for n in b.names)
        items.extend(b.instrs)
    items.extend(Label(n) for n in g.trailing)
    if g.data:
        items.append(Directive(".data"))
        items.extend(g.data)
    return SourceUnit(items)


# -- passes ------------------------------------------------------------------

def split_at_calls(g: ControlFlowGraph) -> ControlFlowGraph:
    """Make every call the last instruction of its block."""
    g = g.copy()
    names = _all_names(g)
    out = []
    for b in g.blocks:
        cur = BasicBlock(b.label, [], list(b.aliases), resched=b.resched)
        for k, ins in enumerate(b.instrs):
            cur.instrs.append(ins)
            if _is_call(ins) and k + 1 < len(b.instrs):
                out.append(cur)
                cur = BasicBlock(_fresh(".Lc", names), [])
        out.append(cur)
    g.blocks = out
    return _link(g)


def _merge_empty(g: ControlFlowGraph) -> None:
    """Fold blocks without instructions into their memory successor."""
    out = []
    carry: list = []
    for b in g.blocks:
        if not b.instrs:
            carry.extend(b.names)
            continue
        if carry:
            b.aliases = carry[1:] + [b.label] + b.aliases
            b.label = carry[0]
            carry = []
        out.append(b)
    g.trailing = carry + g.trailing
    g.blocks = out


def insert_bb(g: ControlFlowGraph) -> ControlFlowGraph:
    """Prefix every block with ``bb n, seq``; oversized blocks become chains."""
    g = g.copy()
    _merge_empty(g)
    names = _all_names(g)
    out = []
    for b in g.blocks:
        body = list(b.body)
        chunks = []
        while len(body) > isa.BB_MAX_N:
            chunks.append(body[:isa.BB_MAX_N])
            body = body[isa.BB_MAX_N:]
        chunks.append(body)
        for k, chunk in enumerate(chunks):
            seq = not any(_is_cf(i) for i in chunk)
            bb = AsmInstr(Op.BB, n=len(chunk), seq=seq, line=chunk[0].line)
            if k == 0:
                out.append(BasicBlock(b.label, [bb] + chunk, list(b.aliases), resched=b.resched))
            else:
                out.append(BasicBlock(_fresh(".Ls", names), [bb] + chunk))
    g.blocks = out
    return _link(g)


_BARRIERS = (Op.ECALL, Op.EBREAK, Op.FENCE)


def _must_follow(first: AsmInstr, later: AsmInstr) -> bool:
    """True when ``later`` may not be scheduled ahead of ``first``."""
    if first.op in _BARRIERS or later.op in _BARRIERS:
        return True
    a, b = first.shape(), later.shape()
    aw, bw = isa.writes(a), isa.writes(b)
    if aw and (aw in isa.reads(b) or aw == bw):
        return True
    if bw and bw in isa.reads(a):
        return True
    am = a.op in isa.LOADS or a.op in isa.STORES
    bm = b.op in isa.LOADS or b.op in isa.STORES
    return am and bm and (a.op in isa.STORES or b.op in isa.STORES)


def _list_schedule(body: list, term: int) -> list:
    """Top-down list schedule of ``body`` that issues the terminator as early as possible.

    The terminator and everything it transitively depends on take priority;
    otherwise the original order is kept.
    """
    n = len(body)
    preds = [[j for j in range(i) if _must_follow(body[j], body[i])] for i in range(n)]
    urgent = {term}
    for i in range(term, -1, -1):
        if i in urgent:
            urgent.update(preds[i])
    done: set = set()
    order: list = []
    while len(order) < n:
        ready = [i for i in range(n) if i not in done and all(p in done for p in preds[i])]
        pick = min(ready, key=lambda i: (i not in urgent, i))
        done.add(pick)
        order.append(pick)
    return [body[i] for i in order]


def reschedule_terminators(g: ControlFlowGraph) -> ControlFlowGraph:
    """Move each block's terminator as early as register, memory and barrier dependences allow.

    Calls and indirect jumps stay put.  The number of instructions left
    after the terminator is stored in ``BasicBlock.resched``.
    """
    g = g.copy()
    for b in g.blocks:
        t = b.terminator_index
        if t is None:
            b.resched = None
            continue
        term = b.instrs[t]
        if not (_is_call(term) or term.op is Op.JALR):
            lo = 1 if b.has_bb else 0
            b.instrs = b.instrs[:lo] + _list_schedule(b.instrs[lo:], t - lo)
        b.resched = len(b.instrs) - 1 - b.terminator_index
    return _link(g)


def resched_params(g: ControlFlowGraph) -> dict[str, int]:
    return {b.label: len(b.instrs) - 1 - b.terminator_index for b in g.blocks if b.terminator_index is not None}


# -- hardware loops ----------------------------------------------------------

def _live_in(g: ControlFlowGraph) -> dict[str, set]:
    """Backward register liveness; computed successors and calls count as all-live."""
    everything = set(range(1, 32))
    use, defs = {}, {}
    for b in g.blocks:
        u, d = set(), set()
        for ins in b.instrs:
            s = ins.shape()
            u.update(r for r in isa.reads(s) if r not in d)
            if isa.writes(s):
                d.add(isa.writes(s))
        t = b.terminator
        if t is not None and (_is_call(t) or t.op is Op.JALR):
            u = everything
        use[b.label], defs[b.label] = u, d
    live = {b.label: set() for b in g.blocks}
    changed = True
    while changed:
        changed = False
        for b in reversed(g.blocks):
            out = set()
            for s in b.succs:
                out |= everything if s == COMPUTED else live.get(s, everything)
            if not b.succs:
                out = everything
            new = use[b.label] | (out - defs[b.label])
            if new != live[b.label]:
                live[b.label], changed = new, True
    return live


@dataclass
class _LoopPlan:
    k: int
    m: int
    counter: int
    drop_counter: bool
    init_index: int | None


def _last_def(instrs: list, reg: int, upto: int) -> int | None:
    for k in range(upto - 1, -1, -1):
        if isa.writes(instrs[k].shape()) == reg:
            return k
    return None


def _const_def(ins: AsmInstr) -> int | None:
    if ins.op is Op.ADDI and ins.rs1 == 0 and ins.imm.is_const:
        return ins.imm.eval({})
    return None


def _references(g: ControlFlowGraph, name: str, skip: AsmInstr) -> bool:
    for b in g.blocks:
        for ins in b.instrs:
            if ins is not skip and name in ins.imm.symbols:
                return True
    for it in g.data:
        if isinstance(it, Directive) and any(name in a for a in it.args):
            return True
    return False


def _plan_loop(g: ControlFlowGraph, k: int, live: dict) -> _LoopPlan | None:
    if k == 0:
        return None
    b, pre = g.blocks[k], g.blocks[k - 1]
    if not (b.has_bb and pre.has_bb and pre.seq) or b.aliases:
        return None
    t = b.terminator
    if t is None or t.op not in (Op.BNE, Op.BLT, Op.BLTU) or t.target != b.label:
        return None
    if _references(g, b.label, t):
        return None
    body = [i for i in b.instrs[1:] if i is not t]
    writes = [isa.writes(i.shape()) for i in body]
    step = None
    for ctr, lim in ((t.rs1, t.rs2), (t.rs2, t.rs1)):
        if ctr == 0 or writes.count(ctr) != 1:
            continue
        upd = body[writes.index(ctr)]
        if not (upd.op is Op.ADDI and upd.rs1 == ctr and upd.imm.is_const):
            continue
        step = upd.imm.eval({})
        if lim in writes:
            continue
        d_ctr = _last_def(pre.instrs, ctr, len(pre.instrs))
        c0 = _const_def(pre.instrs[d_ctr]) if d_ctr is not None else None
        if lim == 0:
            c1 = 0
        else:
            d_lim = _last_def(pre.instrs, lim, len(pre.instrs))
            c1 = _const_def(pre.instrs[d_lim]) if d_lim is not None else None
        if c0 is None or c1 is None:
            continue
        if t.op is Op.BNE:
            if step == 0 or (c1 - c0) % step:
                continue
            m = (c1 - c0) // step
        elif step == 1 and ctr == t.rs1:
            m = c1 - c0
        else:
            continue
        if not 1 <= m <= 2047:
            continue
        # the update must be the only other use of the counter inside the loop
        other_reads = any(ctr in isa.reads(i.shape()) for i in body if i is not upd)
        next_live = live.get(g.blocks[k + 1].label, set(range(32))) if k + 1 < len(g.blocks) else set(range(32))
        init_used = any(ctr in isa.reads(i.shape()) for i in pre.instrs[d_ctr + 1:])
        drop = not other_reads and ctr not in next_live and not init_used and lim != ctr
        return _LoopPlan(k, m, ctr, drop, d_ctr if drop else None)
    return None


def place_hardware_loops(g: ControlFlowGraph, sets: tuple = tuple(range(isa.NUM_LOOP_SETS)),
                         drop_dead_counter: bool = True) -> ControlFlowGraph:
    """Replace constant-trip single-block self-loops with loop-counter sets.

    The loop branch is deleted; ``lcnt m, set`` goes at the end of the
    sequential preheader and the loop's bb gets matching s and e flags.
    When the counter register is otherwise dead its update and its
    initialisation are removed too.  ``sets`` lists the sets the allocator
    may hand out, in order; a loop that finds none free is left alone.
    """
    g = g.copy()
    live = _live_in(g)
    plans = [p for k in range(len(g.blocks)) if (p := _plan_loop(g, k, live))]
    free = list(sets)
    for p in plans:
        if not free:
            break
        # single-block loops never nest, so each set is live only from its lcnt to the loop exit
        s = free[0]
        b, pre = g.blocks[p.k], g.blocks[p.k - 1]
        body = [i for i in b.instrs[1:] if not _is_cf(i)]
        if p.drop_counter:
            body = [i for i in body if isa.writes(i.shape()) != p.counter]
            pre.instrs = [i for j, i in enumerate(pre.instrs) if j != p.init_index]
        if not body:
            continue
        line = pre.instrs[-1].line
        pre.instrs.append(AsmInstr(Op.LCNT, rd=s, imm=Expr.const(p.m), line=line))
        pre.instrs[0] = replace(pre.instrs[0], n=len(pre.instrs) - 1)
        b.instrs = [replace(b.instrs[0], n=len(body), seq=False, sflags=b.instrs[0].sflags | 1 << s,
                            eflags=b.instrs[0].eflags | 1 << s)] + body
        b.resched = None
    return _link(g)


# -- reporting ---------------------------------------------------------------

@dataclass
class BlockReport:
    label: str
    size: int
    seq: bool
    resched: int | None
    addr: int | None = None


@dataclass
class SizeReport:
    original: int
    blocks: int
    lcnt: int
    removed: int
    per_block: list

    @property
    def added(self) -> int:
        return self.blocks + self.lcnt

    @property
    def overhead(self) -> float:
        return self.added / self.original if self.original else 0.0

    @property
    def byte_delta(self) -> int:
        return 4 * (self.added - self.removed)

    def attach_addresses(self, img) -> "SizeReport":
        """Fill in each block's start address from an assembled image's symbols."""
        for b in self.per_block:
            b.addr = img.symbols.get(b.label)
        return self

    def to_dict(self) -> dict:
        return {
            "original_instructions": self.original,
            "blocks": self.blocks,
            "lcnt": self.lcnt,
            "removed": self.removed,
            "added": self.added,
            "overhead": self.overhead,
            "per_block": [vars(b) for b in self.per_block],
        }


def code_size_report(before: ControlFlowGraph, after: ControlFlowGraph) -> SizeReport:
    orig = sum(1 for b in before.blocks for i in b.instrs if i.op not in (Op.BB, Op.LCNT))
    n_bb = sum(1 for b in after.blocks for i in b.instrs if i.op is Op.BB)
    n_lcnt = sum(1 for b in after.blocks for i in b.instrs if i.op is Op.LCNT)
    kept = sum(1 for b in after.blocks for i in b.instrs if i.op not in (Op.BB, Op.LCNT))
    per = [BlockReport(b.label, b.size, bool(b.instrs[0].seq) if b.has_bb else b.seq,
                       (len(b.instrs) - 1 - b.terminator_index) if b.terminator_index is not None else None)
           for b in after.blocks]
    return SizeReport(orig, n_bb, n_lcnt, orig - kept, per)


# -- convenience -------------------------------------------------------------

def transform(src: SourceUnit, resched: bool = True, hwloops: bool = False,
              loop_sets: tuple = tuple(range(isa.NUM_LOOP_SETS))) -> tuple[SourceUnit, SizeReport]:
    """Full bb conversion of a legacy program."""
    g0 = build_cfg(src)
    g = insert_bb(split_at_calls(g0))
    if hwloops:
        g = place_hardware_loops(g, loop_sets)
    if resched:
        g = reschedule_terminators(g)
    return to_source(g), code_size_report(g0, g)


def check_single_terminator(g: ControlFlowGraph) -> None:
    for b in g.blocks:
        if sum(1 for i in b.instrs if _is_cf(i)) > 1:
            raise CfgError(f"block {b.label} has more than one control-flow instruction")
        if b.has_bb and b.instrs[0].n != len(b.instrs) - 1:
            raise CfgError(f"block {b.label} bb size does not match its body")


__all__ = [
    "AsmError", "BasicBlock", "ControlFlowGraph", "CfgError", "TargetIntoMiddleOfInstruction",
    "NoFreeLoopSet", "build_cfg", "to_source", "split_at_calls", "insert_bb",
    "reschedule_terminators", "place_hardware_loops", "code_size_report", "SizeReport", "transform",
    "check_single_terminator", "resched_params", "COMPUTED",
]
