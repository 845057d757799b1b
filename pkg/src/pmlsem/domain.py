"""The semantic domain: conditional steps and traces, the information-content
preorder, the quotiented lattice of trace sets, and interpretations.

Guards and updates are closed first-order terms with an evaluator rather
than closures: the else construction needs guard negation, atomic merging
needs guard/update composition, and dumps need printing.  None of that is
possible with opaque functions.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

from . import state as st
from . import syntax as syn
from .state import BOTTOM, Env, Loc, PidTok, SystemState

log = logging.getLogger("pmlsem")


class UniverseTooLarge(Exception):
    pass


# ---------------------------------------------------------------------------
# Guard terms


@dataclass(frozen=True)
class TrueG:
    pass


@dataclass(frozen=True)
class RExprGuard:
    expr: object  # syntax.RExpr
    env: Env


@dataclass(frozen=True)
class ChanDefined:
    cid: int


@dataclass(frozen=True)
class NFullG:
    cid: int


@dataclass(frozen=True)
class NEmptyG:
    cid: int


@dataclass(frozen=True)
class HandshakeIs:
    hs_loc: Loc
    cid: int


@dataclass(frozen=True)
class NotG:
    g: "Guard"


@dataclass(frozen=True)
class AndG:
    gs: tuple


@dataclass(frozen=True)
class AfterG:
    """Guard evaluated in the state produced by an update; atomic merging
    composes conditions this way."""

    upd: "Update"
    g: "Guard"


Guard = Union[TrueG, RExprGuard, ChanDefined, NFullG, NEmptyG, HandshakeIs,
              NotG, AndG, AfterG]


def and_guard(gs: Iterable[Guard]) -> Guard:
    flat: list = []
    for g in gs:
        if isinstance(g, TrueG):
            continue
        if isinstance(g, AndG):
            flat.extend(g.gs)
        else:
            flat.append(g)
    if not flat:
        return TrueG()
    if len(flat) == 1:
        return flat[0]
    return AndG(tuple(flat))


# ---------------------------------------------------------------------------
# Update terms


@dataclass(frozen=True)
class IdU:
    pass


@dataclass(frozen=True)
class AssignLoc:
    target: object  # syntax.LExpr
    value: object  # syntax.RExpr
    env: Env


@dataclass(frozen=True)
class WriteLoc:
    loc: Loc
    value: st.Value


@dataclass(frozen=True)
class ChanPush:
    cid: int
    args: tuple  # RExprs
    env: Env


@dataclass(frozen=True)
class ChanPop:
    """Receive effect: write the head fields to the targets, then pop."""

    cid: int
    targets: tuple  # LExprs
    env: Env


@dataclass(frozen=True)
class SetHandshake:
    hs_loc: Loc
    value: int  # channel id, or -1 for the rest value


@dataclass(frozen=True)
class BumpNrPr:
    loc: Loc
    delta: int


@dataclass(frozen=True)
class SpawnMeta:
    proctype: str
    param_names: tuple
    local_names: tuple


@dataclass(frozen=True)
class SpawnAlloc:
    """Allocation step of a run statement: formals get the actual values,
    locals get type defaults, the pid cell gets a fresh pid."""

    assigns: tuple  # (Loc, kind, RExpr) per formal parameter
    defaults: tuple  # (Loc, st.Value) per local variable
    pid_loc: Loc
    pid_value: object  # int once assigned, PidTok before
    env: Env  # parent environment the actuals evaluate in
    meta: SpawnMeta


@dataclass(frozen=True)
class SeqU:
    us: tuple


Update = Union[IdU, AssignLoc, WriteLoc, ChanPush, ChanPop, SetHandshake,
               BumpNrPr, SpawnAlloc, SeqU]


def seq_update(us: Iterable[Update]) -> Update:
    flat: list = []
    for u in us:
        if isinstance(u, IdU):
            continue
        if isinstance(u, SeqU):
            flat.extend(u.us)
        else:
            flat.append(u)
    if not flat:
        return IdU()
    if len(flat) == 1:
        return flat[0]
    return SeqU(tuple(flat))


# ---------------------------------------------------------------------------
# Evaluation

def guard_eval(g: Guard, s: SystemState) -> bool:
    """Total: the inconsistent state falsifies every guard."""
    from . import denote  # expression evaluation lives with the denotations

    if s.is_bottom:
        return False
    if isinstance(g, TrueG):
        return True
    if isinstance(g, RExprGuard):
        try:
            return denote.eval_r(g.expr, g.env, s) != 0
        except st.BottomSignal:
            return False
    if isinstance(g, ChanDefined):
        return st.read_chan(s, g.cid) is not None
    if isinstance(g, NFullG):
        c = st.read_chan(s, g.cid)
        return c is not None and st.nfull(c)
    if isinstance(g, NEmptyG):
        c = st.read_chan(s, g.cid)
        return c is not None and st.nempty(c)
    if isinstance(g, HandshakeIs):
        v = st.read(s, g.hs_loc)
        return v is not None and v.payload == g.cid
    if isinstance(g, NotG):
        return not guard_eval(g.g, s)
    if isinstance(g, AndG):
        return all(guard_eval(x, s) for x in g.gs)
    if isinstance(g, AfterG):
        return guard_eval(g.g, update_eval(g.upd, s))
    raise TypeError(g)


def update_eval(u: Update, s: SystemState) -> SystemState:
    """Total state transformer; anything inconsistent collapses to bottom."""
    from . import denote

    if s.is_bottom:
        return s
    try:
        if isinstance(u, IdU):
            return s
        if isinstance(u, AssignLoc):
            v = denote.eval_r(u.value, u.env, s)
            return denote.eval_l(u.target, u.env, s)(lambda _old: v)
        if isinstance(u, WriteLoc):
            return st.update(s, u.loc, u.value)
        if isinstance(u, ChanPush):
            c = st.read_chan(s, u.cid)
            if c is None:
                return BOTTOM
            msg = tuple(denote.eval_r(a, u.env, s) for a in u.args)
            return st.update_chan(s, u.cid, st.chan_push(c, msg))
        if isinstance(u, ChanPop):
            c = st.read_chan(s, u.cid)
            if c is None or not st.nempty(c):
                return BOTTOM
            vals = st.chan_head(c)
            out = s
            for tgt, v in zip(u.targets, vals):
                out = denote.eval_l(tgt, u.env, out)(lambda _old, v=v: v)
                if out.is_bottom:
                    return out
            return st.update_chan(out, u.cid, st.chan_pop(c))
        if isinstance(u, SetHandshake):
            return st.update(s, u.hs_loc, st.scalar("int", u.value))
        if isinstance(u, BumpNrPr):
            old = st.read(s, u.loc)
            if old is None:
                return BOTTOM
            return st.update(s, u.loc, st.scalar("int", old.payload + u.delta))
        if isinstance(u, SpawnAlloc):
            out = s
            for loc, kind, rexpr in u.assigns:
                v = denote.eval_r(rexpr, u.env, s)
                out = st.update(out, loc, st.scalar(kind, v))
            for loc, val in u.defaults:
                out = st.update(out, loc, val)
            return st.update(out, u.pid_loc, st.scalar("int", u.pid_value))
        if isinstance(u, SeqU):
            for x in u.us:
                s = update_eval(x, s)
            return s
    except (st.BottomSignal, st.EngineError):
        return BOTTOM
    raise TypeError(u)


# ---------------------------------------------------------------------------
# Conditional steps and traces

OPEN = "open"
FINAL = "final"
TRUNCATED = "truncated"


@dataclass(frozen=True)
class Trans:
    guard: Guard
    update: Update
    marked: bool = False
    sync: Optional[tuple] = None  # ("send"|"recv", channel id) for rendezvous steps


@dataclass(frozen=True)
class Spawn:
    traces: frozenset  # non-empty payload trace set
    marked: bool = False
    callee: Optional[str] = None
    pid: object = None  # pid of the spawned instance; a PidTok until assigned


CondStep = Union[Trans, Spawn]


@dataclass(frozen=True)
class Trace:
    """A conditional trace.  The finalizer is the FINAL terminator; a
    TRUNCATED terminator stands for the unexplored tail of a longer trace."""

    steps: tuple = ()
    terminator: str = OPEN
    depth: Optional[int] = field(default=None, compare=False)
    end_point: Optional[str] = None  # process point reached; construction only

    def is_epsilon(self) -> bool:
        return not self.steps and self.terminator == OPEN


EPSILON = Trace()
FINAL_TRACE = Trace((), FINAL)


def bottom_set() -> frozenset:
    return frozenset({EPSILON})


def prepend(steps: tuple, t: Trace) -> Trace:
    return Trace(steps + t.steps, t.terminator, t.depth, t.end_point)


def concat(t1: Trace, t2: Trace) -> Trace:
    """t1 followed by t2; only open traces extend, truncated ones absorb."""
    if t1.terminator == OPEN:
        return Trace(t1.steps + t2.steps, t2.terminator, t2.depth, t2.end_point)
    if t1.terminator == TRUNCATED:
        return t1
    raise st.EngineError("cannot extend a finalized trace")


def concat_set(S: frozenset, t2: Trace) -> frozenset:
    return frozenset(concat(t, t2) for t in S)


# -- rendering --------------------------------------------------------------

def render_guard(g: Guard) -> str:
    if isinstance(g, TrueG):
        return "true"
    if isinstance(g, RExprGuard):
        return syn.render_expr(g.expr)
    if isinstance(g, ChanDefined):
        return f"defined(#{g.cid})"
    if isinstance(g, NFullG):
        return f"nfull(#{g.cid})"
    if isinstance(g, NEmptyG):
        return f"nempty(#{g.cid})"
    if isinstance(g, HandshakeIs):
        return f"handshake==#{g.cid}"
    if isinstance(g, NotG):
        return f"!({render_guard(g.g)})"
    if isinstance(g, AndG):
        return " && ".join(f"({render_guard(x)})" for x in g.gs)
    if isinstance(g, AfterG):
        return f"after[{render_update(g.upd)}]({render_guard(g.g)})"
    raise TypeError(g)


def render_update(u: Update) -> str:
    if isinstance(u, IdU):
        return "id"
    if isinstance(u, AssignLoc):
        return f"{syn.render_lexpr(u.target)}:={syn.render_expr(u.value)}"
    if isinstance(u, WriteLoc):
        return f"{u.loc!r}:={u.value!r}"
    if isinstance(u, ChanPush):
        return f"push(#{u.cid}," + ",".join(syn.render_expr(a) for a in u.args) + ")"
    if isinstance(u, ChanPop):
        return f"recv(#{u.cid}," + ",".join(syn.render_lexpr(t) for t in u.targets) + ")"
    if isinstance(u, SetHandshake):
        return f"handshake:={'#%d' % u.value if u.value >= 0 else u.value}"
    if isinstance(u, BumpNrPr):
        return f"nr_pr{'+' if u.delta >= 0 else ''}{u.delta}"
    if isinstance(u, SpawnAlloc):
        parts = [f"{n}@{loc!r}={syn.render_expr(e)}"
                 for (loc, _k, e), n in zip(u.assigns, u.meta.param_names)]
        parts += [f"{n}@{loc!r}={v!r}"
                  for (loc, v), n in zip(u.defaults, u.meta.local_names)]
        parts.append(f"_pid@{u.pid_loc!r}={u.pid_value!r}")
        return f"alloc {u.meta.proctype}(" + ",".join(parts) + ")"
    if isinstance(u, SeqU):
        return "; ".join(render_update(x) for x in u.us)
    raise TypeError(u)


def render_step(s: CondStep) -> str:
    if isinstance(s, Trans):
        m = "~" if s.marked else ""
        return f"<{render_guard(s.guard)} | {render_update(s.update)}>{m}"
    m = "~" if s.marked else ""
    who = s.callee or "?"
    pid = "" if s.pid is None else f"#{s.pid!r}" if not isinstance(s.pid, int) else f"#{s.pid}"
    inner = ", ".join(sorted(render_trace(t) for t in s.traces))
    return f"run{m} {who}{pid}{{{inner}}}"


def render_trace(t: Trace) -> str:
    parts = [render_step(s) for s in t.steps]
    if t.terminator == FINAL:
        parts.append("#fin")
    elif t.terminator == TRUNCATED:
        parts.append("...")
    body = " . ".join(parts) if parts else "eps"
    if t.end_point is not None:
        body += f" @{t.end_point}"
    return body


def render_trace_set(S: frozenset) -> str:
    return "\n".join(sorted(render_trace(t) for t in S)) + "\n"


def render_guard_resolved(g: Guard, s: SystemState) -> str:
    """Guard text with array indices evaluated under a concrete state, so
    diagnostics read like the paper's examples (f[1-id] becomes f[0])."""
    from . import denote

    def fix_expr(e):
        if isinstance(e, syn.ArrayRead):
            try:
                env = g_env
                idx = denote.eval_r(e.index, env, s)
                return syn.ArrayRead(e.name, syn.Num(idx))
            except (st.BottomSignal, st.EngineError):
                return e
        return e

    if isinstance(g, RExprGuard):
        g_env = g.env
        return syn.render_expr(syn.map_expr(fix_expr, g.expr))
    if isinstance(g, NotG):
        return f"!({render_guard_resolved(g.g, s)})"
    if isinstance(g, AndG):
        return " && ".join(f"({render_guard_resolved(x, s)})" for x in g.gs)
    if isinstance(g, AfterG):
        return f"after[...]({render_guard_resolved(g.g, update_eval(g.upd, s))})"
    return render_guard(g)


def trace_sort_key(t: Trace) -> str:
    return render_trace(t)


# ---------------------------------------------------------------------------
# Finite state universes

_SCALAR_DOMAINS = {"bit": (0, 1), "bool": (0, 1)}


@dataclass
class Universe:
    """A finite footprint of states: every combination of the listed location
    values and channel contents, layered over a base state."""

    base: SystemState
    loc_domains: tuple = ()  # (Loc, tuple of st.Value)
    chan_domains: tuple = ()  # (cid, tuple of queue tuples)
    cap: int = 4096

    @staticmethod
    def build(base: SystemState, locs: dict, chans: dict | None = None,
              byte_cap: int = 4, cap: int = 4096) -> "Universe":
        """locs maps Loc to a kind name or ("array", kind, length); chans
        maps cid to a ChannelInstance template whose queue is ignored."""
        loc_doms = []
        for loc in sorted(locs, key=lambda l: l.token):
            spec = locs[loc]
            if isinstance(spec, tuple) and spec[0] == "array":
                _, kind, length = spec
                vals = _SCALAR_DOMAINS.get(kind, tuple(range(byte_cap)))
                doms = tuple(st.array_value(kind, combo)
                             for combo in itertools.product(vals, repeat=length))
            else:
                vals = _SCALAR_DOMAINS.get(spec, tuple(range(byte_cap)))
                doms = tuple(st.scalar(spec, v) for v in vals)
            loc_doms.append((loc, doms))
        chan_doms = []
        for cid in sorted(chans or {}):
            tpl = chans[cid]
            field_vals = [
                _SCALAR_DOMAINS.get(k, tuple(range(byte_cap))) for k in tpl.field_types]
            msgs = tuple(itertools.product(*field_vals))
            queues = []
            for n in range(tpl.effective_capacity() + 1):
                queues.extend(itertools.product(msgs, repeat=n))
            chan_doms.append((cid, tuple(queues)))
        return Universe(base, tuple(loc_doms), tuple(chan_doms), cap)

    def size(self) -> int:
        n = 1
        for _, dom in self.loc_domains:
            n *= len(dom)
        for _, dom in self.chan_domains:
            n *= len(dom)
        return n

    def states(self):
        if self.size() > self.cap:
            raise UniverseTooLarge(
                f"universe has {self.size()} states, cap is {self.cap}")
        loc_choices = [[(loc, v) for v in dom] for loc, dom in self.loc_domains]
        chan_choices = [[(cid, q) for q in dom] for cid, dom in self.chan_domains]
        base_mem = self.base.mem_dict()
        base_ch = self.base.chan_dict()
        for locs in itertools.product(*loc_choices):
            for chans in itertools.product(*chan_choices):
                mem = dict(base_mem)
                mem.update(dict(locs))
                ch = dict(base_ch)
                for cid, q in chans:
                    ch[cid] = st.ChannelInstance(ch[cid].capacity, ch[cid].field_types, q)
                yield SystemState.make(mem, ch)


# ---------------------------------------------------------------------------
# The preorder and the lattice operations

def _step_leq(a: CondStep, b: CondStep, states: list, dom: "Universe") -> bool:
    if isinstance(a, Trans) and isinstance(b, Trans):
        if a.marked != b.marked:
            return False
        for s in states:
            if guard_eval(a.guard, s):
                if not guard_eval(b.guard, s):
                    return False
                if update_eval(a.update, s) != update_eval(b.update, s):
                    return False
        return True
    if isinstance(a, Spawn) and isinstance(b, Spawn):
        if a.marked != b.marked:
            return False
        return set_leq(a.traces, b.traces, dom)
    return False


def _structural_leq(t1: Trace, t2: Trace) -> bool:
    n = len(t1.steps)
    if n > len(t2.steps):
        return False
    if t1.steps != t2.steps[:n]:
        return False
    if t1.terminator in (OPEN, TRUNCATED):
        return True
    return len(t2.steps) == n and t2.terminator == FINAL


def trace_leq(t1: Trace, t2: Trace, dom: Universe,
              on_overflow: str = "raise") -> bool:
    """Information-content preorder, decided by enumeration over dom.

    Truncated tails behave like the empty trace: they are extensible
    prefixes.  With on_overflow="structural" an oversized universe degrades
    to structural step equality, a sound under-approximation.
    """
    try:
        states = list(dom.states())
    except UniverseTooLarge:
        if on_overflow == "structural":
            log.warning("universe too large; trace_leq degraded to structural equality")
            return _structural_leq(t1, t2)
        raise
    n = len(t1.steps)
    if n > len(t2.steps):
        return False
    for a, b in zip(t1.steps, t2.steps):
        if not _step_leq(a, b, states, dom):
            return False
    if t1.terminator in (OPEN, TRUNCATED):
        return True
    return len(t2.steps) == n and t2.terminator == FINAL


def set_leq(S1: frozenset, S2: frozenset, dom: Universe,
            on_overflow: str = "raise") -> bool:
    return all(any(trace_leq(t1, t2, dom, on_overflow) for t2 in S2) for t1 in S1)


def set_equiv(S1: frozenset, S2: frozenset, dom: Universe,
              on_overflow: str = "raise") -> bool:
    return (set_leq(S1, S2, dom, on_overflow)
            and set_leq(S2, S1, dom, on_overflow))


def lub(sets: Iterable[frozenset]) -> frozenset:
    out: set = set()
    for S in sets:
        out |= S
    if not out:
        raise st.EngineError("least upper bound of no trace sets")
    return frozenset(out)


def glb(sets: list, dom: Universe) -> frozenset:
    """Traces dominated by some member of every set, over representatives."""
    if not sets:
        raise st.EngineError("greatest lower bound of no trace sets")
    candidates = lub(sets)
    out = {t for t in candidates
           if all(any(trace_leq(t, t2, dom) for t2 in S) for S in sets)}
    return frozenset(out) if out else bottom_set()


# ---------------------------------------------------------------------------
# Interpretations

@dataclass(frozen=True)
class ProcSig:
    """Shape of a most-general call: one placeholder location per formal,
    per local, and for the pid cell."""

    name: str
    params: tuple  # (name, kind)
    formal_locs: tuple
    locals: tuple  # (name, kind, Loc)
    pid_loc: Loc
    entry: str


@dataclass(frozen=True)
class Interpretation:
    entries: tuple  # sorted (name, ProcSig, frozenset) triples

    @staticmethod
    def bottom(sigs: list) -> "Interpretation":
        return Interpretation(tuple(sorted(
            (s.name, s, bottom_set()) for s in sigs)))

    def names(self) -> tuple:
        return tuple(n for n, _, _ in self.entries)

    def sig(self, name: str) -> ProcSig:
        for n, s, _ in self.entries:
            if n == name:
                return s
        raise KeyError(name)

    def traces(self, name: str) -> frozenset:
        for n, _, tr in self.entries:
            if n == name:
                return tr
        raise KeyError(name)

    def with_entry(self, name: str, traces: frozenset) -> "Interpretation":
        return Interpretation(tuple(sorted(
            (n, s, traces if n == name else tr) for n, s, tr in self.entries)))


class Renamer:
    """Location and pid renaming across a trace set.

    Locations outside `keep` and not already mapped are freshened through
    fresh_loc; pid placeholders go through fresh_pid.  Walks steps in trace
    order and recurses into spawn payloads at their position, so pid
    assignment follows spawn order.  on_alloc is told about every renamed
    allocation, which is how the concrete phase builds its process registry.
    """

    def __init__(self, base_map: dict, keep: set,
                 fresh_loc: Callable, fresh_pid: Callable,
                 on_alloc: Optional[Callable] = None):
        self.map = dict(base_map)
        self.keep = keep
        self.fresh_loc = fresh_loc
        self.fresh_pid = fresh_pid
        self.on_alloc = on_alloc

    def loc(self, l: Loc) -> Loc:
        if l in self.map:
            return self.map[l]
        if l in self.keep:
            return l
        nl = self.fresh_loc(l)
        self.map[l] = nl
        return nl

    def pid(self, p):
        if not isinstance(p, PidTok):
            return p
        if p in self.map:
            return self.map[p]
        np = self.fresh_pid(p)
        self.map[p] = np
        return np

    def env(self, e: Env) -> Env:
        return Env(tuple(
            (n, self.loc(t) if isinstance(t, Loc) else t) for n, t in e.bindings))

    def guard(self, g: Guard) -> Guard:
        if isinstance(g, (TrueG, ChanDefined, NFullG, NEmptyG)):
            return g
        if isinstance(g, RExprGuard):
            return RExprGuard(g.expr, self.env(g.env))
        if isinstance(g, HandshakeIs):
            return HandshakeIs(self.loc(g.hs_loc), g.cid)
        if isinstance(g, NotG):
            return NotG(self.guard(g.g))
        if isinstance(g, AndG):
            return AndG(tuple(self.guard(x) for x in g.gs))
        if isinstance(g, AfterG):
            return AfterG(self.update(g.upd), self.guard(g.g))
        raise TypeError(g)

    def update(self, u: Update) -> Update:
        if isinstance(u, IdU):
            return u
        if isinstance(u, AssignLoc):
            return AssignLoc(u.target, u.value, self.env(u.env))
        if isinstance(u, WriteLoc):
            return WriteLoc(self.loc(u.loc), u.value)
        if isinstance(u, ChanPush):
            return ChanPush(u.cid, u.args, self.env(u.env))
        if isinstance(u, ChanPop):
            return ChanPop(u.cid, u.targets, self.env(u.env))
        if isinstance(u, SetHandshake):
            return SetHandshake(self.loc(u.hs_loc), u.value)
        if isinstance(u, BumpNrPr):
            return BumpNrPr(self.loc(u.loc), u.delta)
        if isinstance(u, SpawnAlloc):
            assigns = tuple((self.loc(l), k, e) for l, k, e in u.assigns)
            defaults = tuple((self.loc(l), v) for l, v in u.defaults)
            pid_loc = self.loc(u.pid_loc)
            pid = self.pid(u.pid_value)
            out = SpawnAlloc(assigns, defaults, pid_loc, pid, self.env(u.env), u.meta)
            if self.on_alloc is not None:
                self.on_alloc(out)
            return out
        if isinstance(u, SeqU):
            return SeqU(tuple(self.update(x) for x in u.us))
        raise TypeError(u)

    def step(self, s: CondStep) -> CondStep:
        if isinstance(s, Trans):
            return Trans(self.guard(s.guard), self.update(s.update), s.marked, s.sync)
        return Spawn(self.trace_set(s.traces), s.marked, s.callee, self.pid(s.pid))

    def trace(self, t: Trace) -> Trace:
        return Trace(tuple(self.step(x) for x in t.steps),
                     t.terminator, t.depth, t.end_point)

    def trace_set(self, S: frozenset) -> frozenset:
        return frozenset(self.trace(t) for t in sorted(S, key=trace_sort_key))


def interp_apply(I: Interpretation, name: str, actual_locs: tuple,
                 keep: set, fresh_loc: Callable, fresh_pid: Callable,
                 pid_loc: Optional[Loc] = None,
                 local_locs: Optional[tuple] = None,
                 on_alloc: Optional[Callable] = None) -> frozenset:
    """Instantiate the most-general denotation of a proctype.

    Formal placeholder locations are renamed to actual_locs, and the local
    and pid placeholders to the cells the caller allocated for them; every
    other location the entry introduced (nested spawn sites) is freshened.
    Locations in `keep` (the globals) stay put.
    """
    sig = I.sig(name)
    if len(actual_locs) != len(sig.formal_locs):
        raise st.EngineError(
            f"call to {name} with {len(actual_locs)} locations, "
            f"expected {len(sig.formal_locs)}")
    base = dict(zip(sig.formal_locs, actual_locs))
    if pid_loc is not None:
        base[sig.pid_loc] = pid_loc
    if local_locs is not None:
        if len(local_locs) != len(sig.locals):
            raise st.EngineError(
                f"call to {name} with {len(local_locs)} local cells, "
                f"expected {len(sig.locals)}")
        base.update(zip((l for _, _, l in sig.locals), local_locs))
    r = Renamer(base, keep, fresh_loc, fresh_pid, on_alloc)
    return r.trace_set(I.traces(name))
