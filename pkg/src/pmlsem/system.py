"""System phase: declaration denotations with the End step, the bounded
program fixpoint, interleaving with rendezvous pairing, and state
propagation.

Interleaving works over pending traces tagged with a thread id.  The
flat-set partition collapses identical first steps of distinct processes
(two processes both about to run the End decrement look like one), which
miscounts effects on shared cells; the tag keeps process identity while
agreeing with the untagged partition everywhere steps differ.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import cfg as cfgmod
from . import denote as dn
from . import domain as dm
from . import state as st
from . import syntax as syn
from .state import Env, EngineError, Loc, LocAllocator, PidTok, SystemState


@dataclass(frozen=True)
class ProcInstance:
    pid: int
    proctype: str
    var_locs: tuple  # (name, Loc), parameters then locals
    pid_loc: Loc


@dataclass
class ProgramContext:
    """Concrete global footprint shared by the denotational pipeline and the
    operational oracle: environments, initial state, per-process CFGs."""

    program: syn.Program
    alloc: LocAllocator
    env_g: Env
    sigma0: SystemState
    cfgs: dict
    sigs: list
    nrpr_loc: Loc
    hs_loc: Loc
    init_pid_loc: Loc
    chan_names: dict  # cid -> name
    globals_vars: tuple  # (name, Loc)
    mtype_first: int
    registry: dict = field(default_factory=dict)  # pid cell Loc -> ProcInstance

    def keep_locs(self) -> set:
        out = {self.nrpr_loc, self.hs_loc}
        out |= {loc for _, loc in self.globals_vars}
        return out

    def sig(self, name: str) -> dm.ProcSig:
        for s in self.sigs:
            if s.name == name:
                return s
        raise KeyError(name)

    def proc_env(self, sig: dm.ProcSig) -> Env:
        pairs = dict(zip((n for n, _ in sig.params), sig.formal_locs))
        pairs.update({n: loc for n, _, loc in sig.locals})
        pairs["_pid"] = sig.pid_loc
        return self.env_g.bind_all(pairs)


PREDEFINED = ("_nr_pr", "_pid", "handshake")


def build_context(program: syn.Program) -> ProgramContext:
    """Allocate the global footprint of a normalized program: predefined
    variables, globals in declaration order, channel instances, and the
    most-general signatures of every proctype plus init."""
    if program.init is None:
        raise EngineError("missing init after normalization")
    names = [p.name for p in program.proctypes]
    if len(names) != len(set(names)):
        raise EngineError("duplicate proctype names")
    if "init" in names:
        raise EngineError("'init' cannot also be a proctype name")

    alloc = LocAllocator()
    nrpr_loc = alloc.fresh("_nr_pr")
    hs_loc = alloc.fresh("handshake")
    init_pid_loc = alloc.fresh("_pid@init")
    env = Env.make({"_nr_pr": nrpr_loc, "handshake": hs_loc})
    mem = {nrpr_loc: st.scalar("int", 1), hs_loc: st.scalar("int", -1),
           init_pid_loc: st.scalar("int", 0)}
    channels: dict = {}
    chan_names: dict = {}
    globals_vars: list = []
    mtypes = program.mtype_table()
    mtype_first = min(mtypes.values()) if mtypes else 0

    for g in program.globals:
        if isinstance(g, syn.MtypeDecl):
            continue
        if isinstance(g, syn.ChanDecl):
            cid = len(channels)
            channels[cid] = st.ChannelInstance(g.capacity, g.field_types)
            env = env.bind(g.name, cid)
            chan_names[cid] = g.name
            continue
        loc = alloc.fresh(g.name)
        partial = SystemState.make(mem, channels)
        if g.array_len is not None:
            if g.init is None:
                val = st.default_value(g.type, g.array_len, mtype_first or 1)
            elif isinstance(g.init, tuple):
                if len(g.init) != g.array_len:
                    raise EngineError(
                        f"initializer for '{g.name}' has {len(g.init)} elements, "
                        f"declared length is {g.array_len}")
                val = st.array_value(
                    g.type, [dn.eval_r(e, env, partial) for e in g.init])
            else:
                v = dn.eval_r(g.init, env, partial)
                val = st.array_value(g.type, [v] * g.array_len)
        else:
            if g.init is None:
                val = st.default_value(g.type, mtype_first=mtype_first or 1)
            else:
                init_expr = g.init if not isinstance(g.init, tuple) else g.init[0]
                val = st.scalar(g.type, dn.eval_r(init_expr, env, partial))
        mem[loc] = val
        env = env.bind(g.name, loc)
        globals_vars.append((g.name, loc))

    chan_table = program.chan_table()
    cfgs = {}
    sigs = []
    decls = [(p.name, p.params, p.body) for p in program.proctypes]
    decls.append(("init", (), program.init.body))
    for name, params, body in decls:
        g = cfgmod.build_cfg(body, chan_table)
        cfgs[name] = g
        locs = dn.collect_locals(body)
        sigs.append(dm.ProcSig(
            name, tuple(params),
            tuple(Loc(("f", name, "f", i)) for i in range(len(params))),
            tuple((n, k, Loc(("f", name, "v", i)))
                  for i, (n, k) in enumerate(locs)),
            Loc(("f", name, "p")), g.entry))

    return ProgramContext(
        program, alloc, env, SystemState.make(mem, channels), cfgs, sigs,
        nrpr_loc, hs_loc, init_pid_loc, chan_names, tuple(globals_vars),
        mtype_first)


# ---------------------------------------------------------------------------
# Declaration denotation and the program fixpoint

def end_trace(ctx: ProgramContext) -> dm.Trace:
    return dm.Trace((dm.Trans(dm.TrueG(), dm.BumpNrPr(ctx.nrpr_loc, -1)),), dm.FINAL)


def denote_declarations(ctx: ProgramContext, I: dm.Interpretation, depth: int,
                        prune: bool = False) -> dm.Interpretation:
    """One application of the declaration transformer: every proctype (and
    init) maps to its entry-point denotation followed by End."""
    end = end_trace(ctx)
    keep = ctx.keep_locs()
    entries = []
    for sig in ctx.sigs:
        dctx = dn.DenoteCtx(ctx.program, sig.name, ctx.cfgs[sig.name],
                            ctx.proc_env(sig), I, keep, ctx.hs_loc, ctx.nrpr_loc,
                            ctx.mtype_first)
        uni = universe_for_sig(ctx, sig) if prune else None
        eta = dn.process_denotation(dctx, depth, uni)
        traces = frozenset(
            dm.concat(t, end) if t.terminator == dm.OPEN else t
            for t in eta[sig.entry])
        entries.append((sig.name, sig, traces))
    return dm.Interpretation(tuple(sorted(entries)))


def program_fixpoint(ctx: ProgramContext, k: int, depth: int,
                     prune: bool = False) -> dm.Interpretation:
    """k-fold Kleene iterate of the declaration transformer from the bottom
    interpretation; k bounds how deep spawn payloads are unfolded."""
    I = dm.Interpretation.bottom(ctx.sigs)
    for _ in range(k):
        I = denote_declarations(ctx, I, depth, prune)
    return I


def materialize_init(ctx: ProgramContext, I: dm.Interpretation) -> frozenset:
    """Instantiate init's most-general denotation at concrete locations.

    Assigns pids in spawn order starting at 1 (init is 0) and fills the
    process registry; init's own locals get their defaults written into
    the initial state."""
    sig = ctx.sig("init")
    pid_counter = itertools.count(1)

    def on_alloc(u: dm.SpawnAlloc):
        pid = u.pid_value
        if isinstance(pid, PidTok):
            return
        var_locs = tuple(zip(u.meta.param_names, (l for l, _, _ in u.assigns)))
        var_locs += tuple(zip(u.meta.local_names, (l for l, _ in u.defaults)))
        ctx.registry[u.pid_loc] = ProcInstance(pid, u.meta.proctype, var_locs, u.pid_loc)

    renamer = dm.Renamer(
        {sig.pid_loc: ctx.init_pid_loc}, ctx.keep_locs(),
        fresh_loc=lambda l: ctx.alloc.fresh(".".join(map(str, l.token))),
        fresh_pid=lambda p: next(pid_counter),
        on_alloc=on_alloc)
    traces = renamer.trace_set(I.traces("init"))

    mem = ctx.sigma0.mem_dict()
    init_vars = []
    for name, kind, ploc in sig.locals:
        cloc = renamer.map.get(ploc)
        if cloc is None:
            cloc = ctx.alloc.fresh(f"{name}@init")
        mem[cloc] = st.default_value(kind, mtype_first=ctx.mtype_first)
        init_vars.append((name, cloc))
    ctx.sigma0 = SystemState.make(mem, ctx.sigma0.chan_dict())
    ctx.registry[ctx.init_pid_loc] = ProcInstance(
        0, "init", tuple(init_vars), ctx.init_pid_loc)
    return traces


# ---------------------------------------------------------------------------
# Rendezvous pairing

def wantsynch(a: dm.CondStep, b: dm.CondStep) -> bool:
    if not (isinstance(a, dm.Trans) and isinstance(b, dm.Trans)):
        raise EngineError("wantsynch applies to conditional transitions")
    return (a.sync is not None and b.sync is not None
            and a.sync[0] == "send" and b.sync[0] == "recv"
            and a.sync[1] == b.sync[1])


def synch(a: dm.Trans, b: dm.Trans) -> dm.Trans:
    """Single conditional transition passing the message: the second guard
    is checked in the state the first transformer produces, and the effects
    compose."""
    if not (isinstance(a, dm.Trans) and isinstance(b, dm.Trans)):
        raise EngineError("synch applies to conditional transitions")
    return dm.Trans(
        dm.and_guard([a.guard, dm.AfterG(a.update, b.guard)]),
        dm.seq_update([a.update, b.update]))


# ---------------------------------------------------------------------------
# Interleaving over tagged pending traces

@dataclass
class _Resolution:
    spawn_succ: list  # pending successors, no step emitted
    step_drivers: list  # (step, pending successor)
    parked_unknown: bool
    parked_sync: tuple  # unpaired rendezvous steps left waiting
    all_final: bool


def _tail(t: dm.Trace) -> dm.Trace:
    return dm.Trace(t.steps[1:], t.terminator, t.depth)


class Interleaver:
    """Shared class machinery for materialized interleaving and the lazy
    propagation walk.  With literal=True lone rendezvous steps interleave
    standalone, the word-for-word reading of the combination rule."""

    def __init__(self, literal: bool = False):
        self.literal = literal
        self._cache: dict = {}

    def resolve(self, pending: frozenset) -> _Resolution:
        if pending in self._cache:
            return self._cache[pending]
        trans_classes: dict = {}
        spawn_classes: dict = {}
        parked_unknown = False
        finals = 0
        for tid, tr in pending:
            if not tr.steps:
                if tr.terminator == dm.FINAL:
                    finals += 1
                else:
                    parked_unknown = True
                continue
            head = tr.steps[0]
            if isinstance(head, dm.Spawn):
                spawn_classes.setdefault((tid, head), []).append(tr)
            else:
                trans_classes.setdefault((tid, head), []).append(tr)

        def successor(consumed: list) -> frozenset:
            # consumed: list of ((tid, head), members, extra_threads).
            # Driving a step commits its thread to that alternative: every
            # other pending trace of the thread is a future inconsistent
            # with the step taken, so it goes away.  (The flat partition
            # without this would let one process run two rival branches.)
            tids = {tid for (tid, _h), _m, _e in consumed}
            out = {(t, tr) for t, tr in pending if t not in tids}
            for (tid, _head), members, extra in consumed:
                out |= {(tid, _tail(tr)) for tr in members}
                out |= set(extra)
            return frozenset(out)

        spawn_succ = []
        for (tid, head), members in sorted(
                spawn_classes.items(), key=lambda kv: (kv[0][0], dm.render_step(kv[0][1]))):
            if isinstance(head.pid, PidTok):
                raise EngineError("spawn with unresolved pid reached interleaving")
            extra = {(head.pid, p) for p in head.traces if not p.is_epsilon()}
            if not extra:
                extra = {(head.pid, dm.Trace((), dm.TRUNCATED))}
            spawn_succ.append(successor([((tid, head), members, extra)]))

        step_drivers = []
        plain = []
        sync_cls = []
        for key, members in trans_classes.items():
            (sync_cls if key[1].sync is not None else plain).append((key, members))
        order = lambda kv: (kv[0][0], dm.render_step(kv[0][1]))
        for key, members in sorted(plain, key=order):
            step_drivers.append((key[1], successor([(key, members, set())])))
        paired: set = set()
        for (k1, m1), (k2, m2) in itertools.permutations(sorted(sync_cls, key=order), 2):
            if k1[0] == k2[0]:
                continue  # a process cannot shake hands with itself
            if wantsynch(k1[1], k2[1]):
                paired.add(k1)
                paired.add(k2)
                succ = successor([(k1, m1, set()), (k2, m2, set())])
                step_drivers.append((synch(k1[1], k2[1]), succ))
                step_drivers.append((synch(k2[1], k1[1]), succ))
        if self.literal:
            for key, members in sorted(sync_cls, key=order):
                step_drivers.append((key[1], successor([(key, members, set())])))
            parked = ()
        else:
            parked = tuple(k[1] for k in sorted(
                (k for k, _ in sync_cls if k not in paired),
                key=lambda k: (k[0], dm.render_step(k[1]))))
        res = _Resolution(spawn_succ, step_drivers, parked_unknown, parked,
                          all_final=(finals > 0))
        self._cache[pending] = res
        return res


def interlv(S: frozenset, fuel: int, literal: bool = False,
            max_traces: Optional[int] = None) -> frozenset:
    """Materialized interleaving of a trace set, breadth-bounded by fuel.

    Process spawns dissolve into fresh pending threads; rendezvous steps
    combine pairwise (both orders).  Interleavings that reach a state where
    only unpaired rendezvous steps remain are dropped: the literal rule
    would emit a step whose guard no reachable state satisfies, so the
    propagation phase would discard them anyway.
    """
    inter = Interleaver(literal)
    memo: dict = {}

    def rec(pending: frozenset, budget: int) -> frozenset:
        key = (pending, budget)
        if key in memo:
            return memo[key]
        if budget <= 0:
            out = frozenset({dm.Trace((), dm.TRUNCATED)})
            memo[key] = out
            return out
        res = inter.resolve(pending)
        out: set = set()
        for succ in res.spawn_succ:
            out |= rec(succ, budget)
        for step, succ in res.step_drivers:
            for t in rec(succ, budget - 1):
                out.add(dm.prepend((step,), t))
        if not res.spawn_succ and not res.step_drivers:
            if res.parked_unknown:
                out.add(dm.Trace((), dm.TRUNCATED))
            elif res.parked_sync:
                pass  # blocked rendezvous: the branch vanishes
            else:
                out.add(dm.FINAL_TRACE)
        if max_traces is not None and len(out) > max_traces:
            raise EngineError(
                f"interleaving exceeded {max_traces} traces; lower fuel or raise the cap")
        result = frozenset(out)
        memo[key] = result
        return result

    root = frozenset((0, t) for t in S if not t.is_epsilon())
    if not root:
        return dm.bottom_set()
    out = rec(root, fuel)
    return out if out else dm.bottom_set()


# ---------------------------------------------------------------------------
# Propagation

@dataclass(frozen=True)
class StateSeq:
    states: tuple
    termination: str  # "completed" | "cut"


@dataclass(frozen=True)
class DiscardDiagnostic:
    prefix: tuple  # states already produced when the guard failed
    guard: str
    guard_resolved: str
    reason: str  # "guard_false" | "sync_blocked"


def propagate(sigma: SystemState, S: frozenset,
              max_steps: int = 64) -> tuple:
    """Feed a concrete state through an interleaved (spawn-free) trace set.

    Returns (sequences, diagnostics).  Classes whose guard fails under the
    current state are discarded and reported; a trace set exhausted by
    truncation ends its sequence as cut."""
    seqs: set = set()
    diags: list = []
    seen_diag: set = set()

    def rec(sigma: SystemState, S: frozenset, prefix: tuple, budget: int):
        classes: dict = {}
        has_final = False
        has_trunc = False
        for t in S:
            if not t.steps:
                if t.terminator == dm.FINAL:
                    has_final = True
                else:
                    has_trunc = True
                continue
            head = t.steps[0]
            if isinstance(head, dm.Spawn):
                raise EngineError("propagate requires spawn-free traces")
            classes.setdefault(head, []).append(_tail(t))
        if has_final:
            seqs.add(StateSeq(prefix, "completed"))
        if has_trunc or (classes and budget <= 0):
            seqs.add(StateSeq(prefix, "cut"))
        if budget <= 0:
            return
        for head in sorted(classes, key=dm.render_step):
            tails = frozenset(classes[head])
            if dm.guard_eval(head.guard, sigma):
                nxt = dm.update_eval(head.update, sigma)
                rec(nxt, tails, prefix + (nxt,), budget - 1)
            else:
                key = (prefix, dm.render_guard(head.guard))
                if key not in seen_diag:
                    seen_diag.add(key)
                    diags.append(DiscardDiagnostic(
                        prefix, dm.render_guard(head.guard),
                        dm.render_guard_resolved(head.guard, sigma), "guard_false"))

    rec(sigma, S, (), max_steps)
    return frozenset(seqs), tuple(diags)


@dataclass
class RunOutput:
    initial: SystemState
    sequences: frozenset  # of StateSeq
    diagnostics: tuple
    context: ProgramContext
    hit_sequence_cap: bool = False


def propagate_interleaving(ctx: ProgramContext, S0: frozenset, fuel: int,
                           literal: bool = False,
                           max_sequences: Optional[int] = None,
                           max_diagnostics: int = 100000) -> RunOutput:
    """Fused interleaving and propagation: interleaving choices are resolved
    lazily and only pursued where the guards hold, which is what makes the
    exponential trace set tractable.  Equal to propagate(interlv(...)) on
    every branch the state actually reaches."""
    inter = Interleaver(literal)
    seqs: set = set()
    diags: list = []
    seen_diag: set = set()
    capped = [False]

    def full():
        if max_sequences is not None and len(seqs) >= max_sequences:
            capped[0] = True
            return True
        return False

    def rec(pending: frozenset, sigma: SystemState, prefix: tuple, budget: int):
        if full():
            return
        res = inter.resolve(pending)
        has_drivers = bool(res.spawn_succ or res.step_drivers)
        if not has_drivers:
            if res.parked_unknown:
                seqs.add(StateSeq(prefix, "cut"))
            elif res.parked_sync:
                for step in res.parked_sync:
                    _diag(prefix, step.guard, sigma, "sync_blocked")
            else:
                seqs.add(StateSeq(prefix, "completed"))
            return
        if budget <= 0:
            seqs.add(StateSeq(prefix, "cut"))
            return
        for succ in res.spawn_succ:
            rec(succ, sigma, prefix, budget)
        for step, succ in res.step_drivers:
            if full():
                return
            if dm.guard_eval(step.guard, sigma):
                nxt = dm.update_eval(step.update, sigma)
                rec(succ, nxt, prefix + (nxt,), budget - 1)
            else:
                _diag(prefix, step.guard, sigma, "guard_false")

    def _diag(prefix, guard, sigma, reason):
        if len(diags) >= max_diagnostics:
            return
        key = (prefix, dm.render_guard(guard), reason)
        if key not in seen_diag:
            seen_diag.add(key)
            diags.append(DiscardDiagnostic(
                prefix, dm.render_guard(guard),
                dm.render_guard_resolved(guard, sigma), reason))

    root = frozenset((0, t) for t in S0 if not t.is_epsilon())
    if root:
        rec(root, ctx.sigma0, (), fuel)
    return RunOutput(ctx.sigma0, frozenset(seqs), tuple(diags), ctx, capped[0])


def sem_prog(program: syn.Program, k: int = 4, depth: int = 16, fuel: int = 32,
             literal: bool = False, prune_unsat: bool = False,
             max_sequences: Optional[int] = None) -> RunOutput:
    """Whole-program semantics: fixpoint, then interleaving of init's
    instantiated denotation, then propagation of the initial state."""
    ctx = build_context(program)
    I = program_fixpoint(ctx, k, depth, prune_unsat)
    S0 = materialize_init(ctx, I)
    return propagate_interleaving(ctx, S0, fuel, literal, max_sequences)


def global_footprint(ctx: ProgramContext) -> dict:
    locs = {}
    for g in ctx.program.globals:
        if isinstance(g, syn.VarDecl):
            loc = dict(ctx.globals_vars)[g.name]
            if g.array_len is not None:
                locs[loc] = ("array", g.type, g.array_len)
            else:
                locs[loc] = g.type
    return locs


def universe_for_sig(ctx: ProgramContext, sig: dm.ProcSig, byte_cap: int = 4,
                     cap: int = 4096) -> Optional[dm.Universe]:
    """Footprint for satisfiability pruning while denoting one proctype:
    the declared globals plus the process's own formals, locals, and pid
    cell (placeholder locations), plus channel contents.

    Byte and int cells enter with a truncated value range, so pruning can
    in principle drop a branch whose guard only holds at larger values;
    pruning is therefore optional and cosmetic.  Oversized footprints
    disable pruning instead of failing."""
    locs = global_footprint(ctx)
    for loc, (_, kind) in zip(sig.formal_locs, sig.params):
        locs[loc] = kind
    for _, kind, loc in sig.locals:
        locs[loc] = kind
    locs[sig.pid_loc] = "byte"
    chans = ctx.sigma0.chan_dict()
    uni = dm.Universe.build(ctx.sigma0, locs, chans, byte_cap=byte_cap, cap=cap)
    if uni.size() > cap:
        return None
    return uni


# ---------------------------------------------------------------------------
# Canonical state rendering

def render_value(v: st.Value):
    if v.kind == "array":
        return list(v.payload)
    if v.kind == "chan":
        return f"chan#{v.payload}"
    return v.payload


def render_state(ctx: ProgramContext, s: SystemState) -> dict:
    """Name-keyed canonical form: globals, per-pid locals, channel queues,
    and the active-process counter.  Handshake is checked by invariant and
    kept out of the observable record."""
    if s.is_bottom:
        return {"bottom": True}
    out: dict = {"globals": {}, "procs": {}, "channels": {}, "nr_pr": None}
    for name, loc in ctx.globals_vars:
        v = st.read(s, loc)
        if v is not None:
            out["globals"][name] = render_value(v)
    for inst in sorted(ctx.registry.values(), key=lambda i: (i.pid, i.pid_loc.token)):
        if st.read(s, inst.pid_loc) is None:
            continue  # this instance does not exist in this state
        vars_out = {}
        for name, loc in inst.var_locs:
            v = st.read(s, loc)
            if v is not None:
                vars_out[name] = render_value(v)
        out["procs"][str(inst.pid)] = {"proctype": inst.proctype, "vars": vars_out}
    for cid, inst in s.channels:
        name = ctx.chan_names.get(cid, f"chan#{cid}")
        out["channels"][name] = [list(m) for m in inst.queue]
    nr = st.read(s, ctx.nrpr_loc)
    out["nr_pr"] = nr.payload if nr is not None else None
    return out


def state_key(ctx: ProgramContext, s: SystemState) -> tuple:
    """Hashable canonical form, for sequence-set comparison."""
    d = render_state(ctx, s)
    if d.get("bottom"):
        return ("bottom",)
    return (
        tuple(sorted((k, _freeze(v)) for k, v in d["globals"].items())),
        tuple(sorted((p, d["procs"][p]["proctype"],
                      tuple(sorted((k, _freeze(v))
                                   for k, v in d["procs"][p]["vars"].items())))
                     for p in d["procs"])),
        tuple(sorted((c, tuple(tuple(m) for m in q))
                     for c, q in d["channels"].items())),
        d["nr_pr"],
    )


def _freeze(v):
    return tuple(v) if isinstance(v, list) else v


def handshake_value(ctx: ProgramContext, s: SystemState) -> int:
    v = st.read(s, ctx.hs_loc)
    return v.payload if v is not None else -1
