"""Process-level denotations: expression evaluation, conditional steps for
basic statements, the per-point immediate-consequences operator, the
depth-bounded fixpoint, and the atomic-region expansion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from . import cfg as cfgmod
from . import domain as dm
from . import state as st
from . import syntax as syn
from .state import BOTTOM, BottomSignal, Env, EngineError, Loc, PidTok, SystemState


class DenoteError(EngineError):
    pass


# ---------------------------------------------------------------------------
# Expression evaluation

def _cdiv(a: int, b: int) -> int:
    if b == 0:
        raise BottomSignal("division by zero")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def _cmod(a: int, b: int) -> int:
    if b == 0:
        raise BottomSignal("modulo by zero")
    return a - _cdiv(a, b) * b


def eval_r(e, env: Env, s: SystemState) -> int:
    """Value of an r-expression; booleans are 0/1 bits.

    Raises BottomSignal where the paper's semantics reaches the
    inconsistent state (bad index, division by zero, reading an unset
    cell); unbound identifiers are hard errors.
    """
    if isinstance(e, syn.Num):
        return e.value
    if isinstance(e, syn.MtypeLit):
        return e.value
    if isinstance(e, syn.VarRead):
        v = st.read(s, env.loc(e.name))
        if v is None:
            raise BottomSignal(f"read of unset location for '{e.name}'")
        if v.kind == "array":
            raise EngineError(f"array '{e.name}' used without an index")
        if isinstance(v.payload, PidTok):
            raise BottomSignal("arithmetic over an unresolved pid placeholder")
        return v.payload
    if isinstance(e, syn.ArrayRead):
        v = st.read(s, env.loc(e.name))
        if v is None:
            raise BottomSignal(f"read of unset location for '{e.name}'")
        if v.kind != "array":
            raise EngineError(f"'{e.name}' is not an array")
        idx = eval_r(e.index, env, s)
        if not 0 <= idx < len(v.payload):
            raise BottomSignal(f"index {idx} out of bounds for '{e.name}'")
        elem = v.payload[idx]
        if isinstance(elem, PidTok):
            raise BottomSignal("arithmetic over an unresolved pid placeholder")
        return elem
    if isinstance(e, syn.Unary):
        if e.op == "!":
            return 0 if eval_r(e.operand, env, s) != 0 else 1
        return -eval_r(e.operand, env, s)
    if isinstance(e, syn.Binary):
        op = e.op
        if op == "&&":
            return 1 if eval_r(e.left, env, s) != 0 and eval_r(e.right, env, s) != 0 else 0
        if op == "||":
            return 1 if eval_r(e.left, env, s) != 0 or eval_r(e.right, env, s) != 0 else 0
        a = eval_r(e.left, env, s)
        b = eval_r(e.right, env, s)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            return _cdiv(a, b)
        if op == "%":
            return _cmod(a, b)
        if op == "==":
            return 1 if a == b else 0
        if op == "!=":
            return 1 if a != b else 0
        if op == "<":
            return 1 if a < b else 0
        if op == "<=":
            return 1 if a <= b else 0
        if op == ">":
            return 1 if a > b else 0
        if op == ">=":
            return 1 if a >= b else 0
    raise TypeError(e)


def eval_l(e, env: Env, s: SystemState) -> Callable:
    """Modifier applicator for the location an l-expression names.

    The returned function takes a value-updating function and produces the
    state with that cell rewritten; array targets rewrite one element of
    the array value in place.  Out-of-range indexes yield the bottom state.
    """
    if isinstance(e, syn.LVar):
        loc = env.loc(e.name)
        old = st.read(s, loc)
        if old is None:
            return lambda f: BOTTOM
        if old.kind == "array":
            raise EngineError(f"array '{e.name}' assigned without an index")

        def apply_var(f, loc=loc, old=old):
            return st.update(s, loc, st.scalar(old.kind, f(old.payload)))

        return apply_var
    if isinstance(e, syn.LArr):
        loc = env.loc(e.name)
        old = st.read(s, loc)
        if old is None:
            return lambda f: BOTTOM
        if old.kind != "array":
            raise EngineError(f"'{e.name}' is not an array")
        idx = eval_r(e.index, env, s)
        if not 0 <= idx < len(old.payload):
            return lambda f: BOTTOM

        def apply_elem(f, loc=loc, old=old, idx=idx):
            elems = list(old.payload)
            elems[idx] = st.wrap_scalar(old.elem_kind, f(elems[idx]))
            return st.update(s, loc, st.Value("array", tuple(elems), old.elem_kind))

        return apply_elem
    raise TypeError(e)


# ---------------------------------------------------------------------------
# Statement denotation

def collect_locals(body: tuple) -> tuple:
    """Declared locals of a body in order, as (name, kind) pairs."""
    out: list = []
    seen: set = set()

    def walk(stmts):
        for ls in stmts:
            s = ls.stmt
            if isinstance(s, syn.DeclInit):
                if s.name in seen:
                    raise DenoteError(f"duplicate local declaration '{s.name}'")
                seen.add(s.name)
                out.append((s.name, s.type))
            elif isinstance(s, syn.IfFi):
                for b in s.branches:
                    walk(b.stmts)
                if s.else_branch:
                    walk(s.else_branch.stmts)
            elif isinstance(s, syn.Atomic):
                walk(s.body)

    walk(body)
    return tuple(out)


@dataclass(frozen=True)
class RunSite:
    """Per-edge placeholder block for a run statement: the locations the
    allocation writes and the pid placeholder, fixed once per edge so the
    fixpoint iterates stay structurally stable."""

    prefix: tuple
    formal_locs: tuple
    formal_kinds: tuple
    local_defaults: tuple  # (Loc, st.Value)
    pid_loc: Loc
    pid_tok: PidTok
    meta: dm.SpawnMeta


class DenoteCtx:
    """Everything statement denotation needs about the enclosing process."""

    def __init__(self, program: syn.Program, proc_name: str, cfg: cfgmod.CFG,
                 env: Env, interp: dm.Interpretation, keep: set,
                 hs_loc: Loc, nrpr_loc: Loc, mtype_first: int = 1):
        self.program = program
        self.proc_name = proc_name
        self.cfg = cfg
        self.env = env
        self.interp = interp
        self.keep = keep
        self.hs_loc = hs_loc
        self.nrpr_loc = nrpr_loc
        self.mtype_first = mtype_first
        self._sites: dict = {}

    def site_for(self, eid: int, run: syn.Run) -> RunSite:
        if eid in self._sites:
            return self._sites[eid]
        try:
            callee = self.program.proctype(run.proc)
        except KeyError:
            raise DenoteError(f"run of unknown proctype '{run.proc}'")
        if len(run.args) != len(callee.params):
            raise DenoteError(
                f"run {run.proc} with {len(run.args)} actuals, "
                f"declared with {len(callee.params)} parameters")
        prefix = ("r", self.proc_name, eid)
        formal_locs = tuple(Loc(prefix + ("f", i)) for i in range(len(callee.params)))
        formal_kinds = tuple(kind for _, kind in callee.params)
        locs = collect_locals(callee.body)
        local_defaults = tuple(
            (Loc(prefix + ("v", i)), st.default_value(kind, mtype_first=self.mtype_first))
            for i, (_, kind) in enumerate(locs))
        site = RunSite(
            prefix, formal_locs, formal_kinds, local_defaults,
            Loc(prefix + ("p",)), PidTok(prefix),
            dm.SpawnMeta(run.proc, tuple(n for n, _ in callee.params),
                         tuple(n for n, _ in locs)))
        self._sites[eid] = site
        return site


def denote_stmt(s: syn.Stmt, ctx: DenoteCtx, trans_marked: bool,
                spawn_marked: bool, eid: int = -1) -> dm.Trace:
    """Conditional trace of one basic statement.

    trans_marked carries the atomic marker onto the conditional transition;
    spawn_marked onto the process spawn of a run (the two differ for the
    first statement of a block)."""
    env = ctx.env
    if isinstance(s, syn.Skip):
        step = dm.Trans(dm.TrueG(), dm.IdU(), trans_marked)
    elif isinstance(s, syn.ExprStmt):
        step = dm.Trans(dm.RExprGuard(s.expr, env), dm.IdU(), trans_marked)
    elif isinstance(s, syn.Assign):
        step = dm.Trans(dm.TrueG(), dm.AssignLoc(s.target, s.value, env), trans_marked)
    elif isinstance(s, syn.DeclInit):
        step = dm.Trans(dm.TrueG(),
                        dm.AssignLoc(syn.LVar(s.name), s.init, env), trans_marked)
    elif isinstance(s, syn.Send):
        cid = env.chan(s.chan)
        if s.sync:
            step = dm.Trans(
                dm.ChanDefined(cid),
                dm.seq_update([dm.ChanPush(cid, s.args, env),
                               dm.SetHandshake(ctx.hs_loc, cid)]),
                trans_marked, sync=("send", cid))
        else:
            step = dm.Trans(
                dm.and_guard([dm.ChanDefined(cid), dm.NFullG(cid)]),
                dm.ChanPush(cid, s.args, env), trans_marked)
    elif isinstance(s, syn.Receive):
        cid = env.chan(s.chan)
        if s.sync:
            step = dm.Trans(
                dm.and_guard([dm.ChanDefined(cid), dm.HandshakeIs(ctx.hs_loc, cid)]),
                dm.seq_update([dm.ChanPop(cid, s.targets, env),
                               dm.SetHandshake(ctx.hs_loc, -1)]),
                trans_marked, sync=("recv", cid))
        else:
            step = dm.Trans(
                dm.and_guard([dm.ChanDefined(cid), dm.NEmptyG(cid)]),
                dm.ChanPop(cid, s.targets, env), trans_marked)
    elif isinstance(s, syn.Run):
        site = ctx.site_for(eid, s)
        assigns = tuple(
            (loc, kind, arg)
            for loc, kind, arg in zip(site.formal_locs, site.formal_kinds, s.args))
        alloc = dm.SpawnAlloc(assigns, site.local_defaults, site.pid_loc,
                              site.pid_tok, env, site.meta)
        payload = dm.interp_apply(
            ctx.interp, s.proc, site.formal_locs, ctx.keep,
            fresh_loc=lambda l: Loc(site.prefix + l.token),
            fresh_pid=lambda p: PidTok(site.prefix + p.token),
            pid_loc=site.pid_loc,
            local_locs=tuple(l for l, _ in site.local_defaults))
        return dm.Trace((
            dm.Trans(dm.TrueG(),
                     dm.seq_update([alloc, dm.BumpNrPr(ctx.nrpr_loc, +1)]),
                     trans_marked),
            dm.Spawn(payload, spawn_marked, callee=s.proc, pid=site.pid_tok)))
    else:
        raise DenoteError(f"not a basic statement: {type(s).__name__}")
    return dm.Trace((step,))


def denote_edge(e: cfgmod.Edge, ctx: DenoteCtx, eid: int) -> dm.Trace:
    trans_marked = e.atomic_mark == cfgmod.INSIDE
    spawn_marked = e.in_atomic
    return denote_stmt(e.stmt, ctx, trans_marked, spawn_marked, eid)


# ---------------------------------------------------------------------------
# The immediate-consequences operator and the bounded fixpoint

def add_else(E: frozenset, T: frozenset, marked: bool = False) -> frozenset:
    """Else construction: one step guarded by the negation of every distinct
    first guard of the sibling branches, continuing with E.  Taking else is
    an execution step of its own, like the engine's."""
    firsts = []
    for t in T:
        if not t.steps or not isinstance(t.steps[0], dm.Trans):
            raise DenoteError("else sibling trace does not start with a transition")
        g = t.steps[0].guard
        if g not in firsts:
            firsts.append(g)
    neg = dm.and_guard([dm.NotG(g) for g in firsts])
    gate = dm.Trans(neg, dm.IdU(), marked)
    return dm.lub([T, frozenset(dm.prepend((gate,), e) for e in E)])


def tp_step(ctx: DenoteCtx, eta: dict) -> dict:
    """One backward step of behavior from every process point."""
    out = {}
    for l in ctx.cfg.points:
        edges = ctx.cfg.out_edges(l)
        if not edges:
            out[l] = frozenset({dm.Trace((), dm.OPEN, end_point=l)})
            continue
        normal = []
        else_part = None
        for e in edges:
            if e.is_else:
                # the synthetic else arc denotes the negation gate itself
                else_part = (eta[e.dst], e.atomic_mark == cfgmod.INSIDE)
                continue
            eid = ctx.cfg.edge_id(e)
            normal.append(frozenset(
                dm.prepend(denote_edge(e, ctx, eid).steps, cont)
                for cont in eta[e.dst]))
        if else_part is not None:
            E, m = else_part
            out[l] = add_else(E, dm.lub(normal), marked=m)
        else:
            out[l] = dm.lub(normal)
    return out


def bottom_eta(cfg: cfgmod.CFG) -> dict:
    return {l: frozenset({dm.Trace((), dm.OPEN, end_point=l)}) for l in cfg.points}


def finalize_eta(cfg: cfgmod.CFG, eta: dict, depth: int) -> dict:
    """Replace construction bookkeeping with terminators: a trace stopped at
    a point with outgoing edges is a truncated prefix, one at a dead end
    genuinely ended."""
    out = {}
    has_out = {l: bool(cfg.out_edges(l)) for l in cfg.points}
    for l, traces in eta.items():
        fixed = set()
        for t in traces:
            if t.end_point is not None and has_out[t.end_point]:
                fixed.add(dm.Trace(t.steps, dm.TRUNCATED, depth))
            else:
                fixed.add(dm.Trace(t.steps, dm.OPEN))
        out[l] = frozenset(fixed)
    return out


# ---------------------------------------------------------------------------
# Atomic expansion

def _first_marked_trans(steps: tuple) -> int:
    for i, s in enumerate(steps):
        if isinstance(s, dm.Trans) and s.marked:
            return i
    return -1


def _clear_spawn_marks(steps: tuple) -> tuple:
    return tuple(
        dm.Spawn(s.traces, False, s.callee, s.pid)
        if isinstance(s, dm.Spawn) and s.marked else s
        for s in steps)


def _compose_sync(a, b):
    return b if b is not None else a


def _satisfiable(g: dm.Guard, universe: Optional[dm.Universe]) -> bool:
    if universe is None:
        return True
    return any(dm.guard_eval(g, s) for s in universe.states())


def atomics(S: frozenset, prune_universe: Optional[dm.Universe] = None) -> frozenset:
    """Expand atomic markers into merged steps plus suspension alternatives.

    A marked transition is composed with the nearest preceding transition
    (spawn runs ride along with it); the alternative where the marked step
    suspends keeps the first effect and continues unmarked.  With a prune
    universe, composed branches whose guard cannot hold anywhere are
    dropped, which keeps run-run compactions to their single real shape.
    """
    out: set = set()
    for t in S:
        out |= _atomics_one(t, prune_universe)
    return frozenset(out) if out else dm.bottom_set()


def _atomics_one(t: dm.Trace, universe: Optional[dm.Universe]) -> set:
    i = _first_marked_trans(t.steps)
    if i < 0:
        return {dm.Trace(_clear_spawn_marks(t.steps), t.terminator, t.depth, t.end_point)}
    # walk back over the spawn run to the transition the marked step composes with
    j = i - 1
    while j >= 0 and isinstance(t.steps[j], dm.Spawn):
        j -= 1
    if j < 0:
        raise DenoteError(
            "marked step with no preceding transition; CFG marking forbids this")
    phi1 = t.steps[j]
    assert isinstance(phi1, dm.Trans)
    rho1 = _clear_spawn_marks(t.steps[j + 1:i])
    phi2 = t.steps[i]
    k = i + 1
    while k < len(t.steps) and isinstance(t.steps[k], dm.Spawn):
        k += 1
    rho2 = _clear_spawn_marks(t.steps[i + 1:k])
    prefix = t.steps[:j]
    suffix = t.steps[k:]
    results: set = set()

    merged_guard = dm.and_guard([phi1.guard, dm.AfterG(phi1.update, phi2.guard)])
    if _satisfiable(merged_guard, universe):
        merged = dm.Trans(merged_guard,
                          dm.seq_update([phi1.update, phi2.update]),
                          phi1.marked, _compose_sync(phi1.sync, phi2.sync))
        results |= _atomics_one(
            dm.Trace(prefix + (merged,) + rho1 + rho2 + suffix,
                     t.terminator, t.depth, t.end_point), universe)

    susp_guard = dm.and_guard([phi1.guard, dm.NotG(dm.AfterG(phi1.update, phi2.guard))])
    if _satisfiable(susp_guard, universe):
        susp = dm.Trans(susp_guard, phi1.update, phi1.marked, phi1.sync)
        resumed = dm.Trans(phi2.guard, phi2.update, False, phi2.sync)
        for rest in _atomics_one(
                dm.Trace((resumed,) + rho2 + suffix, t.terminator, t.depth, t.end_point),
                universe):
            results.add(dm.Trace(prefix + (susp,) + rho1 + rest.steps,
                                 rest.terminator, rest.depth, rest.end_point))
    return results


def strip_leading_marks(S: frozenset) -> frozenset:
    """Unmark a marked first transition: behavior from a point strictly
    inside an atomic block resumes there after a suspension, so the first
    step of its traces is a burst opener, not a continuation."""
    fixed = set()
    for t in S:
        if t.steps and isinstance(t.steps[0], dm.Trans) and t.steps[0].marked:
            s0 = t.steps[0]
            fixed.add(dm.Trace((dm.Trans(s0.guard, s0.update, False, s0.sync),)
                               + t.steps[1:], t.terminator, t.depth, t.end_point))
        else:
            fixed.add(t)
    return frozenset(fixed)


def process_denotation(ctx: DenoteCtx, depth: int,
                       prune_universe: Optional[dm.Universe] = None,
                       apply_atomics: bool = True) -> dict:
    """Kleene prefix of the process fixpoint: depth applications of the
    immediate-consequences operator from the bottom family, then atomic
    expansion at every point.  Traces cut by the bound carry truncated
    terminators."""
    eta = bottom_eta(ctx.cfg)
    for _ in range(depth):
        eta = tp_step(ctx, eta)
    eta = finalize_eta(ctx.cfg, eta, depth)
    if not apply_atomics:
        return eta
    return {l: atomics(strip_leading_marks(S), prune_universe)
            for l, S in eta.items()}
