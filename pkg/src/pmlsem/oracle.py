"""Reference operational interpreter, the ground truth for differential
testing.

Runs the same CFGs as the denotational pipeline, so program counters align
with process points.  One observable step is a maximal atomic burst: a
statement, then as long as the next edges are marked and executable, the
same process keeps control; when a marked edge is blocked the burst ends
(the engine breaks atomicity rather than deadlock).  Rendezvous send and
receive execute as one joint step, continuing the receiver's burst, which
matches the combined step the system phase builds.  Exclusivity is held
only inside a burst, so between observable steps it is always clear.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from . import cfg as cfgmod
from . import denote as dn
from . import state as st
from . import syntax as syn
from . import system as sysm
from .state import BottomSignal, Env, EngineError, SystemState
from .system import StateSeq


@dataclass(frozen=True)
class ProcState:
    pid: int
    proctype: str
    point: str
    env: Env


@dataclass(frozen=True)
class Config:
    state: SystemState
    procs: tuple  # live processes, sorted by pid
    next_pid: int = 1  # pids follow spawn order along this run
    exclusive: Optional[int] = None  # held only transiently inside a burst


@dataclass
class RunResult:
    sequences: frozenset  # StateSeq
    deadlocks: tuple  # Config
    terminations: tuple  # Config


# ---------------------------------------------------------------------------
# Statement-level executability and effect, shared with the property tests


def stmt_executable(stmt: syn.Stmt, env: Env, state: SystemState,
                    partner_ready: bool = False) -> bool:
    """SPIN enabledness of one basic statement.

    Boolean expressions are executable only when true; assignments,
    declarations, and run are always executable; channel operations when
    the channel has room or content; rendezvous halves need a co-enabled
    partner, which the caller determines."""
    if state.is_bottom:
        return False
    if isinstance(stmt, (syn.Skip, syn.Assign, syn.DeclInit, syn.Run)):
        return True
    if isinstance(stmt, syn.ExprStmt):
        try:
            return dn.eval_r(stmt.expr, env, state) != 0
        except BottomSignal:
            return False
    if isinstance(stmt, syn.Send):
        c = st.read_chan(state, env.chan(stmt.chan))
        if c is None:
            return False
        if stmt.sync:
            return partner_ready
        return st.nfull(c)
    if isinstance(stmt, syn.Receive):
        c = st.read_chan(state, env.chan(stmt.chan))
        if c is None:
            return False
        if stmt.sync:
            return partner_ready
        return st.nempty(c)
    raise EngineError(f"not a basic statement: {type(stmt).__name__}")


def stmt_effect(stmt: syn.Stmt, env: Env, state: SystemState) -> SystemState:
    """State after one basic statement (excluding run, which spawns)."""
    try:
        if isinstance(stmt, (syn.Skip, syn.ExprStmt)):
            return state
        if isinstance(stmt, syn.Assign):
            v = dn.eval_r(stmt.value, env, state)
            return dn.eval_l(stmt.target, env, state)(lambda _old: v)
        if isinstance(stmt, syn.DeclInit):
            v = dn.eval_r(stmt.init, env, state)
            return dn.eval_l(syn.LVar(stmt.name), env, state)(lambda _old: v)
        if isinstance(stmt, syn.Send):
            cid = env.chan(stmt.chan)
            c = st.read_chan(state, cid)
            msg = tuple(dn.eval_r(a, env, state) for a in stmt.args)
            return st.update_chan(state, cid, st.chan_push(c, msg))
        if isinstance(stmt, syn.Receive):
            cid = env.chan(stmt.chan)
            c = st.read_chan(state, cid)
            vals = st.chan_head(c)
            out = state
            for tgt, v in zip(stmt.targets, vals):
                out = dn.eval_l(tgt, env, out)(lambda _old, v=v: v)
                if out.is_bottom:
                    return out
            return st.update_chan(out, cid, st.chan_pop(c))
    except (BottomSignal, EngineError):
        return st.BOTTOM
    raise EngineError(f"no direct effect for: {type(stmt).__name__}")


class Oracle:
    """Bounded explicit-state exploration of a normalized program."""

    def __init__(self, program: syn.Program):
        self.ctx = sysm.build_context(program)
        self.program = program
        sig = self.ctx.sig("init")
        mem = self.ctx.sigma0.mem_dict()
        init_vars = []
        for name, kind, _ploc in sig.locals:
            loc = self.ctx.alloc.fresh(f"{name}@init")
            mem[loc] = st.default_value(kind, mtype_first=self.ctx.mtype_first)
            init_vars.append((name, loc))
        self.ctx.sigma0 = SystemState.make(mem, self.ctx.sigma0.chan_dict())
        self.ctx.registry[self.ctx.init_pid_loc] = sysm.ProcInstance(
            0, "init", tuple(init_vars), self.ctx.init_pid_loc)
        env0 = self.ctx.env_g.bind_all(
            dict(init_vars) | {"_pid": self.ctx.init_pid_loc})
        self._init_proc = ProcState(0, "init", self.ctx.cfgs["init"].entry, env0)

    def initial_config(self) -> Config:
        return Config(self.ctx.sigma0, (self._init_proc,))

    # -- enabledness --------------------------------------------------------

    def _sync_partners(self, c: Config, pid: int, edge: cfgmod.Edge) -> list:
        """(pid, edge) pairs co-enabled for the complementary rendezvous."""
        want_recv = isinstance(edge.stmt, syn.Send)
        cid = None
        for p in c.procs:
            if p.pid == pid:
                cid = p.env.chan(edge.stmt.chan)
        out = []
        for p in c.procs:
            if p.pid == pid:
                continue
            for e in self.ctx.cfgs[p.proctype].out_edges(p.point):
                s = e.stmt
                if want_recv and isinstance(s, syn.Receive) and s.sync \
                        and p.env.chan(s.chan) == cid:
                    out.append((p.pid, e))
                if not want_recv and isinstance(s, syn.Send) and s.sync \
                        and p.env.chan(s.chan) == cid:
                    out.append((p.pid, e))
        return out

    def executable(self, c: Config, pid: int, edge: cfgmod.Edge) -> bool:
        proc = self._proc(c, pid)
        if edge.is_else:
            siblings = [e for e in self.ctx.cfgs[proc.proctype].out_edges(proc.point)
                        if not e.is_else]
            if any(self.executable(c, pid, e) for e in siblings):
                return False
        s = edge.stmt
        if isinstance(s, (syn.Send, syn.Receive)) and s.sync:
            return bool(self._sync_partners(c, pid, edge))
        return stmt_executable(s, proc.env, c.state)

    def _proc(self, c: Config, pid: int) -> ProcState:
        for p in c.procs:
            if p.pid == pid:
                return p
        raise EngineError(f"no live process {pid}")

    # -- execution ----------------------------------------------------------

    def _advance(self, c: Config, pid: int, point: str,
                 state: SystemState) -> Config:
        procs = tuple(
            ProcState(p.pid, p.proctype, point, p.env) if p.pid == pid else p
            for p in c.procs)
        return Config(state, procs, c.next_pid)

    def _exec_plain(self, c: Config, pid: int, edge: cfgmod.Edge) -> Optional[Config]:
        proc = self._proc(c, pid)
        s = edge.stmt
        if isinstance(s, syn.Run):
            return self._exec_run(c, pid, edge)
        out = stmt_effect(s, proc.env, c.state)
        return self._advance(c, pid, edge.dst, out)

    def _exec_run(self, c: Config, pid: int, edge: cfgmod.Edge) -> Config:
        proc = self._proc(c, pid)
        run: syn.Run = edge.stmt
        callee = self.program.proctype(run.proc)
        new_pid = c.next_pid
        mem = c.state.mem_dict()
        var_locs = []
        env = self.ctx.env_g
        try:
            for (pname, kind), arg in zip(callee.params, run.args):
                loc = self.ctx.alloc.fresh(f"{pname}@{new_pid}")
                mem[loc] = st.scalar(kind, dn.eval_r(arg, proc.env, c.state))
                var_locs.append((pname, loc))
                env = env.bind(pname, loc)
        except BottomSignal:
            return Config(st.BOTTOM, c.procs, c.next_pid)
        for lname, kind in dn.collect_locals(callee.body):
            loc = self.ctx.alloc.fresh(f"{lname}@{new_pid}")
            mem[loc] = st.default_value(kind, mtype_first=self.ctx.mtype_first)
            var_locs.append((lname, loc))
            env = env.bind(lname, loc)
        pid_loc = self.ctx.alloc.fresh(f"_pid@{new_pid}")
        mem[pid_loc] = st.scalar("int", new_pid)
        env = env.bind("_pid", pid_loc)
        nr = st.read(c.state, self.ctx.nrpr_loc)
        mem[self.ctx.nrpr_loc] = st.scalar("int", nr.payload + 1)
        self.ctx.registry[pid_loc] = sysm.ProcInstance(
            new_pid, run.proc, tuple(var_locs), pid_loc)
        state = SystemState.make(mem, c.state.chan_dict())
        child = ProcState(new_pid, run.proc, self.ctx.cfgs[run.proc].entry, env)
        procs = tuple(
            ProcState(p.pid, p.proctype, edge.dst, p.env) if p.pid == pid else p
            for p in c.procs) + (child,)
        return Config(state, tuple(sorted(procs, key=lambda p: p.pid)), c.next_pid + 1)

    def _exec_sync(self, c: Config, spid: int, sedge: cfgmod.Edge,
                   rpid: int, redge: cfgmod.Edge) -> Optional[Config]:
        sender = self._proc(c, spid)
        receiver = self._proc(c, rpid)
        out = stmt_effect(sedge.stmt, sender.env, c.state)
        if out.is_bottom:
            return None
        out = stmt_effect(redge.stmt, receiver.env, out)
        if out.is_bottom:
            return None
        c2 = self._advance(c, spid, sedge.dst, out)
        return self._advance(c2, rpid, redge.dst, c2.state)

    def _terminate(self, c: Config, pid: int) -> Config:
        nr = st.read(c.state, self.ctx.nrpr_loc)
        state = st.update(c.state, self.ctx.nrpr_loc,
                          st.scalar("int", nr.payload - 1))
        procs = tuple(p for p in c.procs if p.pid != pid)
        return Config(state, procs, c.next_pid)

    def _burst(self, c: Config, pid: int) -> list:
        """Continue the atomic burst of pid while marked edges are
        executable; a blocked marked edge suspends (control is lost)."""
        proc = None
        for p in c.procs:
            if p.pid == pid:
                proc = p
        if proc is None:
            return [c]  # the process exited mid-burst
        marked = [e for e in self.ctx.cfgs[proc.proctype].out_edges(proc.point)
                  if e.marked]
        if not marked:
            return [c]
        out = []
        for e in marked:
            if self.executable(c, pid, e):
                out.extend(self._follow(c, pid, e))
        return out if out else [c]

    def _follow(self, c: Config, pid: int, edge: cfgmod.Edge) -> list:
        """Execute one executable edge and continue its burst."""
        s = edge.stmt
        if isinstance(s, (syn.Send, syn.Receive)) and s.sync:
            outs = []
            if isinstance(s, syn.Receive):
                return []  # rendezvous joints are driven from the send side
            for rpid, redge in self._sync_partners(c, pid, edge):
                c2 = self._exec_sync(c, pid, edge, rpid, redge)
                if c2 is not None:
                    outs.extend(self._burst(c2, rpid))
            return outs
        c2 = self._exec_plain(c, pid, edge)
        if c2 is None or c2.state.is_bottom:
            return []
        return self._burst(c2, pid)

    def step(self, c: Config) -> list:
        """All observable successors: one maximal burst per executable
        choice, plus a terminate step for each process at its exit point."""
        out = []
        for p in c.procs:
            edges = self.ctx.cfgs[p.proctype].out_edges(p.point)
            if not edges:
                out.append(self._terminate(c, p.pid))
                continue
            for e in edges:
                if self.executable(c, p.pid, e):
                    out.extend(self._follow(c, p.pid, e))
        seen = set()
        uniq = []
        for s in out:
            if s not in seen:
                seen.add(s)
                uniq.append(s)
        return uniq

    def run_bounded(self, max_len: int) -> RunResult:
        """Depth-bounded exploration collecting the non-blocking state
        sequences, the deadlocked configurations, and the terminated ones."""
        sequences: set = set()
        deadlocks: set = set()
        terminations: set = set()
        memo: dict = {}

        def suffixes(c: Config, budget: int) -> frozenset:
            key = (c, budget)
            if key in memo:
                return memo[key]
            if not c.procs:
                terminations.add(c)
                out = frozenset({((), "completed")})
                memo[key] = out
                return out
            succs = self.step(c)
            if not succs:
                deadlocks.add(c)
                out = frozenset()
                memo[key] = out
                return out
            if budget <= 0:
                out = frozenset({((), "cut")})
                memo[key] = out
                return out
            acc = set()
            for c2 in succs:
                for states, kind in suffixes(c2, budget - 1):
                    acc.add(((c2.state,) + states, kind))
            out = frozenset(acc)
            memo[key] = out
            return out

        for states, kind in suffixes(self.initial_config(), max_len):
            sequences.add(StateSeq(states, kind))
        return RunResult(frozenset(sequences),
                         tuple(sorted(deadlocks, key=repr)),
                         tuple(sorted(terminations, key=repr)))


def run_bounded(program: syn.Program, max_len: int) -> tuple:
    """(oracle, RunResult) for a normalized program."""
    o = Oracle(program)
    return o, o.run_bounded(max_len)


@dataclass
class CompareResult:
    match: bool
    missing: tuple  # canonical sequences the oracle has and the pipeline lacks
    extra: tuple  # canonical sequences the pipeline has and the oracle lacks
    den_count: int
    oracle_count: int
    deadlock_count: int


def _canon_seq(ctx: sysm.ProgramContext, seq: StateSeq) -> tuple:
    return (tuple(sysm.state_key(ctx, s) for s in seq.states), seq.termination)


def compare_semantics(program: syn.Program, max_len: int = 8, k: int = 4,
                      depth: int = 16, literal: bool = False) -> CompareResult:
    """Differential check: denotational state sequences against the
    oracle's non-blocking runs, both bounded to max_len observable steps,
    compared as sets of canonical state lists."""
    den = sysm.sem_prog(program, k=k, depth=depth, fuel=max_len, literal=literal)
    den_keys = {_canon_seq(den.context, q) for q in den.sequences}
    o, res = run_bounded(program, max_len)
    orc_keys = {_canon_seq(o.ctx, q) for q in res.sequences}
    missing = tuple(sorted(map(repr, orc_keys - den_keys)))
    extra = tuple(sorted(map(repr, den_keys - orc_keys)))
    return CompareResult(den_keys == orc_keys, missing, extra,
                         len(den_keys), len(orc_keys), len(res.deadlocks))
