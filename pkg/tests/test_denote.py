import pytest

from pmlsem import cfg as cfgmod
from pmlsem import denote as dn
from pmlsem import domain as dm
from pmlsem import state as st
from pmlsem import syntax as syn
from pmlsem import system as sysm
from conftest import load_fixture


def expr(src: str):
    p = syn.parse_program(f"init {{ {src} }}")
    return p.init.body[0].stmt.expr


LX = st.Loc(("u", "x"))
LY = st.Loc(("u", "y"))
LF = st.Loc(("u", "f"))
ENV = st.Env.make({"x": LX, "y": LY, "f": LF})


def mkstate(x=None, y=None, f=None):
    mem = {}
    if x is not None:
        mem[LX] = st.scalar("int", x)
    if y is not None:
        mem[LY] = st.scalar("int", y)
    if f is not None:
        mem[LF] = st.array_value("bit", f)
    return st.SystemState.make(mem)


# -- r-expression evaluation ----------------------------------------------------

def test_eval_r_paper_example():
    s = mkstate(x=4)
    assert dn.eval_r(expr("x + 1 > 3"), ENV, s) == 1
    assert dn.eval_r(expr("x + 1 > 5"), ENV, s) == 0


def test_eval_r_literal():
    assert dn.eval_r(expr("3"), ENV, mkstate()) == 3
    assert dn.eval_r(expr("true"), ENV, mkstate()) == 1
    assert dn.eval_r(expr("false"), ENV, mkstate()) == 0


def test_eval_r_array_hand_evaluation():
    # f={1,0}: f[1-id] with id=0 reads f[1]
    l_id = st.Loc(("u", "id"))
    env = ENV.bind("id", l_id)
    s = st.update(mkstate(f=[1, 0]), l_id, st.scalar("bit", 0))
    assert dn.eval_r(expr("f[1-id]"), env, s) == 0
    assert dn.eval_r(expr("!f[1-id]"), env, s) == 1
    s1 = st.update(s, l_id, st.scalar("bit", 1))
    assert dn.eval_r(expr("f[1-id]"), env, s1) == 1


def test_eval_r_unbound_identifier_is_hard_error():
    with pytest.raises(st.EngineError, match="unbound"):
        dn.eval_r(expr("zz"), ENV, mkstate())


def test_eval_r_division_truncates_toward_zero():
    s = mkstate(x=-7, y=2)
    assert dn.eval_r(expr("x / y"), ENV, s) == -3
    assert dn.eval_r(expr("x % y"), ENV, s) == -1
    assert dn.eval_r(expr("7 / 2"), ENV, s) == 3


def test_eval_r_division_by_zero_signals_bottom():
    with pytest.raises(st.BottomSignal):
        dn.eval_r(expr("1 / 0"), ENV, mkstate())
    with pytest.raises(st.BottomSignal):
        dn.eval_r(expr("1 % 0"), ENV, mkstate())


def test_eval_r_short_circuit():
    s = mkstate(x=0)
    assert dn.eval_r(expr("x != 0 && 1 / x > 0"), ENV, s) == 0
    assert dn.eval_r(expr("x == 0 || 1 / x > 0"), ENV, s) == 1


def test_eval_r_index_out_of_bounds():
    with pytest.raises(st.BottomSignal):
        dn.eval_r(expr("f[7]"), ENV, mkstate(f=[0, 0]))


# -- l-expression evaluation ----------------------------------------------------

def test_eval_l_const_write():
    s = mkstate(x=0)
    out = dn.eval_l(syn.LVar("x"), ENV, s)(lambda _v: 5)
    assert st.read(out, LX).payload == 5


def test_eval_l_array_element():
    s = mkstate(f=[0, 0])
    l_id = st.Loc(("u", "id"))
    env = ENV.bind("id", l_id)
    s = st.update(s, l_id, st.scalar("bit", 1))
    out = dn.eval_l(syn.LArr("f", expr("id")), env, s)(lambda _v: 1)
    assert st.read(out, LF).payload == (0, 1)


@pytest.mark.parametrize("idx", [-1, 2, 7])
def test_eval_l_out_of_range_gives_bottom(idx):
    # bounds oracle: any index outside 0..1 must produce the bottom state
    s = mkstate(f=[0, 0])
    out = dn.eval_l(syn.LArr("f", syn.Num(idx)), ENV, s)(lambda _v: 1)
    assert out.is_bottom


def test_eval_l_coerces_to_cell_kind():
    s = mkstate(f=[0, 0])
    out = dn.eval_l(syn.LArr("f", syn.Num(0)), ENV, s)(lambda _v: 2)
    assert st.read(out, LF).payload == (0, 0)  # bit cell wraps 2 to 0


# -- statement denotation --------------------------------------------------------

def denote_ctx(name="P"):
    prog = load_fixture("peterson")
    ctx = sysm.build_context(prog)
    sig = ctx.sig(name)
    I = dm.Interpretation.bottom(list(ctx.sigs))
    return ctx, dn.DenoteCtx(prog, name, ctx.cfgs[name], ctx.proc_env(sig), I,
                             ctx.keep_locs(), ctx.hs_loc, ctx.nrpr_loc)


def test_denote_assignment_pair():
    _, dctx = denote_ctx()
    stmt = syn.parse_program("init { f = 1 }").init.body[0].stmt
    t = dn.denote_stmt(syn.Assign(stmt.pos, syn.LArr("f", expr("id")), syn.Num(1)),
                       dctx, False, False)
    (step,) = t.steps
    assert step.guard == dm.TrueG()
    assert isinstance(step.update, dm.AssignLoc)
    assert not step.marked and step.sync is None


def test_denote_expression_guard():
    _, dctx = denote_ctx()
    t = dn.denote_stmt(syn.ExprStmt((0, 0), expr("!f[1-id]")), dctx, True, True)
    (step,) = t.steps
    assert isinstance(step.guard, dm.RExprGuard)
    assert step.update == dm.IdU()
    assert step.marked


def test_denote_goto_is_not_a_statement():
    # gotos dissolve into the CFG; they never reach statement denotation
    _, dctx = denote_ctx()
    with pytest.raises(dn.DenoteError):
        dn.denote_stmt(syn.Goto((0, 0), "L0"), dctx, False, False)


def sync_ctx():
    prog = syn.normalize(syn.parse_program(
        "chan c = [0] of { byte };\nchan a = [2] of { byte };\n"
        "proctype Q(){ skip }\ninit { skip }"))
    ctx = sysm.build_context(prog)
    sig = ctx.sig("init")
    I = dm.Interpretation.bottom(list(ctx.sigs))
    return ctx, dn.DenoteCtx(prog, "init", ctx.cfgs["init"], ctx.proc_env(sig), I,
                             ctx.keep_locs(), ctx.hs_loc, ctx.nrpr_loc)


def test_denote_sync_send_shape():
    ctx, dctx = sync_ctx()
    t = dn.denote_stmt(syn.Send((0, 0), "c", (syn.Num(1),), sync=True),
                       dctx, False, False)
    (step,) = t.steps
    assert step.guard == dm.ChanDefined(0)
    assert isinstance(step.update, dm.SeqU)
    push, hs = step.update.us
    assert isinstance(push, dm.ChanPush)
    assert hs == dm.SetHandshake(ctx.hs_loc, 0)
    assert step.sync == ("send", 0)


def test_denote_sync_receive_shape():
    ctx, dctx = sync_ctx()
    t = dn.denote_stmt(syn.Receive((0, 0), "c", (syn.LVar("v"),), sync=True),
                       dctx, False, False)
    (step,) = t.steps
    assert step.guard == dm.and_guard(
        [dm.ChanDefined(0), dm.HandshakeIs(ctx.hs_loc, 0)])
    pop, hs = step.update.us
    assert isinstance(pop, dm.ChanPop)
    assert hs == dm.SetHandshake(ctx.hs_loc, -1)
    assert step.sync == ("recv", 0)


def test_denote_async_guards():
    ctx, dctx = sync_ctx()
    send = dn.denote_stmt(syn.Send((0, 0), "a", (syn.Num(1),), sync=False),
                          dctx, False, False).steps[0]
    assert send.guard == dm.and_guard([dm.ChanDefined(1), dm.NFullG(1)])
    assert send.sync is None
    recv = dn.denote_stmt(syn.Receive((0, 0), "a", (syn.LVar("v"),), sync=False),
                          dctx, False, False).steps[0]
    assert recv.guard == dm.and_guard([dm.ChanDefined(1), dm.NEmptyG(1)])


def test_denote_run_unknown_proctype():
    _, dctx = denote_ctx("init")
    with pytest.raises(dn.DenoteError, match="unknown proctype"):
        dn.denote_stmt(syn.Run((0, 0), "Nope", ()), dctx, False, False, eid=0)


def test_denote_run_arity_mismatch():
    _, dctx = denote_ctx("init")
    with pytest.raises(dn.DenoteError, match="actuals"):
        dn.denote_stmt(syn.Run((0, 0), "P", ()), dctx, False, False, eid=0)


def test_denote_run_builds_alloc_and_spawn():
    _, dctx = denote_ctx("init")
    t = dn.denote_stmt(syn.Run((0, 0), "P", (syn.Num(0),)), dctx, False, True, eid=0)
    trans, spawn = t.steps
    assert trans.guard == dm.TrueG()
    alloc, bump = trans.update.us
    assert isinstance(alloc, dm.SpawnAlloc) and alloc.meta.proctype == "P"
    assert isinstance(bump, dm.BumpNrPr) and bump.delta == 1
    assert isinstance(spawn, dm.Spawn) and spawn.marked
    assert spawn.traces == dm.bottom_set()  # bottom interpretation payload


# -- addElse ----------------------------------------------------------------------

def bit_universe():
    return dm.Universe.build(st.SystemState.make({}), {LX: "bit", LY: "bit"})


def test_add_else_negates_distinct_first_guards():
    gx = dm.RExprGuard(expr("x>0"), ENV)
    gy = dm.RExprGuard(expr("y>0"), ENV)
    T = frozenset({
        dm.Trace((dm.Trans(gx, dm.IdU()),)),
        dm.Trace((dm.Trans(gx, dm.AssignLoc(syn.LVar("x"), expr("0"), ENV)),)),
        dm.Trace((dm.Trans(gy, dm.IdU()),)),
    })
    E = frozenset({dm.Trace((), dm.FINAL)})
    out = dn.add_else(E, T)
    gates = [t.steps[0] for t in out - T]
    assert len(gates) == 1
    gate = gates[0]
    # truth table over both bits: the gate holds exactly when no guard does
    for s in bit_universe().states():
        want = not dm.guard_eval(gx, s) and not dm.guard_eval(gy, s)
        assert dm.guard_eval(gate.guard, s) == want
    assert gate.update == dm.IdU()


def test_add_else_with_true_guard_never_fires():
    T = frozenset({dm.Trace((dm.Trans(dm.TrueG(), dm.IdU()),))})
    out = dn.add_else(frozenset({dm.EPSILON}), T)
    gate = next(t.steps[0] for t in out - T)
    assert all(not dm.guard_eval(gate.guard, s) for s in bit_universe().states())


def test_add_else_epsilon_continuation():
    gx = dm.RExprGuard(expr("x>0"), ENV)
    T = frozenset({dm.Trace((dm.Trans(gx, dm.IdU()),))})
    out = dn.add_else(frozenset({dm.EPSILON}), T)
    extra = next(t for t in out - T)
    assert len(extra.steps) == 1 and extra.terminator == dm.OPEN


def test_add_else_requires_transition_first():
    bad = frozenset({dm.Trace((), dm.FINAL)})
    with pytest.raises(dn.DenoteError):
        dn.add_else(frozenset({dm.EPSILON}), bad)


# -- the immediate-consequences operator --------------------------------------------

def test_tp_step_from_bottom_peterson():
    ctx, dctx = denote_ctx("P")
    eta = dn.tp_step(dctx, dn.bottom_eta(dctx.cfg))
    at_l3 = eta["L3"]
    assert len(at_l3) == 1
    (t,) = at_l3
    assert len(t.steps) == 1
    step = t.steps[0]
    assert step.guard == dm.TrueG()
    assert isinstance(step.update, dm.AssignLoc)
    assert t.end_point == "L0"  # the goto-collapsed continuation


def test_tp_step_dead_end_point_is_bottom():
    prog = syn.normalize(syn.parse_program("init { skip }"))
    ctx = sysm.build_context(prog)
    sig = ctx.sig("init")
    dctx = dn.DenoteCtx(prog, "init", ctx.cfgs["init"],
                        ctx.proc_env(sig),
                        dm.Interpretation.bottom(list(ctx.sigs)),
                        ctx.keep_locs(), ctx.hs_loc, ctx.nrpr_loc)
    eta = dn.tp_step(dctx, dn.bottom_eta(dctx.cfg))
    exit_point = dctx.cfg.out_edges(dctx.cfg.entry)[0].dst
    assert eta[exit_point] == frozenset(
        {dm.Trace((), dm.OPEN, end_point=exit_point)})


def test_tp_step_two_branches_union():
    prog = syn.normalize(syn.parse_program(
        "byte x = 1;\ninit { if :: x == 1 -> skip :: x == 2 -> skip fi }"))
    ctx = sysm.build_context(prog)
    sig = ctx.sig("init")
    dctx = dn.DenoteCtx(prog, "init", ctx.cfgs["init"], ctx.proc_env(sig),
                        dm.Interpretation.bottom(list(ctx.sigs)),
                        ctx.keep_locs(), ctx.hs_loc, ctx.nrpr_loc)
    eta = dn.tp_step(dctx, dn.bottom_eta(dctx.cfg))
    assert len(eta[dctx.cfg.entry]) == 2


# -- the bounded fixpoint -------------------------------------------------------------

def peterson_universe(ctx):
    sig = ctx.sig("P")
    l_f = dict(ctx.globals_vars)["f"]
    return dm.Universe.build(
        ctx.sigma0, {l_f: ("array", "bit", 2), sig.formal_locs[0]: "bit"})


def expected_two_beginnings(ctx):
    """Hand-encoded golden traces for the loop denotation: the merged form
    guarded by the rival flag being down, and the suspension form that sets
    the flag and waits."""
    sig = ctx.sig("P")
    env = ctx.proc_env(sig)
    guard_ok = dm.RExprGuard(expr("!f[1-id]"), env)
    guard_busy = dm.RExprGuard(expr("f[1-id]"), env)
    set_flag = dm.AssignLoc(syn.LArr("f", expr("id")), expr("1"), env)
    clear_flag = dm.AssignLoc(syn.LArr("f", expr("id")), expr("0"), env)
    merged = dm.Trace((
        dm.Trans(guard_ok, set_flag),
        dm.Trans(dm.TrueG(), dm.IdU()),
        dm.Trans(dm.TrueG(), clear_flag),
    ), dm.TRUNCATED)
    susp = dm.Trace((
        dm.Trans(guard_busy, set_flag),
        dm.Trans(guard_ok, dm.IdU()),
        dm.Trans(dm.TrueG(), dm.IdU()),
        dm.Trans(dm.TrueG(), clear_flag),
    ), dm.TRUNCATED)
    return frozenset({merged, susp})


def test_depth_zero_is_bottom():
    ctx, dctx = denote_ctx("P")
    eta = dn.process_denotation(dctx, 0)
    dom = peterson_universe(ctx)
    # empty truncated traces are equivalent to the empty trace
    assert all(dm.set_equiv(S, dm.bottom_set(), dom) for S in eta.values())
    assert all(len(S) == 1 and not next(iter(S)).steps for S in eta.values())


def test_peterson_depth4_two_beginnings():
    ctx, dctx = denote_ctx("P")
    eta = dn.process_denotation(dctx, 4)
    out = eta["L0"]
    assert len(out) == 2
    assert dm.set_equiv(out, expected_two_beginnings(ctx), peterson_universe(ctx))


def test_iterates_increase_with_depth():
    # the Kleene chain property belongs to the raw operator iterates; the
    # atomic expansion afterwards splits steps into complementary branches,
    # which is not prefix-monotone
    ctx, dctx = denote_ctx("P")
    dom = peterson_universe(ctx)
    prev = dn.process_denotation(dctx, 2, apply_atomics=False)
    for depth in (3, 4, 5):
        cur = dn.process_denotation(dctx, depth, apply_atomics=False)
        for point in prev:
            assert dm.set_leq(prev[point], cur[point], dom)
        prev = cur


def test_atomics_output_never_marked():
    ctx, dctx = denote_ctx("P")
    eta = dn.process_denotation(dctx, 8)
    for S in eta.values():
        for t in S:
            for step in t.steps:
                assert not step.marked


def test_atomics_no_marks_is_identity():
    t = dm.Trace((dm.Trans(dm.TrueG(), dm.IdU()),), dm.FINAL)
    assert dn.atomics(frozenset({t})) == frozenset({t})


def test_atomics_leading_mark_rejected():
    t = dm.Trace((dm.Trans(dm.TrueG(), dm.IdU(), marked=True),))
    with pytest.raises(dn.DenoteError):
        dn.atomics(frozenset({t}))


def test_atomics_two_step_block_against_burst_oracle():
    # atomic { x = 1; y } over one-bit cells: per state, either the guard
    # holds after the write and the burst is one combined step, or it does
    # not and the process suspends holding the write
    phi1 = dm.Trans(dm.TrueG(), dm.AssignLoc(syn.LVar("x"), expr("1"), ENV))
    phi2 = dm.Trans(dm.RExprGuard(expr("y"), ENV), dm.IdU(), marked=True)
    marked_trace = dm.Trace((phi1, phi2), dm.FINAL)
    out = dn.atomics(frozenset({marked_trace}))
    assert len(out) == 2
    assert all(not s.marked for t in out for s in t.steps)
    dom = bit_universe()
    for sigma in dom.states():
        got, _diags = sysm.propagate(sigma, out)
        after1 = dm.update_eval(phi1.update, sigma)
        if dm.guard_eval(phi2.guard, after1):
            # one combined burst state, then the finalizer
            assert got == frozenset({sysm.StateSeq((after1,), "completed")})
        else:
            # suspended: the write happened but the rest blocks, and a lone
            # blocked process means the whole branch is discarded
            assert got == frozenset()


def test_interior_point_resumes_unmarked():
    ctx, dctx = denote_ctx("P")
    eta = dn.process_denotation(dctx, 4)
    for t in eta["L1"]:
        first = t.steps[0]
        assert isinstance(first, dm.Trans) and not first.marked
