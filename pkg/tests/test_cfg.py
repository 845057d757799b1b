import pytest

from pmlsem import cfg as cfgmod
from pmlsem import syntax as syn
from conftest import load_fixture


def build(src: str, proc=None):
    p = syn.normalize(syn.parse_program(src))
    body = p.proctype(proc).body if proc else p.init.body
    return cfgmod.build_cfg(body, p.chan_table())


def test_peterson_cfg_matches_drawn_example(peterson):
    g = cfgmod.build_cfg(peterson.proctype("P").body, peterson.chan_table())
    assert g.entry == "L0"
    assert set(g.reachable()) == {"L0", "L1", "L2", "L3"}
    assert ("L4", "L0") in g.aliases
    labeled = {(e.src, e.label(), e.dst) for e in g.edges}
    assert labeled == {
        ("L0", "f[id]=1", "L1"),
        ("L1", "!f[1-id]", "L2"),
        ("L2", "skip", "L3"),
        ("L3", "f[id]=0", "L0"),
    }
    marks = {e.label(): e.atomic_mark for e in g.edges}
    assert marks["f[id]=1"] == cfgmod.FIRST
    assert marks["!f[1-id]"] == cfgmod.INSIDE
    assert marks["skip"] is None and marks["f[id]=0"] is None


def test_single_statement_body():
    g = build("init { skip }")
    assert len(g.edges) == 1
    e = g.edges[0]
    assert e.src == g.entry and e.label() == "skip"
    assert not g.out_edges(e.dst)


def test_empty_body_entry_is_exit():
    g = build("init { }")
    assert g.edges == ()
    assert g.reachable() == (g.entry,)


def test_if_with_else_edges():
    # hand translation: two arcs leave the entry, one of them the else arc,
    # and both branch bodies converge on the same join point
    g = build("byte x = 0;\ninit { if :: x > 0; A: skip :: else -> skip fi }")
    outs = g.out_edges(g.entry)
    assert len(outs) == 2
    elses = [e for e in outs if e.is_else]
    normals = [e for e in outs if not e.is_else]
    assert len(elses) == 1 and len(normals) == 1
    assert normals[0].label() == "x>0" and normals[0].dst == "A"
    # reachability oracle: every point reaches the join
    join_a = g.out_edges("A")[0].dst
    else_skip = g.out_edges(elses[0].dst)[0]
    assert else_skip.dst == join_a


def test_goto_collapse_forward_and_labelled():
    g = build("init { goto L; skip; L: skip }")
    # entry collapses straight onto L; the unlabeled skip is unreachable
    assert g.entry == "L"
    reach = set(g.reachable())
    assert any(e.src == "L" for e in g.edges)
    unreachable = [p for p in g.points if p not in reach]
    assert unreachable  # the skipped-over statement's point


def test_goto_undefined_label():
    with pytest.raises(cfgmod.BuildError, match="undefined label"):
        build("init { goto nowhere }")


def test_else_without_siblings_rejected():
    with pytest.raises(cfgmod.BuildError, match="else"):
        build("init { if :: else -> skip fi }")


def test_undeclared_channel_rejected():
    with pytest.raises(cfgmod.BuildError, match="not declared"):
        build("init { c!1 }")


def test_send_arity_mismatch_rejected():
    with pytest.raises(cfgmod.BuildError, match="arity"):
        build("chan c = [1] of { byte, byte };\ninit { c!1 }")


def test_sync_resolution_from_capacity():
    g = build("chan s = [0] of { byte }; chan a = [2] of { byte };\n"
              "init { s!1; a!1 }")
    sends = {e.stmt.chan: e.stmt.sync for e in g.edges if isinstance(e.stmt, syn.Send)}
    assert sends == {"s": True, "a": False}


def test_atomic_marking_rules():
    g = build("chan s = [0] of { byte };\n"
              "init { atomic { skip; s!1; skip; skip } }")
    # walk the straight-line chain from the entry
    chain = []
    point = g.entry
    while g.out_edges(point):
        e = g.out_edges(point)[0]
        chain.append((e.label(), e.atomic_mark))
        point = e.dst
    assert chain == [
        ("skip", cfgmod.FIRST),  # first of the block
        ("s!1", cfgmod.INSIDE),
        ("skip", cfgmod.FIRST_AFTER_SEND),  # control was lost at the send
        ("skip", cfgmod.INSIDE),
    ]


def test_nested_atomic_flattens():
    g = build("init { atomic { skip; atomic { skip; skip } } }")
    marks = [e.atomic_mark for e in g.edges]
    assert marks.count(cfgmod.FIRST) == 1
    assert marks.count(cfgmod.INSIDE) == 2


def test_every_basic_statement_appears_once(peterson):
    g = cfgmod.build_cfg(peterson.proctype("P").body, peterson.chan_table())
    labels = [e.label() for e in g.edges]
    assert sorted(labels) == sorted({"f[id]=1", "!f[1-id]", "skip", "f[id]=0"})


def test_dot_output_shape_and_determinism(peterson):
    g = cfgmod.build_cfg(peterson.proctype("P").body, peterson.chan_table())
    dot = cfgmod.to_dot(g, "P")
    assert dot == cfgmod.to_dot(g, "P")
    node_lines = [l for l in dot.splitlines() if l.strip().endswith('";')]
    assert len(node_lines) == 5  # L0..L3 plus the collapsed L4
    edge_lines = [l for l in dot.splitlines() if "->" in l and "label=" in l]
    assert len(edge_lines) == 5  # 4 labeled edges + goto-collapse note
    assert any('label="goto", style=dashed' in l for l in edge_lines)


def test_dot_empty_body_single_node():
    g = build("init { }")
    dot = cfgmod.to_dot(g)
    assert dot.count('";') == 1
    assert "->" not in dot


def test_dump_cfg_deterministic(peterson):
    g = cfgmod.build_cfg(peterson.init.body, peterson.chan_table())
    assert cfgmod.dump_cfg(g) == cfgmod.dump_cfg(g)
