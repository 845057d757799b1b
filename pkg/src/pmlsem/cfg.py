"""Per-process control flow graphs.

Nodes are process points (user labels where present, synthesized anonymous
points otherwise).  Edges carry basic statements.  goto produces no edge:
its source point is identified with the target label, so traces never step
through gotos.  Edges inside an atomic block are marked, except the first
of the block and the first after a synchronous send (where the process
loses control).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import syntax as syn


class BuildError(Exception):
    pass


# Marking of an edge relative to atomic blocks.
OUTSIDE = None
FIRST = "first"
FIRST_AFTER_SEND = "first_after_send"
INSIDE = "inside"


@dataclass(frozen=True)
class Edge:
    src: str
    stmt: syn.Stmt  # basic statement; Send/Receive carry resolved sync flag
    dst: str
    is_else: bool = False
    atomic_mark: Optional[str] = OUTSIDE  # OUTSIDE | FIRST | FIRST_AFTER_SEND | INSIDE

    @property
    def marked(self) -> bool:
        """True when the step this edge denotes carries the atomic marker."""
        return self.atomic_mark == INSIDE

    @property
    def in_atomic(self) -> bool:
        return self.atomic_mark is not None

    def label(self) -> str:
        if self.is_else:
            return "else"
        return syn.render_stmt(self.stmt)


@dataclass(frozen=True)
class CFG:
    points: tuple  # canonical points, sorted
    entry: str
    edges: tuple  # Edge, in deterministic order
    aliases: tuple  # (user label, canonical point) pairs for goto-collapsed names

    def out_edges(self, point: str) -> tuple:
        return tuple(e for e in self.edges if e.src == point)

    def reachable(self) -> tuple:
        seen = {self.entry}
        frontier = [self.entry]
        while frontier:
            p = frontier.pop()
            for e in self.edges:
                if e.src == p and e.dst not in seen:
                    seen.add(e.dst)
                    frontier.append(e.dst)
        return tuple(sorted(seen))

    def atomic_spans(self) -> tuple:
        return tuple((e, e.atomic_mark) for e in self.edges if e.in_atomic)

    def edge_id(self, edge: Edge) -> int:
        return self.edges.index(edge)


_BASIC = (syn.Skip, syn.ExprStmt, syn.Assign, syn.DeclInit, syn.Send,
          syn.Receive, syn.Run)


class _Builder:
    def __init__(self, chan_table: dict):
        self.chan_table = chan_table
        self.parent: dict = {}
        self.named: set = set()
        self.defined_labels: set = set()
        self.goto_targets: list = []
        self.raw_edges: list = []
        self.anon_n = 0

    def fresh(self) -> str:
        self.anon_n += 1
        name = f"@{self.anon_n}"
        self.parent[name] = name
        return name

    def named_point(self, label: str) -> str:
        if label not in self.parent:
            self.parent[label] = label
        self.named.add(label)
        return label

    def find(self, x: str) -> str:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union_into(self, loser: str, winner: str):
        a, b = self.find(loser), self.find(winner)
        if a != b:
            self.parent[a] = b

    def emit(self, src: str, stmt: syn.Stmt, dst: str, mark, is_else=False):
        self.raw_edges.append((src, stmt, dst, is_else, mark))

    def consume_mark(self, mark):
        """Edge annotation for the current marking state, and the next state."""
        if mark == ("out",):
            return OUTSIDE, ("out",)
        if mark == ("first", "block"):
            return FIRST, ("in",)
        if mark == ("first", "send"):
            return FIRST_AFTER_SEND, ("in",)
        return INSIDE, ("in",)

    def resolve_send_recv(self, s: syn.Stmt) -> syn.Stmt:
        if isinstance(s, (syn.Send, syn.Receive)):
            decl = self.chan_table.get(s.chan)
            if decl is None:
                raise BuildError(f"channel '{s.chan}' is not declared")
            sync = decl.capacity == 0
            if len(s.args if isinstance(s, syn.Send) else s.targets) != len(decl.field_types):
                raise BuildError(
                    f"message arity on '{s.chan}' does not match its field types")
            if isinstance(s, syn.Send):
                return syn.Send(s.pos, s.chan, s.args, sync)
            return syn.Receive(s.pos, s.chan, s.targets, sync)
        return s

    def translate_seq(self, stmts, cur: Optional[str], mark):
        for ls in stmts:
            if cur is None:
                cur = self.fresh()  # unreachable continuation after a goto
            for lab in ls.labels:
                p = self.named_point(lab)
                self.defined_labels.add(lab)
                if self.find(cur) != self.find(p):
                    self.union_into(cur, p)
                cur = p
            cur, mark = self.translate_stmt(ls.stmt, cur, mark)
        return cur, mark

    def translate_stmt(self, s: syn.Stmt, cur: str, mark):
        if isinstance(s, syn.Goto):
            target = self.named_point(s.label)
            self.goto_targets.append((s.label, s.pos))
            self.union_into(cur, target)
            return None, mark
        if isinstance(s, _BASIC):
            s = self.resolve_send_recv(s)
            nxt = self.fresh()
            ann, mark = self.consume_mark(mark)
            self.emit(cur, s, nxt, ann)
            if isinstance(s, syn.Send) and s.sync and mark == ("in",):
                mark = ("first", "send")
            return nxt, mark
        if isinstance(s, syn.Atomic):
            inner = mark if mark != ("out",) else ("first", "block")
            cur2, m2 = self.translate_seq(s.body, cur, inner)
            return cur2, (("out",) if mark == ("out",) else m2)
        if isinstance(s, syn.IfFi):
            return self.translate_if(s, cur, mark)
        raise BuildError(f"unexpected statement in normalized body: {type(s).__name__}")

    def translate_if(self, s: syn.IfFi, cur: str, mark):
        if not s.branches and s.else_branch is not None:
            raise BuildError("if with only an else branch has no guards to negate")
        join = self.fresh()
        end_marks = []
        for b in s.branches:
            bcur, bmark = self.translate_seq(b.stmts, cur, mark)
            if bcur is not None:
                self.union_into(bcur, join)
            end_marks.append(bmark)
        if s.else_branch is not None:
            bcur, bmark = self.translate_else(s.else_branch, cur, mark)
            if bcur is not None:
                self.union_into(bcur, join)
            end_marks.append(bmark)
        if mark == ("out",):
            return join, ("out",)
        # Inside an atomic: the continuation is marked unless every branch
        # ended right after a synchronous send.
        if all(m == ("first", "send") for m in end_marks):
            return join, ("first", "send")
        return join, ("in",)

    def translate_else(self, b: syn.Branch, cur: str, mark):
        # The else branch enters through a synthetic skip-labeled arc: taking
        # else is its own execution step (the negation of the sibling guards
        # is attached to this arc by the denotation), and the branch body
        # follows as ordinary edges.
        pos = b.stmts[0].stmt.pos
        nxt = self.fresh()
        ann, mark = self.consume_mark(mark)
        self.emit(cur, syn.Skip(pos), nxt, ann, is_else=True)
        return self.translate_seq(b.stmts, nxt, mark)

    def finalize(self, entry: str) -> CFG:
        for label, pos in self.goto_targets:
            if label not in self.defined_labels:
                raise BuildError(f"{pos[0]}:{pos[1]}: goto to undefined label '{label}'")
        edges = []
        seen = set()
        for src, stmt, dst, is_else, mark in self.raw_edges:
            e = Edge(self.find(src), stmt, self.find(dst), is_else, mark)
            if e not in seen:
                seen.add(e)
                edges.append(e)
        points = sorted({self.find(p) for p in self.parent} |
                        {e.src for e in edges} | {e.dst for e in edges})
        by_src: dict = {}
        for e in edges:
            by_src.setdefault(e.src, []).append(e)
        for src, es in by_src.items():
            elses = [e for e in es if e.is_else]
            if len(elses) > 1:
                raise BuildError(f"more than one else edge leaves point {src}")
            if elses and len(es) == 1:
                raise BuildError(f"else edge at {src} has no sibling branches")
        aliases = tuple(sorted(
            (name, self.find(name)) for name in self.named if self.find(name) != name))
        edges.sort(key=lambda e: (e.src, e.label(), e.dst, e.is_else))
        return CFG(tuple(points), self.find(entry), tuple(edges), aliases)


def build_cfg(body: tuple, chan_table: dict) -> CFG:
    """CFG of a normalized body (no do/od, no printf).

    chan_table maps channel names to their declarations; send/receive edges
    get their synchronous flag resolved from the declared capacity.
    """
    b = _Builder(chan_table)
    entry = b.fresh()
    cur, _ = b.translate_seq(body, entry, ("out",))
    # cur is the distinguished exit point (fallthrough off the body's end)
    return b.finalize(entry)


def dump_cfg(cfg: CFG) -> str:
    """Structured text dump, deterministic across runs."""
    reach = set(cfg.reachable())
    lines = [f"entry {cfg.entry}"]
    for p in cfg.points:
        tag = "" if p in reach else "  (unreachable)"
        lines.append(f"point {p}{tag}")
    for name, canon in cfg.aliases:
        lines.append(f"alias {name} -> {canon}  (goto-collapsed)")
    for e in cfg.edges:
        bits = []
        if e.is_else:
            bits.append("else")
        if e.atomic_mark is not None:
            bits.append(f"atomic:{e.atomic_mark}")
        suffix = ("  [" + " ".join(bits) + "]") if bits else ""
        lines.append(f"edge {e.src} --{e.label()}--> {e.dst}{suffix}")
    return "\n".join(lines) + "\n"


def to_dot(cfg: CFG, name: str = "cfg") -> str:
    """Deterministic DOT rendering of the reachable graph.

    Collapsed goto labels appear as their own nodes with a dashed edge to
    the surviving point.
    """
    reach = set(cfg.reachable())
    lines = [f"digraph {name} {{"]
    shown = sorted(reach | {a for a, _ in cfg.aliases if _ in reach})
    for p in shown:
        lines.append(f'  "{p}";')
    for e in cfg.edges:
        if e.src not in reach:
            continue
        style = []
        if e.is_else:
            style.append("style=dotted")
        if e.marked:
            style.append("penwidth=2")
        attr = f', {", ".join(style)}' if style else ""
        lines.append(f'  "{e.src}" -> "{e.dst}" [label="{e.label()}"{attr}];')
    for alias, canon in cfg.aliases:
        if canon in reach:
            lines.append(f'  "{alias}" -> "{canon}" [label="goto", style=dashed];')
    lines.append("}")
    return "\n".join(lines) + "\n"
