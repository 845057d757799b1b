"""Parser and AST for the PROMELA fragment, plus program normalization.

The grammar is a strict subset of SPIN's (see docs/grammar.ebnf).  Constructs
outside the fragment (for, unless, timeout, select, inline, d_step,
preprocessor directives) are rejected with a fragment-unsupported diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union


class ParseError(Exception):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.msg = msg
        self.line = line
        self.col = col


class NormalizeError(Exception):
    pass


# ---------------------------------------------------------------------------
# Lexer

KEYWORDS = {
    "skip", "goto", "break", "if", "fi", "do", "od", "atomic", "printf",
    "run", "else", "chan", "of", "bit", "bool", "byte", "int", "mtype",
    "proctype", "active", "init", "true", "false",
}

# Known SPIN constructs deliberately outside the fragment.
UNSUPPORTED = {
    "for", "unless", "timeout", "select", "inline", "d_step", "never",
    "ltl", "typedef", "provided", "priority", "hidden", "show", "local",
    "xr", "xs", "eval", "len", "empty", "full", "nempty", "nfull",
    "unsigned", "short", "pid", "c_code", "c_expr", "c_decl",
}

TYPE_NAMES = ("bit", "bool", "byte", "int", "mtype")

PUNCT = [
    "::", "->", "&&", "||", "==", "!=", "<=", ">=",
    ";", ":", ",", "{", "}", "(", ")", "[", "]",
    "=", "!", "?", "<", ">", "+", "-", "*", "/", "%",
]


@dataclass(frozen=True)
class Tok:
    kind: str  # "ident", "num", "string", "kw", punctuation literal, "eof"
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Tok]:
    toks: list[Tok] = []
    i, line, col = 0, 1, 1
    n = len(source)

    def err(msg: str):
        raise ParseError(msg, line, col)

    while i < n:
        c = source[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if source.startswith("//", i):
            while i < n and source[i] != "\n":
                i += 1
            continue
        if source.startswith("/*", i):
            end = source.find("*/", i + 2)
            if end < 0:
                err("unterminated comment")
            skipped = source[i:end + 2]
            line += skipped.count("\n")
            if "\n" in skipped:
                col = len(skipped) - skipped.rfind("\n")
            else:
                col += len(skipped)
            i = end + 2
            continue
        if c == "#":
            err("fragment-unsupported: preprocessor directives")
        if c == '"':
            j = i + 1
            while j < n and source[j] != '"':
                if source[j] == "\n":
                    err("unterminated string")
                j += 1
            if j >= n:
                err("unterminated string")
            toks.append(Tok("string", source[i + 1:j], line, col))
            col += j + 1 - i
            i = j + 1
            continue
        if c.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            toks.append(Tok("num", source[i:j], line, col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            if word in UNSUPPORTED:
                err(f"fragment-unsupported: '{word}'")
            kind = "kw" if word in KEYWORDS else "ident"
            toks.append(Tok(kind, word, line, col))
            col += j - i
            i = j
            continue
        for p in PUNCT:
            if source.startswith(p, i):
                toks.append(Tok(p, p, line, col))
                col += len(p)
                i += len(p)
                break
        else:
            err(f"unexpected character {c!r}")
    toks.append(Tok("eof", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# AST

Pos = tuple  # (line, col)


@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class MtypeLit:
    name: str
    value: int


@dataclass(frozen=True)
class VarRead:
    name: str


@dataclass(frozen=True)
class ArrayRead:
    name: str
    index: "RExpr"


@dataclass(frozen=True)
class Unary:
    op: str  # "!" or "-"
    operand: "RExpr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "RExpr"
    right: "RExpr"


RExpr = Union[Num, MtypeLit, VarRead, ArrayRead, Unary, Binary]


@dataclass(frozen=True)
class LVar:
    name: str


@dataclass(frozen=True)
class LArr:
    name: str
    index: RExpr


LExpr = Union[LVar, LArr]


@dataclass(frozen=True)
class Skip:
    pos: Pos


@dataclass(frozen=True)
class Goto:
    pos: Pos
    label: str


@dataclass(frozen=True)
class Break:
    pos: Pos


@dataclass(frozen=True)
class ExprStmt:
    pos: Pos
    expr: RExpr


@dataclass(frozen=True)
class Assign:
    pos: Pos
    target: LExpr
    value: RExpr


@dataclass(frozen=True)
class DeclInit:
    pos: Pos
    type: str
    name: str
    init: Optional[RExpr]  # filled with the type default by normalize


@dataclass(frozen=True)
class Send:
    pos: Pos
    chan: str
    args: tuple
    sync: Optional[bool] = None  # resolved at CFG build from the declaration


@dataclass(frozen=True)
class Receive:
    pos: Pos
    chan: str
    targets: tuple
    sync: Optional[bool] = None


@dataclass(frozen=True)
class Run:
    pos: Pos
    proc: str
    args: tuple


@dataclass(frozen=True)
class Branch:
    stmts: tuple  # non-empty tuple of LStmt; the first statement is the guard


@dataclass(frozen=True)
class IfFi:
    pos: Pos
    branches: tuple
    else_branch: Optional[Branch]


@dataclass(frozen=True)
class DoOd:
    pos: Pos
    branches: tuple
    else_branch: Optional[Branch]


@dataclass(frozen=True)
class Atomic:
    pos: Pos
    body: tuple  # non-empty tuple of LStmt


@dataclass(frozen=True)
class Printf:
    pos: Pos
    fmt: str
    args: tuple


Stmt = Union[Skip, Goto, Break, ExprStmt, Assign, DeclInit, Send, Receive,
             Run, IfFi, DoOd, Atomic, Printf]


@dataclass(frozen=True)
class LStmt:
    """A statement with the labels attached in front of it."""

    labels: tuple
    stmt: Stmt


@dataclass(frozen=True)
class VarDecl:
    pos: Pos
    type: str
    name: str
    array_len: Optional[int]
    init: Optional[object]  # RExpr, or tuple of RExpr for arrays


@dataclass(frozen=True)
class ChanDecl:
    pos: Pos
    name: str
    capacity: int
    field_types: tuple


@dataclass(frozen=True)
class MtypeDecl:
    pos: Pos
    names: tuple


GlobalDecl = Union[VarDecl, ChanDecl, MtypeDecl]


@dataclass(frozen=True)
class ProctypeDecl:
    pos: Pos
    name: str
    params: tuple  # tuple of (name, type)
    body: tuple  # tuple of LStmt
    active_count: Optional[int] = None


@dataclass(frozen=True)
class InitDecl:
    pos: Pos
    body: tuple


@dataclass(frozen=True)
class Program:
    globals: tuple
    proctypes: tuple
    init: Optional[InitDecl]

    def mtype_table(self) -> dict:
        """Enumerator name to value, 1-based in declaration order."""
        table = {}
        for g in self.globals:
            if isinstance(g, MtypeDecl):
                for name in g.names:
                    if name not in table:
                        table[name] = len(table) + 1
        return table

    def chan_table(self) -> dict:
        return {g.name: g for g in self.globals if isinstance(g, ChanDecl)}

    def proctype(self, name: str) -> ProctypeDecl:
        for p in self.proctypes:
            if p.name == name:
                return p
        raise KeyError(name)


# ---------------------------------------------------------------------------
# Parser

BIN_LEVELS = [
    ("||",),
    ("&&",),
    ("==", "!="),
    ("<", "<=", ">", ">="),
    ("+", "-"),
    ("*", "/", "%"),
]


class _Parser:
    def __init__(self, toks: list[Tok]):
        self.toks = toks
        self.pos = 0

    @property
    def cur(self) -> Tok:
        return self.toks[self.pos]

    def at(self, kind: str, text: Optional[str] = None) -> bool:
        t = self.cur
        return t.kind == kind and (text is None or t.text == text)

    def advance(self) -> Tok:
        t = self.cur
        if t.kind != "eof":
            self.pos += 1
        return t

    def accept(self, kind: str, text: Optional[str] = None) -> Optional[Tok]:
        if self.at(kind, text):
            return self.advance()
        return None

    def expect(self, kind: str, what: str = "") -> Tok:
        if not self.at(kind):
            t = self.cur
            shown = t.text or t.kind
            raise ParseError(f"expected {what or kind}, found {shown!r}", t.line, t.col)
        return self.advance()

    def err(self, msg: str):
        t = self.cur
        raise ParseError(msg, t.line, t.col)

    # -- top level ----------------------------------------------------------

    def program(self) -> Program:
        globs: list = []
        procs: list = []
        init: Optional[InitDecl] = None
        while not self.at("eof"):
            if self.at("kw", "mtype") and self.toks[self.pos + 1].kind == "=":
                globs.append(self.mtype_decl())
            elif self.at("kw", "chan"):
                globs.append(self.chan_decl())
            elif self.at("kw", "active") or self.at("kw", "proctype"):
                procs.append(self.proctype_decl())
            elif self.at("kw", "init"):
                if init is not None:
                    self.err("duplicate init process")
                init = self.init_decl()
            elif self.at("kw") and self.cur.text in TYPE_NAMES:
                globs.extend(self.var_decl())
            else:
                self.err("expected a declaration")
        return Program(tuple(globs), tuple(procs), init)

    def mtype_decl(self) -> MtypeDecl:
        t = self.expect("kw")
        self.expect("=")
        self.expect("{")
        names = [self.expect("ident", "mtype enumerator").text]
        while self.accept(","):
            names.append(self.expect("ident", "mtype enumerator").text)
        self.expect("}")
        self.accept(";")
        return MtypeDecl((t.line, t.col), tuple(names))

    def chan_decl(self) -> ChanDecl:
        t = self.expect("kw")
        name = self.expect("ident", "channel name").text
        self.expect("=")
        self.expect("[")
        cap = int(self.expect("num", "channel capacity").text)
        self.expect("]")
        if not self.accept("kw", "of"):
            self.err("expected 'of'")
        self.expect("{")
        fields = [self.type_name()]
        while self.accept(","):
            fields.append(self.type_name())
        self.expect("}")
        self.accept(";")
        return ChanDecl((t.line, t.col), name, cap, tuple(fields))

    def type_name(self) -> str:
        t = self.cur
        if t.kind == "kw" and t.text in TYPE_NAMES:
            self.advance()
            return t.text
        self.err("expected a type name")

    def var_decl(self) -> list[VarDecl]:
        ty_tok = self.cur
        ty = self.type_name()
        decls = []
        while True:
            name = self.expect("ident", "variable name").text
            arr = None
            if self.accept("["):
                arr = int(self.expect("num", "array length").text)
                self.expect("]")
            init = None
            if self.accept("="):
                if self.at("{"):
                    self.advance()
                    elems = [self.expr()]
                    while self.accept(","):
                        elems.append(self.expr())
                    self.expect("}")
                    init = tuple(elems)
                else:
                    init = self.expr()
            decls.append(VarDecl((ty_tok.line, ty_tok.col), ty, name, arr, init))
            if not self.accept(","):
                break
        self.accept(";")
        return decls

    def proctype_decl(self) -> ProctypeDecl:
        active = None
        t = self.cur
        if self.accept("kw", "active"):
            active = 1
            if self.accept("["):
                active = int(self.expect("num", "instance count").text)
                self.expect("]")
        if not self.accept("kw", "proctype"):
            self.err("expected 'proctype'")
        name = self.expect("ident", "proctype name").text
        self.expect("(")
        params: list = []
        if not self.at(")"):
            while True:
                ty = self.type_name()
                params.append((self.expect("ident", "parameter name").text, ty))
                while self.accept(","):
                    params.append((self.expect("ident", "parameter name").text, ty))
                if not self.accept(";"):
                    break
        self.expect(")")
        seen = set()
        for pname, _ in params:
            if pname in seen:
                self.err(f"duplicate parameter '{pname}'")
            seen.add(pname)
        self.expect("{")
        body = self.seq(("}",))
        self.expect("}")
        decl = ProctypeDecl((t.line, t.col), name, tuple(params), tuple(body), active)
        _check_labels(decl.name, decl.body)
        return decl

    def init_decl(self) -> InitDecl:
        t = self.expect("kw")
        self.expect("{")
        body = self.seq(("}",))
        self.expect("}")
        decl = InitDecl((t.line, t.col), tuple(body))
        _check_labels("init", decl.body)
        return decl

    # -- statements ---------------------------------------------------------

    def seq(self, stoppers: tuple) -> list[LStmt]:
        stmts: list[LStmt] = []
        self._skip_seps()
        while not self._at_any(stoppers) and not self.at("eof"):
            stmts.append(self.lstmt())
            if not self._at_any(stoppers):
                if not (self.accept(";") or self.accept("->")):
                    if self._at_any(stoppers) or self.at("eof"):
                        break
                    self.err("expected ';' or '->' between statements")
            self._skip_seps()
        return stmts

    def _skip_seps(self):
        while self.accept(";") or self.accept("->"):
            pass

    def _at_any(self, stoppers: tuple) -> bool:
        for s in stoppers:
            if s in ("fi", "od", "else"):
                if self.at("kw", s):
                    return True
            elif self.at(s):
                return True
        return False

    def lstmt(self) -> LStmt:
        labels = []
        while self.cur.kind == "ident" and self.toks[self.pos + 1].kind == ":":
            labels.append(self.advance().text)
            self.advance()
        return LStmt(tuple(labels), self.stmt())

    def stmt(self) -> Stmt:
        t = self.cur
        pos = (t.line, t.col)
        if self.accept("kw", "skip"):
            return Skip(pos)
        if self.accept("kw", "goto"):
            return Goto(pos, self.expect("ident", "label").text)
        if self.accept("kw", "break"):
            return Break(pos)
        if self.at("kw", "if"):
            return self.selection(pos, "if", "fi")
        if self.at("kw", "do"):
            return self.selection(pos, "do", "od")
        if self.accept("kw", "atomic"):
            self.expect("{")
            body = self.seq(("}",))
            self.expect("}")
            if not body:
                self.err("empty atomic block")
            return Atomic(pos, tuple(body))
        if self.accept("kw", "printf"):
            self.expect("(")
            fmt = self.expect("string", "format string").text
            args = []
            while self.accept(","):
                args.append(self.expr())
            self.expect(")")
            return Printf(pos, fmt, tuple(args))
        if self.accept("kw", "run"):
            name = self.expect("ident", "proctype name").text
            self.expect("(")
            args = []
            if not self.at(")"):
                args.append(self.expr())
                while self.accept(","):
                    args.append(self.expr())
            self.expect(")")
            return Run(pos, name, tuple(args))
        if self.at("kw") and self.cur.text in TYPE_NAMES:
            ty = self.type_name()
            name = self.expect("ident", "variable name").text
            if self.at("["):
                self.err("local array declarations are outside the fragment")
            init = self.expr() if self.accept("=") else None
            return DeclInit(pos, ty, name, init)
        if t.kind == "ident":
            nxt = self.toks[self.pos + 1]
            if nxt.kind == "!":
                self.advance()
                self.advance()
                args = [self.expr()]
                while self.accept(","):
                    args.append(self.expr())
                return Send(pos, t.text, tuple(args))
            if nxt.kind == "?":
                self.advance()
                self.advance()
                targets = [self.lexpr()]
                while self.accept(","):
                    targets.append(self.lexpr())
                return Receive(pos, t.text, tuple(targets))
        # assignment or bare expression
        start = self.pos
        try:
            target = self.lexpr()
        except ParseError:
            target = None
            self.pos = start
        if target is not None and self.at("="):
            self.advance()
            return Assign(pos, target, self.expr())
        self.pos = start
        return ExprStmt(pos, self.expr())

    def selection(self, pos: Pos, opener: str, closer: str) -> Stmt:
        self.expect("kw")  # if / do
        branches: list[Branch] = []
        else_branch: Optional[Branch] = None
        while self.accept("::"):
            if self.at("kw", "else"):
                t = self.advance()
                if else_branch is not None:
                    self.err("duplicate else branch")
                self._skip_seps()
                stmts = self.seq(("::", closer))
                if not stmts:
                    stmts = [LStmt((), Skip((t.line, t.col)))]
                else_branch = Branch(tuple(stmts))
            else:
                stmts = self.seq(("::", closer))
                if not stmts:
                    self.err("empty branch")
                branches.append(Branch(tuple(stmts)))
        if not self.accept("kw", closer):
            self.err(f"expected '{closer}'")
        if not branches and else_branch is None:
            self.err(f"{opener} with no branches")
        if opener == "if":
            return IfFi(pos, tuple(branches), else_branch)
        return DoOd(pos, tuple(branches), else_branch)

    # -- expressions --------------------------------------------------------

    def lexpr(self) -> LExpr:
        name = self.expect("ident", "l-value").text
        if self.accept("["):
            idx = self.expr()
            self.expect("]")
            return LArr(name, idx)
        return LVar(name)

    def expr(self, level: int = 0) -> RExpr:
        if level >= len(BIN_LEVELS):
            return self.unary()
        left = self.expr(level + 1)
        while self.cur.kind in BIN_LEVELS[level]:
            op = self.advance().text
            right = self.expr(level + 1)
            left = Binary(op, left, right)
        return left

    def unary(self) -> RExpr:
        if self.at("!"):
            self.advance()
            return Unary("!", self.unary())
        if self.at("-"):
            self.advance()
            return Unary("-", self.unary())
        return self.primary()

    def primary(self) -> RExpr:
        t = self.cur
        if t.kind == "num":
            self.advance()
            return Num(int(t.text))
        if self.accept("kw", "true"):
            return Num(1)
        if self.accept("kw", "false"):
            return Num(0)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if self.at("kw", "run"):
            self.err("'run' is a statement in this fragment, not an expression")
        if t.kind == "ident":
            self.advance()
            if self.accept("["):
                idx = self.expr()
                self.expect("]")
                return ArrayRead(t.text, idx)
            return VarRead(t.text)
        self.err("expected an expression")


def _check_labels(owner: str, body: tuple):
    seen: set = set()

    def walk(stmts):
        for ls in stmts:
            for lab in ls.labels:
                if lab in seen:
                    raise ParseError(f"duplicate label '{lab}' in {owner}", *ls.stmt.pos)
                seen.add(lab)
            s = ls.stmt
            if isinstance(s, (IfFi, DoOd)):
                for b in s.branches:
                    walk(b.stmts)
                if s.else_branch:
                    walk(s.else_branch.stmts)
            elif isinstance(s, Atomic):
                walk(s.body)

    walk(body)


# ---------------------------------------------------------------------------
# Expression utilities

def map_expr(f, e: RExpr) -> RExpr:
    if isinstance(e, ArrayRead):
        e = ArrayRead(e.name, map_expr(f, e.index))
    elif isinstance(e, Unary):
        e = Unary(e.op, map_expr(f, e.operand))
    elif isinstance(e, Binary):
        e = Binary(e.op, map_expr(f, e.left), map_expr(f, e.right))
    return f(e)


_PREC = {}
for _i, _ops in enumerate(BIN_LEVELS):
    for _op in _ops:
        _PREC[_op] = _i


def render_expr(e: RExpr) -> str:
    def rec(e, parent_prec: int) -> str:
        if isinstance(e, Num):
            return str(e.value)
        if isinstance(e, MtypeLit):
            return e.name
        if isinstance(e, VarRead):
            return e.name
        if isinstance(e, ArrayRead):
            return f"{e.name}[{rec(e.index, -1)}]"
        if isinstance(e, Unary):
            inner = rec(e.operand, 99)
            return f"{e.op}{inner}"
        if isinstance(e, Binary):
            prec = _PREC[e.op]
            s = f"{rec(e.left, prec)}{e.op}{rec(e.right, prec + 1)}"
            return f"({s})" if prec < parent_prec else s
        raise TypeError(e)

    return rec(e, -1)


def render_lexpr(e: LExpr) -> str:
    if isinstance(e, LVar):
        return e.name
    return f"{e.name}[{render_expr(e.index)}]"


def render_stmt(s: Stmt) -> str:
    """Source-like text for a basic statement (CFG edge labels, dumps)."""
    if isinstance(s, Skip):
        return "skip"
    if isinstance(s, Goto):
        return f"goto {s.label}"
    if isinstance(s, ExprStmt):
        return render_expr(s.expr)
    if isinstance(s, Assign):
        return f"{render_lexpr(s.target)}={render_expr(s.value)}"
    if isinstance(s, DeclInit):
        init = f"={render_expr(s.init)}" if s.init is not None else ""
        return f"{s.type} {s.name}{init}"
    if isinstance(s, Send):
        return f"{s.chan}!" + ",".join(render_expr(a) for a in s.args)
    if isinstance(s, Receive):
        return f"{s.chan}?" + ",".join(render_lexpr(t) for t in s.targets)
    if isinstance(s, Run):
        return f"run {s.proc}(" + ",".join(render_expr(a) for a in s.args) + ")"
    raise TypeError(f"not a basic statement: {type(s).__name__}")


def _resolve_mtypes(p: Program) -> Program:
    table = p.mtype_table()
    if not table:
        return p

    def fix(e: RExpr) -> RExpr:
        if isinstance(e, VarRead) and e.name in table:
            return MtypeLit(e.name, table[e.name])
        return e

    def fix_lexpr(le: LExpr) -> LExpr:
        if isinstance(le, LArr):
            return LArr(le.name, map_expr(fix, le.index))
        return le

    def fix_stmt(s: Stmt) -> Stmt:
        if isinstance(s, ExprStmt):
            return ExprStmt(s.pos, map_expr(fix, s.expr))
        if isinstance(s, Assign):
            return Assign(s.pos, fix_lexpr(s.target), map_expr(fix, s.value))
        if isinstance(s, DeclInit):
            return DeclInit(s.pos, s.type, s.name,
                            map_expr(fix, s.init) if s.init is not None else None)
        if isinstance(s, Send):
            return Send(s.pos, s.chan, tuple(map_expr(fix, a) for a in s.args), s.sync)
        if isinstance(s, Receive):
            return Receive(s.pos, s.chan, tuple(fix_lexpr(t) for t in s.targets), s.sync)
        if isinstance(s, Run):
            return Run(s.pos, s.proc, tuple(map_expr(fix, a) for a in s.args))
        if isinstance(s, (IfFi, DoOd)):
            branches = tuple(Branch(fix_body(b.stmts)) for b in s.branches)
            eb = Branch(fix_body(s.else_branch.stmts)) if s.else_branch else None
            cls = type(s)
            return cls(s.pos, branches, eb)
        if isinstance(s, Atomic):
            return Atomic(s.pos, fix_body(s.body))
        if isinstance(s, Printf):
            return Printf(s.pos, s.fmt, tuple(map_expr(fix, a) for a in s.args))
        return s

    def fix_body(body: tuple) -> tuple:
        return tuple(LStmt(ls.labels, fix_stmt(ls.stmt)) for ls in body)

    def fix_global(g: GlobalDecl) -> GlobalDecl:
        if isinstance(g, VarDecl) and g.init is not None:
            if isinstance(g.init, tuple):
                return replace(g, init=tuple(map_expr(fix, e) for e in g.init))
            return replace(g, init=map_expr(fix, g.init))
        return g

    return Program(
        tuple(fix_global(g) for g in p.globals),
        tuple(replace(pt, body=fix_body(pt.body)) for pt in p.proctypes),
        InitDecl(p.init.pos, fix_body(p.init.body)) if p.init else None,
    )


def parse_program(source: str) -> Program:
    """Parse fragment source into an AST.

    References to undeclared variables, channels or proctypes are not
    checked here; they surface during denotation.
    """
    prog = _Parser(tokenize(source)).program()
    return _resolve_mtypes(prog)


# ---------------------------------------------------------------------------
# Normalization

def _default_init(ty: str, mtypes: dict) -> RExpr:
    if ty == "mtype" and mtypes:
        name = min(mtypes, key=mtypes.get)
        return MtypeLit(name, mtypes[name])
    return Num(0)


class _LabelGen:
    def __init__(self, taken: set):
        self.taken = set(taken)
        self.n = 0

    def fresh(self, prefix: str) -> str:
        while True:
            cand = f"_{prefix}{self.n}"
            self.n += 1
            if cand not in self.taken:
                self.taken.add(cand)
                return cand


def _collect_labels(body: tuple) -> set:
    out: set = set()

    def walk(stmts):
        for ls in stmts:
            out.update(ls.labels)
            s = ls.stmt
            if isinstance(s, (IfFi, DoOd)):
                for b in s.branches:
                    walk(b.stmts)
                if s.else_branch:
                    walk(s.else_branch.stmts)
            elif isinstance(s, Atomic):
                walk(s.body)

    walk(body)
    return out


def _has_break(stmts: tuple) -> bool:
    for ls in stmts:
        s = ls.stmt
        if isinstance(s, Break):
            return True
        if isinstance(s, IfFi):
            for b in s.branches:
                if _has_break(b.stmts):
                    return True
            if s.else_branch and _has_break(s.else_branch.stmts):
                return True
        elif isinstance(s, Atomic):
            if _has_break(s.body):
                return True
        # nested DoOd keeps its own breaks
    return False


def _replace_break(stmts: tuple, target: str) -> tuple:
    out = []
    for ls in stmts:
        s = ls.stmt
        if isinstance(s, Break):
            s = Goto(s.pos, target)
        elif isinstance(s, IfFi):
            branches = tuple(Branch(_replace_break(b.stmts, target)) for b in s.branches)
            eb = Branch(_replace_break(s.else_branch.stmts, target)) if s.else_branch else None
            s = IfFi(s.pos, branches, eb)
        elif isinstance(s, Atomic):
            s = Atomic(s.pos, _replace_break(s.body, target))
        out.append(LStmt(ls.labels, s))
    return tuple(out)


def _normalize_body(body: tuple, mtypes: dict, gen: _LabelGen) -> tuple:
    """Bottom-up: default initializers, drop printf, desugar do/od."""

    def norm_seq(stmts: tuple) -> tuple:
        out: list[LStmt] = []
        i = 0
        pending: list[tuple] = []  # (after_label,) to attach to the next statement
        for i, ls in enumerate(stmts):
            s = ls.stmt
            labels = ls.labels
            if pending:
                labels = tuple(pending) + labels
                pending = []
            if isinstance(s, Printf):
                if labels:
                    pending = list(labels)
                continue
            if isinstance(s, DeclInit) and s.init is None:
                s = DeclInit(s.pos, s.type, s.name, _default_init(s.type, mtypes))
            elif isinstance(s, IfFi):
                branches = tuple(Branch(norm_seq(b.stmts)) for b in s.branches)
                eb = Branch(norm_seq(s.else_branch.stmts)) if s.else_branch else None
                s = IfFi(s.pos, branches, eb)
            elif isinstance(s, Atomic):
                s = Atomic(s.pos, norm_seq(s.body))
            elif isinstance(s, DoOd):
                s, labels, after = _desugar_do(s, labels, mtypes, gen)
                if after is not None:
                    pending = [after]
            out.append(LStmt(labels, s))
        if pending:
            # break targeted past a loop with nothing after it
            out.append(LStmt(tuple(pending), Skip((0, 0))))
        return tuple(out)

    def _desugar_do(s: DoOd, labels: tuple, mtypes: dict, gen: _LabelGen):
        head = labels[0] if labels else gen.fresh("do")
        new_labels = labels if labels else (head,)
        needs_after = any(_has_break(b.stmts) for b in s.branches) or (
            s.else_branch and _has_break(s.else_branch.stmts))
        after = gen.fresh("brk") if needs_after else None

        def loop_branch(b: Branch) -> Branch:
            stmts = norm_seq(b.stmts)
            if after is not None:
                stmts = _replace_break(stmts, after)
            last = stmts[-1].stmt if stmts else None
            if not isinstance(last, Goto):
                stmts = stmts + (LStmt((), Goto(s.pos, head)),)
            return Branch(stmts)

        branches = tuple(loop_branch(b) for b in s.branches)
        eb = loop_branch(s.else_branch) if s.else_branch else None
        return IfFi(s.pos, branches, eb), new_labels, after

    return norm_seq(body)


def normalize(p: Program) -> Program:
    """Normalized form: active proctypes become runs in init, every local
    declaration carries an initializer, printf is gone, do/od is desugared
    into if/fi with gotos.  Idempotent."""
    mtypes = p.mtype_table()

    active_runs: list[LStmt] = []
    proctypes = []
    for pt in p.proctypes:
        if pt.active_count:
            if pt.params:
                raise NormalizeError(
                    f"active proctype '{pt.name}' has parameters but no actuals")
            for _ in range(pt.active_count):
                active_runs.append(LStmt((), Run(pt.pos, pt.name, ())))
        gen = _LabelGen(_collect_labels(pt.body))
        proctypes.append(ProctypeDecl(
            pt.pos, pt.name, pt.params,
            _normalize_body(pt.body, mtypes, gen), None))

    init = p.init
    init_body = tuple(init.body) if init else ()
    if active_runs:
        init_body = init_body + (LStmt((), Atomic((0, 0), tuple(active_runs))),)
    if init is None:
        init = InitDecl((0, 0), init_body)
    else:
        init = InitDecl(init.pos, init_body)
    gen = _LabelGen(_collect_labels(init.body))
    init = InitDecl(init.pos, _normalize_body(init.body, mtypes, gen))

    return Program(p.globals, tuple(proctypes), init)
