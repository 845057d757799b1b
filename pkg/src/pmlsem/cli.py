"""Command-line frontend.

Exit codes: 0 success, 1 usage error, 2 parse or normalize error, 3 engine
contract violation, 4 comparison mismatch.  Diagnostics go to stderr,
results to stdout, and identical inputs and flags produce byte-identical
output.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import cfg as cfgmod
from . import denote as dn
from . import domain as dm
from . import oracle as orc
from . import syntax as syn
from . import system as sysm
from .state import EngineError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _env_default(name: str, fallback: int) -> int:
    raw = os.environ.get(f"PMLSEM_{name}")
    if raw is None:
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise _UsageError(f"PMLSEM_{name} must be an integer, got {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pmlsem", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def bounds(sp, fuel=True):
        sp.add_argument("--k", type=int, default=_env_default("K", 4),
                        help="spawn-unfolding iterations of the program fixpoint")
        sp.add_argument("--depth", type=int, default=_env_default("DEPTH", 16),
                        help="per-process fixpoint iterations (trace length bound)")
        if fuel:
            sp.add_argument("--fuel", type=int, default=_env_default("FUEL", 32),
                            help="interleaving step bound")

    sp = sub.add_parser("parse", help="parse and normalize, dump the AST")
    sp.add_argument("--format", choices=("text", "json"), default="text")
    sp.add_argument("file")

    sp = sub.add_parser("cfg", help="per-process control flow graphs")
    sp.add_argument("--dot", action="store_true", help="emit DOT digraphs")
    sp.add_argument("file")

    sp = sub.add_parser("traces", help="per-point conditional trace denotations")
    bounds(sp, fuel=False)
    sp.add_argument("--prune-unsat", action="store_true",
                    help="drop atomic branches whose guard is unsatisfiable")
    sp.add_argument("file")

    sp = sub.add_parser("run", help="propagated state sequences")
    bounds(sp)
    sp.add_argument("--max-seq-len", type=int, default=_env_default("MAX_LEN", 16))
    sp.add_argument("--max-sequences", type=int, default=10000,
                    help="stop enumerating after this many sequences")
    sp.add_argument("--format", choices=("text", "json"), default="text")
    sp.add_argument("--literal-interlv", action="store_true",
                    help="interleave lone rendezvous halves standalone (paper's literal rule)")
    sp.add_argument("--prune-unsat", action="store_true")
    sp.add_argument("file")

    sp = sub.add_parser("oracle", help="operational reference runs")
    sp.add_argument("--max-len", type=int, default=_env_default("MAX_LEN", 16))
    sp.add_argument("--format", choices=("text", "json"), default="text")
    sp.add_argument("file")

    sp = sub.add_parser("compare", help="denotational vs oracle sequence sets")
    bounds(sp, fuel=False)
    sp.add_argument("--max-len", type=int, default=_env_default("MAX_LEN", 8))
    sp.add_argument("file")
    return p


def _load(path: str) -> syn.Program:
    try:
        with open(path, encoding="utf-8") as f:
            source = f.read()
    except OSError as e:
        raise syn.ParseError(f"cannot read {path}: {e.strerror}", 0, 0)
    return syn.normalize(syn.parse_program(source))


# -- dumps -------------------------------------------------------------------

def _ast_json(obj):
    if dataclasses.is_dataclass(obj):
        d = {"node": type(obj).__name__}
        for f in dataclasses.fields(obj):
            d[f.name] = _ast_json(getattr(obj, f.name))
        return d
    if isinstance(obj, tuple):
        return [_ast_json(x) for x in obj]
    return obj


def _ast_text(prog: syn.Program) -> str:
    lines = []
    for g in prog.globals:
        if isinstance(g, syn.MtypeDecl):
            lines.append("mtype = {" + ", ".join(g.names) + "}")
        elif isinstance(g, syn.ChanDecl):
            lines.append(f"chan {g.name} = [{g.capacity}] of "
                         "{" + ", ".join(g.field_types) + "}")
        else:
            arr = f"[{g.array_len}]" if g.array_len is not None else ""
            if g.init is None:
                init = ""
            elif isinstance(g.init, tuple):
                init = " = {" + ", ".join(syn.render_expr(e) for e in g.init) + "}"
            else:
                init = f" = {syn.render_expr(g.init)}"
            lines.append(f"{g.type} {g.name}{arr}{init}")

    def walk(body, indent):
        pad = "  " * indent
        for ls in body:
            label = "".join(f"{l}: " for l in ls.labels)
            s = ls.stmt
            if isinstance(s, syn.IfFi):
                lines.append(f"{pad}{label}if")
                for b in s.branches:
                    lines.append(f"{pad}::")
                    walk(b.stmts, indent + 1)
                if s.else_branch:
                    lines.append(f"{pad}:: else ->")
                    walk(s.else_branch.stmts, indent + 1)
                lines.append(f"{pad}fi")
            elif isinstance(s, syn.Atomic):
                lines.append(f"{pad}{label}atomic {{")
                walk(s.body, indent + 1)
                lines.append(f"{pad}}}")
            else:
                lines.append(f"{pad}{label}{syn.render_stmt(s)}")

    for pt in prog.proctypes:
        params = "; ".join(f"{k} {n}" for n, k in pt.params)
        lines.append(f"proctype {pt.name}({params}) {{")
        walk(pt.body, 1)
        lines.append("}")
    lines.append("init {")
    walk(prog.init.body, 1)
    lines.append("}")
    return "\n".join(lines) + "\n"


def _seq_json(ctx, q: sysm.StateSeq) -> dict:
    return {"states": [sysm.render_state(ctx, s) for s in q.states],
            "termination": q.termination}


def _diag_json(ctx, d: sysm.DiscardDiagnostic) -> dict:
    return {"prefix": [sysm.render_state(ctx, s) for s in d.prefix],
            "guard": d.guard, "guard_resolved": d.guard_resolved,
            "reason": d.reason}


def _sorted_seqs(ctx, seqs):
    return sorted(seqs, key=lambda q: (len(q.states), q.termination,
                                       repr([sysm.state_key(ctx, s) for s in q.states])))


def _state_line(ctx, s) -> str:
    d = sysm.render_state(ctx, s)
    if d.get("bottom"):
        return "<bottom>"
    bits = [f"{k}={v}" for k, v in sorted(d["globals"].items())]
    for pid in sorted(d["procs"], key=int):
        pr = d["procs"][pid]
        inner = ",".join(f"{k}={v}" for k, v in sorted(pr["vars"].items()))
        bits.append(f"{pid}:{pr['proctype']}({inner})")
    for c in sorted(d["channels"]):
        q = ";".join(",".join(map(str, m)) for m in d["channels"][c])
        bits.append(f"{c}=[{q}]")
    bits.append(f"nr_pr={d['nr_pr']}")
    return " ".join(bits)


def _truncate_seqs(seqs, max_len):
    out = set()
    for q in seqs:
        if len(q.states) > max_len:
            out.add(sysm.StateSeq(q.states[:max_len], "cut"))
        else:
            out.add(q)
    return out


# -- subcommands ---------------------------------------------------------------

def cmd_parse(args) -> int:
    prog = _load(args.file)
    if args.format == "json":
        print(json.dumps(_ast_json(prog), indent=2, sort_keys=True))
    else:
        sys.stdout.write(_ast_text(prog))
    return 0


def cmd_cfg(args) -> int:
    prog = _load(args.file)
    chan_table = prog.chan_table()
    procs = [(pt.name, pt.body) for pt in prog.proctypes] + [("init", prog.init.body)]
    for name, body in procs:
        g = cfgmod.build_cfg(body, chan_table)
        if args.dot:
            sys.stdout.write(cfgmod.to_dot(g, name))
        else:
            print(f"-- {name}")
            sys.stdout.write(cfgmod.dump_cfg(g))
    return 0


def cmd_traces(args) -> int:
    prog = _load(args.file)
    ctx = sysm.build_context(prog)
    I = sysm.program_fixpoint(ctx, args.k, args.depth, args.prune_unsat)
    for sig in ctx.sigs:
        dctx = dn.DenoteCtx(prog, sig.name, ctx.cfgs[sig.name], ctx.proc_env(sig),
                            I, ctx.keep_locs(), ctx.hs_loc, ctx.nrpr_loc,
                            ctx.mtype_first)
        uni = sysm.universe_for_sig(ctx, sig) if args.prune_unsat else None
        eta = dn.process_denotation(dctx, args.depth, uni)
        print(f"-- {sig.name}")
        for point in sorted(eta):
            print(f"   point {point}:")
            for line in dm.render_trace_set(eta[point]).splitlines():
                print(f"      {line}")
    return 0


def cmd_run(args) -> int:
    prog = _load(args.file)
    out = sysm.sem_prog(prog, k=args.k, depth=args.depth, fuel=args.fuel,
                        literal=args.literal_interlv, prune_unsat=args.prune_unsat,
                        max_sequences=args.max_sequences)
    ctx = out.context
    seqs = _truncate_seqs(out.sequences, args.max_seq_len)
    ordered = _sorted_seqs(ctx, seqs)
    if args.format == "json":
        doc = {
            "command": "run",
            "params": {"k": args.k, "depth": args.depth, "fuel": args.fuel,
                       "max_seq_len": args.max_seq_len,
                       "literal_interlv": args.literal_interlv,
                       "prune_unsat": args.prune_unsat},
            "initial": sysm.render_state(ctx, out.initial),
            "sequences": [_seq_json(ctx, q) for q in ordered],
            "diagnostics": [_diag_json(ctx, d) for d in out.diagnostics],
            "sequence_cap_hit": out.hit_sequence_cap,
        }
        print(json.dumps(doc, indent=2, sort_keys=True))
        return 0
    print(f"initial: {_state_line(ctx, out.initial)}")
    print(f"sequences: {len(ordered)}"
          + (" (cap hit)" if out.hit_sequence_cap else ""))
    for i, q in enumerate(ordered):
        print(f"seq {i} [{q.termination}]")
        for s in q.states:
            print(f"  {_state_line(ctx, s)}")
    print(f"diagnostics: {len(out.diagnostics)}")
    for d in out.diagnostics:
        print(f"  discarded after {len(d.prefix)} steps at guard "
              f"{d.guard_resolved} ({d.reason})")
    return 0


def cmd_oracle(args) -> int:
    prog = _load(args.file)
    o, res = orc.run_bounded(prog, args.max_len)
    ctx = o.ctx
    ordered = _sorted_seqs(ctx, res.sequences)
    if args.format == "json":
        doc = {
            "command": "oracle",
            "params": {"max_len": args.max_len},
            "initial": sysm.render_state(ctx, ctx.sigma0),
            "sequences": [_seq_json(ctx, q) for q in ordered],
            "deadlocks": [
                {"state": sysm.render_state(ctx, c.state),
                 "points": {str(p.pid): p.point for p in c.procs}}
                for c in res.deadlocks],
            "terminations": len(res.terminations),
        }
        print(json.dumps(doc, indent=2, sort_keys=True))
        return 0
    print(f"initial: {_state_line(ctx, ctx.sigma0)}")
    print(f"sequences: {len(ordered)}")
    for i, q in enumerate(ordered):
        print(f"seq {i} [{q.termination}]")
        for s in q.states:
            print(f"  {_state_line(ctx, s)}")
    print(f"deadlocks: {len(res.deadlocks)}")
    for c in res.deadlocks:
        pts = " ".join(f"{p.pid}@{p.point}" for p in c.procs)
        print(f"  {_state_line(ctx, c.state)} | {pts}")
    print(f"terminations: {len(res.terminations)}")
    return 0


def cmd_compare(args) -> int:
    prog = _load(args.file)
    r = orc.compare_semantics(prog, max_len=args.max_len, k=args.k, depth=args.depth)
    print(f"denotational sequences: {r.den_count}")
    print(f"oracle sequences:       {r.oracle_count}")
    print(f"oracle deadlocks:       {r.deadlock_count}")
    if r.match:
        print("MATCH: sequence sets are equal")
        return 0
    print(f"MISMATCH: {len(r.missing)} oracle-only, {len(r.extra)} denotation-only")
    for m in r.missing[:5]:
        print(f"  oracle-only: {m}")
    for e in r.extra[:5]:
        print(f"  denotation-only: {e}")
    return 4


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"pmlsem: {e}", file=sys.stderr)
        return 1
    try:
        handler = {
            "parse": cmd_parse, "cfg": cmd_cfg, "traces": cmd_traces,
            "run": cmd_run, "oracle": cmd_oracle, "compare": cmd_compare,
        }[args.command]
        return handler(args)
    except (syn.ParseError, syn.NormalizeError) as e:
        print(f"pmlsem: {e}", file=sys.stderr)
        return 2
    except (cfgmod.BuildError, dn.DenoteError, EngineError) as e:
        print(f"pmlsem: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
