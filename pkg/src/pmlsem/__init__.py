"""Conditional-trace fixpoint semantics for a PROMELA fragment, with an
operational reference interpreter for differential testing."""

from .syntax import parse_program, normalize, ParseError, NormalizeError
from .cfg import build_cfg, to_dot, BuildError
from .system import build_context, sem_prog, propagate, interlv
from .oracle import Oracle, run_bounded, compare_semantics

__all__ = [
    "parse_program", "normalize", "ParseError", "NormalizeError",
    "build_cfg", "to_dot", "BuildError",
    "build_context", "sem_prog", "propagate", "interlv",
    "Oracle", "run_bounded", "compare_semantics",
]
