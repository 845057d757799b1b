"""System states: memory, channel instances, environments.

States are persistent values: every mutation returns a new state and never
touches its input.  The distinguished inconsistent state (bottom) absorbs
all reads and updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

# Scalar kinds of the fragment.  Arrays are a value holding a fixed-length
# vector of scalars; channels live in their own store and are referenced
# by id.
SCALAR_KINDS = ("bit", "bool", "byte", "int", "mtype")

INT_MIN = -(2**31)
INT_MAX = 2**31 - 1


class EngineError(Exception):
    """Contract violation inside the semantics engine."""


class BottomSignal(Exception):
    """Raised by evaluation when the result is the inconsistent state.

    Carried until an update turns it into the bottom state; guards treat
    it as falsity.
    """


@dataclass(frozen=True)
class Loc:
    """Opaque memory location token.

    Concrete locations use counter-based tokens; placeholder locations in
    most-general denotations use structured tuples so that renaming stays
    deterministic.
    """

    token: tuple

    def __repr__(self) -> str:
        return "l<" + ".".join(str(t) for t in self.token) + ">"


@dataclass(frozen=True)
class PidTok:
    """Placeholder for a not-yet-assigned process id."""

    token: tuple

    def __repr__(self) -> str:
        return "pid<" + ".".join(str(t) for t in self.token) + ">"


class LocAllocator:
    """Monotone counter of fresh concrete locations, one per engine run."""

    def __init__(self) -> None:
        self._next = 0

    def fresh(self, hint: str = "") -> Loc:
        n = self._next
        self._next = n + 1
        return Loc(("c", n, hint))


def wrap_scalar(kind: str, v: int) -> int:
    """Coerce a raw integer into the range of a scalar kind.

    bit/bool truncate to one bit, byte wraps mod 256, int wraps as 32-bit
    two's complement, mtype wraps like byte.
    """
    if kind in ("bit", "bool"):
        return int(v) & 1
    if kind in ("byte", "mtype"):
        return int(v) & 0xFF
    if kind == "int":
        return ((int(v) - INT_MIN) % (2**32)) + INT_MIN
    raise EngineError(f"not a scalar kind: {kind}")


@dataclass(frozen=True)
class Value:
    """A storable value: scalar, channel reference, or array."""

    kind: str  # one of SCALAR_KINDS, "chan", "array"
    payload: Union[int, PidTok, tuple]
    elem_kind: Optional[str] = None  # arrays only

    def __repr__(self) -> str:
        if self.kind == "array":
            return "[" + ",".join(repr(v) for v in self.payload) + "]"
        if self.kind == "chan":
            return f"chan#{self.payload}"
        return str(self.payload)


def scalar(kind: str, v) -> Value:
    if isinstance(v, PidTok):
        return Value(kind, v)
    return Value(kind, wrap_scalar(kind, v))


def chan_ref(cid: int) -> Value:
    return Value("chan", cid)


def array_value(elem_kind: str, elems: Iterable) -> Value:
    vals = tuple(e if isinstance(e, PidTok) else wrap_scalar(elem_kind, e) for e in elems)
    return Value("array", vals, elem_kind)


def default_value(kind: str, array_len: Optional[int] = None, mtype_first: int = 1) -> Value:
    """Default for an uninitialized declaration: 0, or the first mtype enumerator."""
    base = mtype_first if kind == "mtype" else 0
    if array_len is not None:
        return array_value(kind, [base] * array_len)
    return scalar(kind, base)


@dataclass(frozen=True)
class ChannelInstance:
    """A channel: capacity (0 marks rendezvous), field types, FIFO queue.

    Rendezvous channels are treated as capacity-one buffers; the single
    slot holds the in-flight message during a handshake.
    """

    capacity: int
    field_types: tuple
    queue: tuple = ()

    def __post_init__(self):
        limit = max(self.capacity, 1)
        if len(self.queue) > limit:
            raise EngineError("channel queue exceeds capacity")

    def effective_capacity(self) -> int:
        return max(self.capacity, 1)


def chan_push(c: ChannelInstance, msg: tuple) -> ChannelInstance:
    if len(msg) != len(c.field_types):
        raise EngineError("message arity does not match channel fields")
    if len(c.queue) >= c.effective_capacity():
        raise EngineError("push on full channel (guard must prevent this)")
    coerced = tuple(scalar(t, v).payload if not isinstance(v, PidTok) else v
                    for t, v in zip(c.field_types, msg))
    return ChannelInstance(c.capacity, c.field_types, c.queue + (coerced,))


def chan_pop(c: ChannelInstance) -> ChannelInstance:
    if not c.queue:
        raise EngineError("pop on empty channel (guard must prevent this)")
    return ChannelInstance(c.capacity, c.field_types, c.queue[1:])


def chan_head(c: ChannelInstance) -> tuple:
    if not c.queue:
        raise EngineError("head on empty channel (guard must prevent this)")
    return c.queue[0]


def nfull(c: ChannelInstance) -> bool:
    return len(c.queue) < c.effective_capacity()


def nempty(c: ChannelInstance) -> bool:
    return len(c.queue) > 0


@dataclass(frozen=True)
class SystemState:
    """Memory plus channel store, or the inconsistent state."""

    memory: tuple = ()  # sorted tuple of (Loc, Value)
    channels: tuple = ()  # sorted tuple of (chan id, ChannelInstance)
    is_bottom: bool = False

    @staticmethod
    def make(memory: dict | None = None, channels: dict | None = None) -> "SystemState":
        mem = tuple(sorted((memory or {}).items(), key=lambda kv: kv[0].token))
        ch = tuple(sorted((channels or {}).items()))
        return SystemState(mem, ch)

    def mem_dict(self) -> dict:
        return dict(self.memory)

    def chan_dict(self) -> dict:
        return dict(self.channels)


BOTTOM = SystemState(is_bottom=True)


@dataclass(frozen=True)
class Env:
    """Partial map from identifiers to locations or channel ids.

    Lookup of an unbound identifier is an error, not bottom: scope is
    static, so a miss is a bug in the caller, never a program state.
    """

    bindings: tuple = ()  # sorted (name, Loc-or-int) pairs; int is a channel id

    @staticmethod
    def make(d: dict) -> "Env":
        return Env(tuple(sorted(d.items())))

    def as_dict(self) -> dict:
        return dict(self.bindings)

    def bind(self, name: str, target) -> "Env":
        d = self.as_dict()
        d[name] = target
        return Env.make(d)

    def bind_all(self, pairs) -> "Env":
        d = self.as_dict()
        d.update(pairs)
        return Env.make(d)

    def lookup(self, name: str):
        for n, t in self.bindings:
            if n == name:
                return t
        raise EngineError(f"unbound identifier '{name}'")

    def loc(self, name: str) -> Loc:
        t = self.lookup(name)
        if not isinstance(t, Loc):
            raise EngineError(f"'{name}' names a channel, not a variable")
        return t

    def chan(self, name: str) -> int:
        t = self.lookup(name)
        if isinstance(t, Loc):
            raise EngineError(f"'{name}' names a variable, not a channel")
        return t

    def rename(self, locmap: dict) -> "Env":
        return Env(tuple(
            (n, locmap.get(t, t) if isinstance(t, Loc) else t)
            for n, t in self.bindings))


def read(s: SystemState, l: Loc) -> Optional[Value]:
    """Value at l, or None standing for the bottom element of the flat domain."""
    if s.is_bottom:
        return None
    for loc, v in s.memory:
        if loc == l:
            return v
    return None


def update(s: SystemState, l: Loc, v: Value) -> SystemState:
    if s.is_bottom:
        return s
    mem = s.mem_dict()
    mem[l] = v
    return SystemState.make(mem, s.chan_dict())


def read_chan(s: SystemState, cid: int) -> Optional[ChannelInstance]:
    if s.is_bottom:
        return None
    for c, inst in s.channels:
        if c == cid:
            return inst
    return None


def update_chan(s: SystemState, cid: int, inst: ChannelInstance) -> SystemState:
    if s.is_bottom:
        return s
    ch = s.chan_dict()
    ch[cid] = inst
    return SystemState.make(s.mem_dict(), ch)


def fresh_locations(s: SystemState, n: int, alloc: LocAllocator) -> list[Loc]:
    """n pairwise-distinct locations unmapped in s, drawn from alloc."""
    used = {loc for loc, _ in s.memory}
    out: list[Loc] = []
    while len(out) < n:
        cand = alloc.fresh()
        if cand not in used:
            out.append(cand)
            used.add(cand)
    return out


def render_raw(s: SystemState) -> str:
    """Canonical loc-sorted text form, for golden tests and trace dumps."""
    if s.is_bottom:
        return "<bottom>"
    parts = [f"{loc!r}={val!r}" for loc, val in s.memory]
    for cid, inst in s.channels:
        q = ";".join(",".join(str(x) for x in m) for m in inst.queue)
        parts.append(f"chan#{cid}=[{q}]")
    return " ".join(parts) if parts else "<empty>"
