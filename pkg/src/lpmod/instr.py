"""Instruction set shared by the compiler, object files, the linker and the VM.

Code exists in two shapes. *Symbolic* code is a list of items: ``LabelDef``
markers, ``Instr`` whose label operands are label names, and opaque
``ClauseCode`` chunks holding one compiled clause with clause-relative
labels. *Absolute* code is a flat list of ``Instr`` whose label operands are
instruction offsets. ``assemble`` turns the first into the second and
``lift`` recovers the first from a region of the second.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Union


@dataclass(frozen=True, order=True)
class Reg:
    kind: str  # 'x' (argument/temporary) or 'y' (permanent)
    n: int

    def __str__(self) -> str:
        return ("A" if self.kind == "x" else "Y") + str(self.n)


@dataclass(frozen=True, order=True)
class ConstRef:
    """Reference into an object file's global ('G') or local ('L') constant table."""
    space: str
    index: int

    def __str__(self) -> str:
        return f"{self.space.lower()}{self.index}"


@dataclass(frozen=True, order=True)
class PredRef:
    """Call target in an object file.

    ``R`` indexes the redefinable-predicate list; ``G``/``L`` name a constant
    of this module directly.
    """
    kind: str
    index: int

    def __str__(self) -> str:
        return f"{self.kind.lower()}{self.index}" if self.kind != "R" else f"redef{self.index}"


@dataclass(frozen=True, order=True)
class RtPred:
    """Runtime predicate index awaiting its final entry offset (linker-internal)."""
    index: int

    def __str__(self) -> str:
        return f"p{self.index}"


# Operand kinds: L label, R register, N count, C constant, P predicate,
# I integer, F real, S string, T switch table.
OPCODES: dict[str, str] = {
    "try_me_else": "L",
    "retry_me_else": "L",
    "trust_me": "",
    "try": "L",
    "retry": "L",
    "trust": "L",
    "try_else": "LL",
    "retry_else": "LL",
    "switch_on_term": "LLLL",
    "switch_on_constant": "T",
    "switch_on_structure": "T",
    "call": "PN",
    "execute": "PN",
    "proceed": "",
    "allocate": "N",
    "deallocate": "",
    "fail": "",
    "jump": "L",
    "halt": "",
    "get_variable": "RR",
    "get_value": "RR",
    "get_constant": "CR",
    "get_integer": "IR",
    "get_real": "FR",
    "get_string": "SR",
    "get_nil": "R",
    "get_structure": "CNR",
    "get_list": "R",
    "put_variable": "RR",
    "put_value": "RR",
    "put_constant": "CR",
    "put_integer": "IR",
    "put_real": "FR",
    "put_string": "SR",
    "put_nil": "R",
    "put_structure": "CNR",
    "put_list": "R",
    "unify_variable": "R",
    "unify_value": "R",
    "unify_constant": "C",
    "unify_integer": "I",
    "unify_real": "F",
    "unify_string": "S",
    "unify_nil": "",
    "unify_void": "N",
    "set_variable": "R",
    "set_value": "R",
    "set_constant": "C",
    "set_integer": "I",
    "set_real": "F",
    "set_string": "S",
    "set_nil": "",
    "set_void": "N",
    "init_variable": "R",
    "query_variable": "R",
}
OPCODE_NUMBERS = {op: i for i, op in enumerate(OPCODES)}
OPCODE_NAMES = list(OPCODES)

CHAIN_OPS = frozenset({"try_me_else", "retry_me_else", "trust_me"})
SUBCHAIN_OPS = frozenset({"try", "retry", "trust", "try_else", "retry_else"})
SWITCH_OPS = frozenset({"switch_on_term", "switch_on_constant", "switch_on_structure"})
STRUCTURAL_OPS = CHAIN_OPS | SUBCHAIN_OPS | SWITCH_OPS
TERMINAL_OPS = frozenset({"proceed", "execute"})


@dataclass(frozen=True)
class Instr:
    op: str
    args: tuple = ()

    def __post_init__(self):
        if self.op not in OPCODES:
            raise ValueError(f"unknown opcode {self.op}")
        if len(self.args) != len(OPCODES[self.op]):
            raise ValueError(f"{self.op} takes {len(OPCODES[self.op])} operands, got {len(self.args)}")

    def labels(self) -> list:
        """Label operands, including switch-table targets, in operand order."""
        out = []
        for kind, a in zip(OPCODES[self.op], self.args):
            if kind == "L":
                out.append(a)
            elif kind == "T":
                out.extend(t for _, t in a)
        return out

    def map_labels(self, f) -> "Instr":
        """Apply ``f`` to every non-None label operand."""
        args = []
        for kind, a in zip(OPCODES[self.op], self.args):
            if kind == "L":
                a = None if a is None else f(a)
            elif kind == "T":
                a = tuple((k, None if t is None else f(t)) for k, t in a)
            args.append(a)
        return Instr(self.op, tuple(args))

    def map_refs(self, const=None, pred=None) -> "Instr":
        """Apply ``const`` to constant operands (including table keys) and ``pred`` to call targets."""
        args = []
        for kind, a in zip(OPCODES[self.op], self.args):
            if kind == "C" and const is not None:
                a = const(a)
            elif kind == "P" and pred is not None:
                a = pred(a)
            elif kind == "T" and const is not None:
                a = tuple((map_key(k, const), t) for k, t in a)
            args.append(a)
        return Instr(self.op, tuple(args))

    def __str__(self) -> str:
        if not self.args:
            return self.op
        return f"{self.op} " + ", ".join(operand_str(k, a) for k, a in zip(OPCODES[self.op], self.args))


def map_key(key: tuple, const) -> tuple:
    if key[0] == "c":
        return ("c", const(key[1]))
    if key[0] == "f":
        return ("f", const(key[1]), key[2])
    return key


def key_str(key: tuple, names=None) -> str:
    def nm(c):
        return names(c) if names is not None else str(c)
    tag = key[0]
    if tag == "c":
        return nm(key[1])
    if tag == "f":
        return f"{nm(key[1])}/{key[2]}"
    if tag == "n":
        return "[]"
    if tag == "l":
        return "'.'/2"
    if tag == "s":
        return '"' + key[1] + '"'
    return repr(key[1])


def operand_str(kind: str, a, names=None) -> str:
    if kind == "L":
        if a is None:
            return "fail"
        return a if isinstance(a, str) else f"L{a}"
    if kind == "T":
        return "[" + ", ".join(f"({key_str(k, names)}, {operand_str('L', t)})" for k, t in a) + "]"
    if kind == "C" and names is not None:
        return names(a)
    if kind == "S":
        return '"' + a + '"'
    return str(a)


@dataclass(frozen=True)
class LabelDef:
    name: str


@dataclass(frozen=True)
class ClauseCode:
    """One compiled clause; label operands are offsets relative to its first instruction."""
    instrs: tuple[Instr, ...]

    @property
    def key(self) -> tuple | None:
        return clause_key(self.instrs)

    def __len__(self) -> int:
        return len(self.instrs)

    def map_refs(self, const=None, pred=None) -> "ClauseCode":
        return ClauseCode(tuple(i.map_refs(const, pred) for i in self.instrs))


Item = Union[LabelDef, Instr, ClauseCode]

A1 = Reg("x", 1)
_KEY_OPS = {
    "get_constant": lambda a: ("c", a[0]),
    "get_integer": lambda a: ("i", a[0]),
    "get_real": lambda a: ("r", a[0]),
    "get_string": lambda a: ("s", a[0]),
    "get_nil": lambda a: ("n",),
    "get_structure": lambda a: ("f", a[0], a[1]),
    "get_list": lambda a: ("l",),
}


def clause_key(instrs: Iterable[Instr]) -> tuple | None:
    """First-argument index key of a compiled clause, or None when it is a variable."""
    for ins in instrs:
        if ins.op == "allocate":
            continue
        if ins.op in _KEY_OPS and ins.args[-1] == A1:
            return _KEY_OPS[ins.op](ins.args)
        return None
    return None


def key_class(key: tuple | None) -> str:
    """Which switch_on_term case a key dispatches to: 'v', 'c', 'l' or 's'."""
    if key is None:
        return "v"
    if key[0] == "f":
        return "s"
    if key[0] == "l":
        return "l"
    return "c"


class LabelGen:
    def __init__(self, prefix: str = "L"):
        self.prefix = prefix
        self._n = itertools.count(1)

    def __call__(self) -> str:
        return f"{self.prefix}{next(self._n)}"


# ---------------------------------------------------------------------------
# Assembly

@dataclass
class Assembled:
    code: list[Instr]
    labels: dict[str, int]
    clauses: list[tuple[int, ClauseCode]]


def assemble(items: Iterable[Item], base: int = 0) -> Assembled:
    """Resolve symbolic labels to absolute offsets starting at ``base``."""
    items = list(items)
    labels: dict[str, int] = {}
    pc = base
    for it in items:
        if isinstance(it, LabelDef):
            if it.name in labels:
                raise ValueError(f"label {it.name} defined twice")
            labels[it.name] = pc
        elif isinstance(it, ClauseCode):
            pc += len(it)
        else:
            pc += 1
    code: list[Instr] = []
    clauses: list[tuple[int, ClauseCode]] = []
    for it in items:
        if isinstance(it, LabelDef):
            continue
        if isinstance(it, ClauseCode):
            start = base + len(code)
            clauses.append((start, it))
            code.extend(i.map_labels(lambda r, s=start: s + r) for i in it.instrs)
        else:
            code.append(it.map_labels(lambda name: labels[name]))
    return Assembled(code, labels, clauses)


def clause_extent(code: list[Instr], start: int) -> int:
    """End offset (exclusive) of the clause whose code begins at ``start``.

    A clause ends at the first proceed/execute that lies at or beyond every
    forward label the clause has mentioned so far.
    """
    reach = start
    p = start
    while p < len(code):
        ins = code[p]
        for t in ins.labels():
            if t is not None:
                reach = max(reach, t)
        if ins.op in TERMINAL_OPS and p >= reach:
            return p + 1
        p += 1
    raise ValueError(f"clause at {start} does not terminate")


def lift(code: list[Instr], start: int, end: int, prefix: str = "") -> list[Item]:
    """Recover symbolic items for the predicate occupying ``code[start:end]``.

    Labels are named ``{prefix}L{offset}``.
    """
    targets: set[int] = set()
    spans: list[tuple[int, int, bool]] = []
    p = start
    while p < end:
        ins = code[p]
        if ins.op in STRUCTURAL_OPS:
            spans.append((p, p + 1, True))
            targets.update(t for t in ins.labels() if t is not None)
            p += 1
        else:
            q = clause_extent(code, p)
            spans.append((p, q, False))
            p = q
    items: list[Item] = []
    for s, e, structural in spans:
        if s in targets:
            items.append(LabelDef(f"{prefix}L{s}"))
        if structural:
            items.append(code[s].map_labels(lambda t: f"{prefix}L{t}"))
        else:
            items.append(ClauseCode(tuple(i.map_labels(lambda t, b=s: t - b) for i in code[s:e])))
    return items


def listing(code: list[Instr], names=None, entries: dict[int, str] | None = None) -> str:
    """Text listing with ``Ln:`` markers on every offset that something jumps to."""
    targets: set[int] = set()
    for ins in code:
        targets.update(t for t in ins.labels() if t is not None)
    lines = []
    for pc, ins in enumerate(code):
        if entries and pc in entries:
            lines.append(f"{entries[pc]}:")
        lab = f"L{pc}:" if pc in targets else ""
        if ins.args:
            ops = ", ".join(operand_str(k, a, names) for k, a in zip(OPCODES[ins.op], ins.args))
            text = f"{ins.op} {ops}"
        else:
            text = ins.op
        lines.append(f"{pc:5d} {lab:<7}{text}")
    return "\n".join(lines)
