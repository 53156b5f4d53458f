"""Bytecode emulator for linked images.

Heap cells are tuples tagged by their first element:

* ``("ref", addr, level)`` an unbound variable when ``heap[addr]`` is the cell itself,
  otherwise a pointer to be followed;
* ``("con", i)``, ``("int", v)``, ``("real", v)``, ``("str", s)``, ``("nil",)``;
* ``("struct", a)`` with functor cell ``("fun", i, n)`` at ``heap[a]`` and arguments after it;
* ``("lis", a)`` with head at ``heap[a]`` and tail at ``heap[a + 1]``.

Unification follows the same level rule as the reference interpreter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

from .errors import DepthLimitExceeded, ImageCorrupt, LocalConstantInGoal, MachineFault, UnknownConstant
from .instr import Instr, Reg
from .compiler import compile_query
from .interp import Answer, Reifier
from .objfile import Image
from .syntax import Const, IntLit, ListCons, ListNil, Query, RealLit, StrLit, TermAst, mk_app, parse_goal
from .typecheck import decode_type, infer_goal_types

QUERY_LEVEL = 0
HIDDEN_LEVEL = 1


class Env:
    __slots__ = ("prev", "cp", "y")

    def __init__(self, prev, cp, n):
        self.prev = prev
        self.cp = cp
        self.y = [None] * (n + 1)


@dataclass
class ChoicePoint:
    alt: int
    args: tuple
    env: Env | None
    cp: int | None
    trail: int
    heap: int


@dataclass
class GoalCode:
    code: list[Instr]
    names: tuple[str, ...]
    regs: list[Reg]


class Machine:
    """WAM-style machine over one image. ``step`` executes a single instruction."""

    def __init__(self, img: Image, occurs_check: bool = True, max_choicepoints: int | None = None):
        self.image = img
        self.program = list(img.code)
        self.code = list(self.program)
        self.levels = [c.level for c in img.consts]
        self.names = [img.const_name(i) for i in range(len(img.consts))]
        self.entries = img.entry_map()
        self.occurs_check = occurs_check
        self.max_choicepoints = max_choicepoints
        self.tables: dict[int, dict] = {}
        for pc, ins in enumerate(self.program):
            if ins.op in ("switch_on_constant", "switch_on_structure"):
                t: dict = {}
                for key, lab in ins.args[0]:
                    t.setdefault(key, lab)
                self.tables[pc] = t
        self.cp_pushes = 0
        self.steps = 0
        self.reset()

    # -- state -------------------------------------------------------------
    def reset(self) -> None:
        self.code = list(self.program)
        self.heap: list[tuple] = []
        self.trail: list[tuple[int, tuple]] = []
        self.x: list = [None] * 16
        self.env: Env | None = None
        self.cp: int | None = None
        self.b: list[ChoicePoint] = []
        self.pc: int | None = None
        self.arity = 0
        self.mode_write = False
        self.s = 0
        self.pending: tuple | None = None
        self.remaining = 0
        self.query_cells: list[tuple] = []
        self.halted = False
        self.done = False

    def get(self, r: Reg):
        if r.kind == "x":
            return self.x[r.n] if r.n < len(self.x) else None
        return self.env.y[r.n]

    def set(self, r: Reg, v) -> None:
        if r.kind == "x":
            if r.n >= len(self.x):
                self.x.extend([None] * (r.n + 1 - len(self.x)))
            self.x[r.n] = v
        else:
            self.env.y[r.n] = v

    def new_var(self, level: int = HIDDEN_LEVEL) -> tuple:
        h = len(self.heap)
        cell = ("ref", h, level)
        self.heap.append(cell)
        return cell

    def deref(self, c):
        heap = self.heap
        while c[0] == "ref":
            h = heap[c[1]]
            if h[0] == "ref" and h[1] == c[1]:
                return h
            c = h
        return c

    # -- binding and unification --------------------------------------------
    def _lower(self, addr: int, level: int) -> None:
        self.trail.append((addr, self.heap[addr]))
        self.heap[addr] = ("ref", addr, level)

    def bind(self, v: tuple, t: tuple) -> bool:
        """Bind unbound variable ``v`` to dereferenced ``t`` under the level rule."""
        addr, level = v[1], v[2]
        heap = self.heap
        if t[0] == "ref":
            if t[1] == addr:
                return True
            if t[2] > level:
                self._lower(t[1], level)
        else:
            stack = [t]
            while stack:
                c = self.deref(stack.pop())
                tag = c[0]
                if tag == "ref":
                    if c[1] == addr and self.occurs_check:
                        return False
                    if c[2] > level:
                        self._lower(c[1], level)
                elif tag == "con":
                    if self.levels[c[1]] > level:
                        return False
                elif tag == "struct":
                    f = heap[c[1]]
                    if self.levels[f[1]] > level:
                        return False
                    stack.extend(heap[c[1] + 1:c[1] + 1 + f[2]])
                elif tag == "lis":
                    stack.append(heap[c[1]])
                    stack.append(heap[c[1] + 1])
        self.trail.append((addr, heap[addr]))
        heap[addr] = t
        return True

    def unify(self, a, b) -> bool:
        heap = self.heap
        stack = [(a, b)]
        while stack:
            a, b = stack.pop()
            a, b = self.deref(a), self.deref(b)
            if a[0] == "ref":
                if not self.bind(a, b):
                    return False
                continue
            if b[0] == "ref":
                if not self.bind(b, a):
                    return False
                continue
            if a[0] != b[0]:
                return False
            if a[0] == "struct":
                if a[1] == b[1]:
                    continue
                fa, fb = heap[a[1]], heap[b[1]]
                if fa != fb:
                    return False
                for i in range(fa[2], 0, -1):
                    stack.append((heap[a[1] + i], heap[b[1] + i]))
            elif a[0] == "lis":
                if a[1] == b[1]:
                    continue
                stack.append((heap[a[1] + 1], heap[b[1] + 1]))
                stack.append((heap[a[1]], heap[b[1]]))
            elif a != b:
                return False
        return True

    # -- control -------------------------------------------------------------
    def push_choice(self, alt: int) -> None:
        if self.max_choicepoints is not None and len(self.b) >= self.max_choicepoints:
            raise DepthLimitExceeded(f"more than {self.max_choicepoints} choice points")
        self.cp_pushes += 1
        self.b.append(ChoicePoint(alt, tuple(self.x[1:self.arity + 1]), self.env, self.cp,
                                  len(self.trail), len(self.heap)))

    def backtrack(self) -> None:
        if not self.b:
            self.done = True
            self.pc = None
            return
        c = self.b[-1]
        trail, heap = self.trail, self.heap
        while len(trail) > c.trail:
            addr, old = trail.pop()
            heap[addr] = old
        del heap[c.heap:]
        self.x[1:1 + len(c.args)] = c.args
        self.arity = len(c.args)
        self.env = c.env
        self.cp = c.cp
        self.pending = None
        self.pc = c.alt

    def _const_key(self, c) -> tuple | None:
        tag = c[0]
        if tag == "con":
            return ("c", c[1])
        if tag == "int":
            return ("i", c[1])
        if tag == "real":
            return ("r", c[1])
        if tag == "str":
            return ("s", c[1])
        if tag == "nil":
            return ("n",)
        if tag == "struct":
            f = self.heap[c[1]]
            return ("f", f[1], f[2])
        return None

    def _write(self, cell) -> None:
        self.heap.append(cell)
        self._written(1)

    def _written(self, k: int) -> bool:
        if self.pending is None:
            return True
        self.remaining -= k
        if self.remaining == 0:
            var, val = self.pending
            self.pending = None
            return self.bind(self.deref(var), val)
        return True

    def step(self) -> None:
        """Execute exactly one instruction."""
        pc = self.pc
        if pc is None or not 0 <= pc < len(self.code):
            raise MachineFault(f"program counter {pc} outside code")
        ins = self.code[pc]
        op, a = ins.op, ins.args
        self.steps += 1
        self.pc = pc + 1
        ok = True

        if op.startswith("get_"):
            ok = self._get(op, a)
        elif op.startswith("unify_"):
            ok = self._unify_op(op, a)
        elif op.startswith("put_"):
            self._put(op, a)
        elif op.startswith("set_"):
            self._set(op, a)
        elif op == "call":
            self.cp = pc + 1
            self.arity = a[1]
            self.pc = a[0]
        elif op == "execute":
            self.arity = a[1]
            self.pc = a[0]
        elif op == "proceed":
            self.pc = self.cp
        elif op == "allocate":
            self.env = Env(self.env, self.cp, a[0])
        elif op == "deallocate":
            self.cp = self.env.cp
            self.env = self.env.prev
        elif op == "try_me_else":
            self.push_choice(a[0])
        elif op == "retry_me_else":
            self.b[-1].alt = a[0]
        elif op == "trust_me":
            self.b.pop()
        elif op == "try":
            self.push_choice(pc + 1)
            self.pc = a[0]
        elif op == "retry":
            self.b[-1].alt = pc + 1
            self.pc = a[0]
        elif op == "trust":
            self.b.pop()
            self.pc = a[0]
        elif op == "try_else":
            self.push_choice(a[1])
            self.pc = a[0]
        elif op == "retry_else":
            self.b[-1].alt = a[1]
            self.pc = a[0]
        elif op == "switch_on_term":
            c = self.deref(self.x[1])
            tag = c[0]
            if tag == "ref":
                self.pc = a[0]
            elif tag == "lis":
                self.pc = a[2]
            elif tag == "struct":
                self.pc = a[3]
            else:
                self.pc = a[1]
            ok = self.pc is not None
        elif op in ("switch_on_constant", "switch_on_structure"):
            self.pc = self.tables[pc].get(self._const_key(self.deref(self.x[1])))
            ok = self.pc is not None
        elif op == "jump":
            self.pc = a[0]
        elif op == "fail":
            ok = False
        elif op == "halt":
            self.halted = True
        elif op == "init_variable":
            self.set(a[0], self.new_var(HIDDEN_LEVEL))
        elif op == "query_variable":
            cell = self.new_var(QUERY_LEVEL)
            self.set(a[0], cell)
            self.query_cells.append(cell)
        else:
            raise MachineFault(f"unknown instruction {op}")
        if not ok:
            self.backtrack()

    def _get(self, op: str, a) -> bool:
        if op == "get_variable":
            self.set(a[0], self.get(a[1]))
            return True
        if op == "get_value":
            return self.unify(self.get(a[0]), self.get(a[1]))
        c = self.deref(self.get(a[-1]))
        if op in ("get_structure", "get_list"):
            if c[0] == "ref":
                h = len(self.heap)
                if op == "get_structure":
                    self.heap.append(("fun", a[0], a[1]))
                    self.pending = (c, ("struct", h))
                    self.remaining = a[1]
                else:
                    self.pending = (c, ("lis", h))
                    self.remaining = 2
                self.mode_write = True
                return True
            self.mode_write = False
            if op == "get_list":
                if c[0] != "lis":
                    return False
                self.s = c[1]
                return True
            if c[0] != "struct" or self.heap[c[1]] != ("fun", a[0], a[1]):
                return False
            self.s = c[1] + 1
            return True
        value = self._atomic(op[4:], a[0])
        if c[0] == "ref":
            return self.bind(c, value)
        return c == value

    @staticmethod
    def _atomic(kind: str, v):
        if kind == "constant":
            return ("con", v)
        if kind == "integer":
            return ("int", v)
        if kind == "real":
            return ("real", v)
        if kind == "string":
            return ("str", v)
        return ("nil",)

    def _unify_op(self, op: str, a) -> bool:
        kind = op[6:]
        if self.mode_write:
            if kind == "void":
                for _ in range(a[0]):
                    self.heap.append(("ref", len(self.heap), HIDDEN_LEVEL))
                return self._written(a[0])
            if kind == "variable":
                h = len(self.heap)
                cell = ("ref", h, HIDDEN_LEVEL)
                self.heap.append(cell)
                self.set(a[0], cell)
                return self._written(1)
            if kind == "value":
                self.heap.append(self.get(a[0]))
                return self._written(1)
            self.heap.append(self._atomic(kind, a[0] if a else None))
            return self._written(1)
        s = self.s
        if kind == "void":
            self.s += a[0]
            return True
        self.s += 1
        if kind == "variable":
            self.set(a[0], self.heap[s])
            return True
        if kind == "value":
            return self.unify(self.get(a[0]), self.heap[s])
        return self.unify(self.heap[s], self._atomic(kind, a[0] if a else None))

    def _put(self, op: str, a) -> None:
        if op == "put_variable":
            cell = self.new_var(HIDDEN_LEVEL)
            self.set(a[0], cell)
            self.set(a[1], cell)
        elif op == "put_value":
            self.set(a[1], self.get(a[0]))
        elif op == "put_structure":
            h = len(self.heap)
            self.heap.append(("fun", a[0], a[1]))
            self.set(a[2], ("struct", h))
            self.mode_write = True
        elif op == "put_list":
            self.set(a[0], ("lis", len(self.heap)))
            self.mode_write = True
        else:
            self.set(a[-1], self._atomic(op[4:], a[0] if len(a) > 1 else None))

    def _set(self, op: str, a) -> None:
        kind = op[4:]
        if kind == "variable":
            self.set(a[0], self.new_var(HIDDEN_LEVEL))
        elif kind == "value":
            self.heap.append(self.get(a[0]))
        elif kind == "void":
            for _ in range(a[0]):
                self.new_var(HIDDEN_LEVEL)
        else:
            self.heap.append(self._atomic(kind, a[0] if a else None))

    # -- answers -------------------------------------------------------------
    def reify(self, reify: Reifier, c) -> TermAst:
        c = self.deref(c)
        tag = c[0]
        if tag == "ref":
            return reify.var(c[1])
        if tag == "con":
            return reify.const(c[1], self.levels[c[1]])
        if tag == "int":
            return IntLit(c[1])
        if tag == "real":
            return RealLit(c[1])
        if tag == "str":
            return StrLit(c[1])
        if tag == "nil":
            return ListNil()
        if tag == "lis":
            return ListCons(self.reify(reify, self.heap[c[1]]), self.reify(reify, self.heap[c[1] + 1]))
        f = self.heap[c[1]]
        head = reify.const(f[1], self.levels[f[1]])
        return mk_app(head, [self.reify(reify, self.heap[c[1] + i]) for i in range(1, f[2] + 1)])


def load(img: Image, occurs_check: bool = True, max_choicepoints: int | None = None) -> Machine:
    """Install an image: build switch lookup tables and an idle machine."""
    try:
        return Machine(img, occurs_check, max_choicepoints)
    except (IndexError, TypeError) as e:
        raise ImageCorrupt(f"cannot load image: {e}") from None


def compile_goal(goal: Query | str, img: Image) -> GoalCode:
    """Type-check a top-level goal against the image's level-0 constants and compile it."""
    q = parse_goal(goal) if isinstance(goal, str) else goal
    visible = {c.name: i for i, c in enumerate(img.consts) if c.level == 0}
    hidden = frozenset(c.name for c in img.consts if c.level > 0 and c.name) - set(visible)
    types = {n: decode_type(img.consts[i].ty) for n, i in visible.items()}
    infer_goal_types(q.goal, types, hidden)
    entries = img.entry_map()

    def const_ref(name: str) -> int:
        if name not in visible:
            if name in hidden:
                raise LocalConstantInGoal(f"'{name}' is local to the program and not visible in goals")
            raise UnknownConstant(f"constant '{name}' is not declared")
        return visible[name]

    def pred_ref(name: str) -> int:
        return entries[const_ref(name)]

    code, regs = compile_query(q, const_ref, pred_ref)
    return GoalCode(code, q.free_vars, regs)


def run(m: Machine, goal: GoalCode) -> Iterator[Answer]:
    """Lazily enumerate answers; the machine is back at its idle state afterwards."""
    m.reset()
    base = len(m.code)
    m.code.extend(ins.map_labels(lambda r: r + base) for ins in goal.code)
    m.pc = base
    try:
        while True:
            m.step()
            if m.halted:
                m.halted = False
                reify = Reifier(lambda i: m.names[i])
                bound = tuple((n, m.reify(reify, c)) for n, c in zip(goal.names, m.query_cells))
                yield Answer(bound, reify.max_level)
                m.backtrack()
            if m.done:
                return
    finally:
        m.reset()


def solve_image(img: Image, goal: Query | str, occurs_check: bool = True,
                max_choicepoints: int | None = None) -> Iterator[Answer]:
    m = load(img, occurs_check, max_choicepoints)
    return run(m, compile_goal(goal, img))
