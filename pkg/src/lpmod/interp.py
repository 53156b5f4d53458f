"""Reference interpreter: depth-first proof search with level-labelled unification.

Every constant and logic variable carries a level. Top-level (signature)
constants and the query's free variables sit at level 0; hidden constants and
every other variable at level 1. A variable may only be bound to a term whose
constants are no deeper than the variable itself, and binding drags the
levels of the term's variables down to the variable's level. This is what
keeps hidden constants out of answers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

from .elaborate import FlatProgram
from .errors import DepthLimitExceeded, UnknownPredicate
from .syntax import (
    And,
    App,
    Atom,
    Const,
    Exists,
    GoalAst,
    IntLit,
    ListCons,
    ListNil,
    Or,
    Query,
    RealLit,
    StrLit,
    TermAst,
    TrueG,
    Var,
    mk_app,
    spine,
    term_str,
)
from .typecheck import infer_goal_types

HIDDEN = 1


class RVar:
    __slots__ = ("ref", "level", "serial")
    _count = 0

    def __init__(self, level: int):
        RVar._count += 1
        self.ref = None
        self.level = level
        self.serial = RVar._count

    def __repr__(self) -> str:
        return f"_V{self.serial}@{self.level}"


@dataclass(frozen=True)
class RConst:
    index: int
    level: int


@dataclass(frozen=True)
class RInt:
    value: int


@dataclass(frozen=True)
class RReal:
    value: float


@dataclass(frozen=True)
class RStr:
    value: str


@dataclass(frozen=True)
class RNil:
    pass


@dataclass(frozen=True)
class RCons:
    head: object
    tail: object


@dataclass(frozen=True)
class RApp:
    head: RConst
    args: tuple


NIL = RNil()


def deref(t):
    while isinstance(t, RVar) and t.ref is not None:
        t = t.ref
    return t


class Bindings:
    """Variable store plus trail. ``undo(mark)`` restores exactly the state at ``mark``."""

    def __init__(self, occurs_check: bool = True):
        self.trail: list[tuple[RVar, object, int]] = []
        self.occurs_check = occurs_check

    def mark(self) -> int:
        return len(self.trail)

    def undo(self, mark: int) -> None:
        trail = self.trail
        while len(trail) > mark:
            v, ref, level = trail.pop()
            v.ref = ref
            v.level = level

    def _admit(self, v: RVar, t) -> bool:
        """Check ``t`` may be bound to ``v``; lower the levels of ``t``'s variables."""
        stack = [t]
        while stack:
            t = deref(stack.pop())
            if isinstance(t, RVar):
                if t is v:
                    if self.occurs_check:
                        return False
                    continue
                if t.level > v.level:
                    self.trail.append((t, t.ref, t.level))
                    t.level = v.level
            elif isinstance(t, RConst):
                if t.level > v.level:
                    return False
            elif isinstance(t, RApp):
                if t.head.level > v.level:
                    return False
                stack.extend(t.args)
            elif isinstance(t, RCons):
                stack.append(t.head)
                stack.append(t.tail)
        return True

    def bind(self, v: RVar, t) -> bool:
        if not self._admit(v, t):
            return False
        self.trail.append((v, v.ref, v.level))
        v.ref = t
        return True

    def unify(self, a, b) -> bool:
        stack = [(a, b)]
        while stack:
            a, b = stack.pop()
            a, b = deref(a), deref(b)
            if a is b:
                continue
            if isinstance(a, RVar):
                if not self.bind(a, b):
                    return False
                continue
            if isinstance(b, RVar):
                if not self.bind(b, a):
                    return False
                continue
            if isinstance(a, RApp):
                if not isinstance(b, RApp) or a.head != b.head or len(a.args) != len(b.args):
                    return False
                stack.extend(zip(reversed(a.args), reversed(b.args)))
            elif isinstance(a, RCons):
                if not isinstance(b, RCons):
                    return False
                stack.append((a.tail, b.tail))
                stack.append((a.head, b.head))
            elif a != b:
                return False
        return True


def unify(t1, t2, b: Bindings) -> bool:
    return b.unify(t1, t2)


# ---------------------------------------------------------------------------
# Answers

@dataclass(frozen=True)
class Answer:
    """Query variable bindings in first-occurrence order, as surface terms."""
    bindings: tuple[tuple[str, TermAst], ...]
    max_level: int = 0


def show_answer(a: Answer) -> str:
    if not a.bindings:
        return "yes"
    return "\n".join(f"{name} = {term_str(t)}" for name, t in a.bindings)


class Reifier:
    """Converts runtime terms to surface terms, naming unbound variables ``_1``, ``_2``..."""

    def __init__(self, const_name):
        self.const_name = const_name
        self.names: dict[int, str] = {}
        self.max_level = 0

    def var(self, key: int) -> Var:
        if key not in self.names:
            self.names[key] = f"_{len(self.names) + 1}"
        return Var(self.names[key])

    def const(self, index: int, level: int) -> Const:
        self.max_level = max(self.max_level, level)
        return Const(self.const_name(index))

    def __call__(self, t) -> TermAst:
        t = deref(t)
        if isinstance(t, RVar):
            return self.var(t.serial)
        if isinstance(t, RConst):
            return self.const(t.index, t.level)
        if isinstance(t, RInt):
            return IntLit(t.value)
        if isinstance(t, RReal):
            return RealLit(t.value)
        if isinstance(t, RStr):
            return StrLit(t.value)
        if isinstance(t, RNil):
            return ListNil()
        if isinstance(t, RCons):
            return ListCons(self(t.head), self(t.tail))
        return mk_app(self.const(t.head.index, t.head.level), [self(a) for a in t.args])


# ---------------------------------------------------------------------------
# Search

class _Frame:
    """Continuation cell: goal to run, its variable environment, proof depth, rest."""
    __slots__ = ("goal", "env", "depth", "next")

    def __init__(self, goal, env, depth, next_):
        self.goal = goal
        self.env = env
        self.depth = depth
        self.next = next_


class Solver:
    """Depth-first, left-to-right proof search over a flattened program."""

    def __init__(self, program: FlatProgram, depth: int | None = None, occurs_check: bool = True):
        self.program = program
        self.depth = depth
        self.bindings = Bindings(occurs_check)
        self._consts = [RConst(i, c.level) for i, c in enumerate(program.consts)]
        self.resolutions = 0

    def check_goal(self, q: Query) -> None:
        infer_goal_types(q.goal, self.program.level0_types(), self.program.hidden_names())

    def build(self, t: TermAst, env: dict):
        if isinstance(t, Var):
            v = env.get(t.name)
            if v is None:
                v = env[t.name] = RVar(HIDDEN)
            return v
        if isinstance(t, Const):
            return self._consts[self.program.index[t.name]]
        if isinstance(t, IntLit):
            return RInt(t.value)
        if isinstance(t, RealLit):
            return RReal(t.value)
        if isinstance(t, StrLit):
            return RStr(t.value)
        if isinstance(t, ListNil):
            return NIL
        if isinstance(t, ListCons):
            return RCons(self.build(t.head, env), self.build(t.tail, env))
        head, args = spine(t)
        return RApp(self.build(head, env), tuple(self.build(a, env) for a in args))

    def solve(self, q: Query) -> Iterator[Answer]:
        self.check_goal(q)
        env = {v: RVar(0) for v in q.free_vars}
        query_vars = [(v, env[v]) for v in q.free_vars]
        start = self.bindings.mark()
        goals = _Frame(q.goal, env, 0, None)
        choices: list = []
        while True:
            goals = self._run(goals, choices)
            if goals is _SUCCESS:
                reify = Reifier(self._name)
                bound = tuple((name, reify(v)) for name, v in query_vars)
                yield Answer(bound, reify.max_level)
            goals = self._backtrack(choices)
            if goals is None:
                self.bindings.undo(start)
                return

    def _name(self, index: int) -> str:
        return self.program.consts[index].display

    def _backtrack(self, choices: list):
        while choices:
            cp = choices.pop()
            self.bindings.undo(cp[0])
            if cp[1] == "alt":
                return cp[2]
            _, _, term, clauses, i, frame = cp
            goals = self._try_clauses(term, clauses, i, frame, choices)
            if goals is not None:
                return goals
        return None

    def _try_clauses(self, term, clauses, i, frame: _Frame, choices: list):
        b = self.bindings
        while i < len(clauses):
            clause = clauses[i].clause
            i += 1
            mark = b.mark()
            if i < len(clauses):
                choices.append((mark, "clauses", term, clauses, i, frame))
            env: dict = {}
            head = self.build(clause.head, env)
            self.resolutions += 1
            if b.unify(head, term):
                depth = frame.depth + 1
                if self.depth is not None and depth > self.depth:
                    raise DepthLimitExceeded(f"proof depth exceeded {self.depth}")
                body = clause.body if clause.body is not None else TrueG()
                return _Frame(body, env, depth, frame.next)
            if i < len(clauses):
                choices.pop()
            b.undo(mark)
        return None

    def _run(self, goals: _Frame | None, choices: list):
        while goals is not None:
            g, env = goals.goal, goals.env
            if isinstance(g, TrueG):
                goals = goals.next
            elif isinstance(g, And):
                goals = _Frame(g.left, env, goals.depth, _Frame(g.right, env, goals.depth, goals.next))
            elif isinstance(g, Or):
                choices.append((self.bindings.mark(), "alt", _Frame(g.right, env, goals.depth, goals.next)))
                goals = _Frame(g.left, env, goals.depth, goals.next)
            elif isinstance(g, Exists):
                inner = dict(env)
                if g.var not in inner:
                    inner[g.var] = RVar(HIDDEN)
                goals = _Frame(g.body, inner, goals.depth, goals.next)
            else:
                term = self.build(g.term, env)
                head = term.head if isinstance(term, RApp) else term
                if not isinstance(head, RConst):
                    raise UnknownPredicate(f"cannot call {term_str(g.term)}")
                clauses = self.program.clauses_of(head.index)
                goals = self._try_clauses(term, clauses, 0, goals, choices)
                if goals is None:
                    goals = self._backtrack(choices)
                    if goals is None:
                        return None
                continue
        return _SUCCESS


_SUCCESS = _Frame(None, None, 0, None)


def solve(program: FlatProgram, q: Query, depth: int | None = None,
          occurs_check: bool = True) -> Iterator[Answer]:
    """Lazily enumerate answers to ``q`` in depth-first, textual clause order."""
    return Solver(program, depth, occurs_check).solve(q)
