"""Accumulation graphs and their logical reading as existentially closed conjunctions.

A module's formula is its clauses conjoined with the formulas of the modules it
accumulates, with the module's local constants existentially bound. The
binders of accumulated formulas are raised to the front and renamed apart, so
``elaborate`` always returns a prenex formula.
"""

from __future__ import annotations

import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Union

from .errors import CyclicAccumulation, HeadNotConstant
from .syntax import (
    And,
    App,
    Atom,
    ClauseAst,
    Const,
    Exists,
    GoalAst,
    ListCons,
    Or,
    TermAst,
    TypeExpr,
    goal_str,
    spine,
    term_str,
)
from .typecheck import CheckedSignature, TypedClause, TypedModule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModuleGraph:
    root: str
    nodes: Mapping[str, TypedModule]
    edges: Mapping[str, tuple[str, ...]]


def resolve_graph(root: str, loader) -> ModuleGraph:
    """Depth-first load of every module reachable from ``root`` through ``accumulate``.

    ``loader`` needs a ``typed_module(name)`` method (see :class:`lpmod.loader.SourceLoader`).
    """
    nodes: dict[str, TypedModule] = {}
    edges: dict[str, tuple[str, ...]] = {}
    occurrences: Counter[str] = Counter()

    def visit(name: str, path: list[str]):
        if name in path:
            raise CyclicAccumulation(path[path.index(name):] + [name])
        occurrences[name] += 1
        if name not in nodes:
            tm = loader.typed_module(name)
            nodes[name] = tm
            edges[name] = tuple(tm.accumulates)
        for child in edges[name]:
            visit(child, path + [name])

    visit(root, [])
    for name, k in occurrences.items():
        if k > 1:
            log.warning("module %s is accumulated along %d paths; each gets a private copy", name, k)
    return ModuleGraph(root, nodes, edges)


# ---------------------------------------------------------------------------
# Formulas

@dataclass(frozen=True)
class EClause:
    """A universally closed program clause whose constants have been renamed into scope."""
    clause: ClauseAst
    source: TypedClause = field(compare=False)


@dataclass(frozen=True)
class EConj:
    parts: tuple["EFormula", ...] = ()


@dataclass(frozen=True)
class EExists:
    name: str
    ty: TypeExpr = field(compare=False)
    body: "EFormula" = EConj()
    origin: str = field(default="", compare=False)


EFormula = Union[EClause, EConj, EExists]


def rename_term(t: TermAst, names: Mapping[str, str]) -> TermAst:
    if isinstance(t, Const):
        new = names.get(t.name, t.name)
        return t if new == t.name else Const(new, pos=t.pos)
    if isinstance(t, App):
        return App(rename_term(t.head, names), rename_term(t.arg, names), pos=t.pos)
    if isinstance(t, ListCons):
        return ListCons(rename_term(t.head, names), rename_term(t.tail, names), pos=t.pos)
    return t


def rename_goal(g: GoalAst | None, names: Mapping[str, str]) -> GoalAst | None:
    if isinstance(g, Atom):
        return Atom(rename_term(g.term, names), pos=g.pos)
    if isinstance(g, And):
        return And(rename_goal(g.left, names), rename_goal(g.right, names), pos=g.pos)
    if isinstance(g, Or):
        return Or(rename_goal(g.left, names), rename_goal(g.right, names), pos=g.pos)
    if isinstance(g, Exists):
        return Exists(g.var, rename_goal(g.body, names), pos=g.pos)
    return g


def rename_clause(c: ClauseAst, names: Mapping[str, str]) -> ClauseAst:
    return ClauseAst(rename_term(c.head, names), rename_goal(c.body, names), pos=c.pos)


def elaborate(g: ModuleGraph) -> EFormula:
    counter = itertools.count(1)

    def elab(name: str, env: dict[str, str]) -> tuple[list[EExists], list[EFormula]]:
        tm = g.nodes[name]
        scope = dict(env)
        prefix: list[EExists] = []
        for lc in tm.local_consts:
            fresh = f"{lc}#{next(counter)}"
            scope[lc] = fresh
            prefix.append(EExists(fresh, tm.table.consts[lc].ty, origin=name))
        matrix: list[EFormula] = []
        for acc in g.edges[name]:
            child = g.nodes[acc]
            sub_prefix, sub_matrix = elab(acc, {n: scope[n] for n in child.global_consts})
            prefix.extend(sub_prefix)
            matrix.extend(sub_matrix)
        for tc in tm.clauses:
            matrix.append(EClause(rename_clause(tc.clause, scope), tc))
        return prefix, matrix

    root = g.nodes[g.root]
    prefix, matrix = elab(g.root, {n: n for n in root.global_consts})
    body: EFormula = EConj(tuple(matrix))
    for q in reversed(prefix):
        body = EExists(q.name, q.ty, body, q.origin)
    return body


def count_binders(e: EFormula) -> int:
    if isinstance(e, EExists):
        return 1 + count_binders(e.body)
    if isinstance(e, EConj):
        return sum(count_binders(p) for p in e.parts)
    return 0


def eformula_str(e: EFormula) -> str:
    if isinstance(e, EExists):
        return f"exists {e.name}. {eformula_str(e.body)}"
    if isinstance(e, EConj):
        if not e.parts:
            return "unit"
        return "(" + " /\\ ".join(eformula_str(p) for p in e.parts) + ")"
    c = e.clause
    vs = c.variables()
    q = "".join(f"all {v}. " for v in vs)
    body = term_str(c.head) if c.body is None else f"{goal_str(c.body)} => {term_str(c.head)}"
    return q + body


# ---------------------------------------------------------------------------
# Flattening

@dataclass(frozen=True)
class FlatConst:
    name: str
    ty: TypeExpr
    level: int
    orig: str = ""

    @property
    def display(self) -> str:
        return self.orig or self.name


@dataclass(frozen=True)
class FlatClause:
    pred: int
    clause: ClauseAst


@dataclass
class FlatProgram:
    consts: list[FlatConst]
    clauses: list[FlatClause]
    predicates: dict[int, list[int]]
    index: dict[str, int] = field(default_factory=dict)

    def clauses_of(self, pred: int) -> list[FlatClause]:
        return [self.clauses[i] for i in self.predicates.get(pred, [])]

    def level0_types(self) -> dict[str, TypeExpr]:
        return {c.name: c.ty for c in self.consts if c.level == 0}

    def hidden_names(self) -> frozenset[str]:
        return frozenset(c.orig for c in self.consts if c.level > 0)


def flatten(e: EFormula, root_sig: CheckedSignature) -> FlatProgram:
    consts = [FlatConst(c.name, c.ty, 0, c.name) for c in root_sig.consts]
    index = {c.name: i for i, c in enumerate(consts)}
    clauses: list[FlatClause] = []
    preds: dict[int, list[int]] = {}

    def walk(f: EFormula):
        if isinstance(f, EExists):
            index[f.name] = len(consts)
            consts.append(FlatConst(f.name, f.ty, 1, f.name.split("#")[0]))
            walk(f.body)
        elif isinstance(f, EConj):
            for p in f.parts:
                walk(p)
        else:
            head, _ = spine(f.clause.head)
            if not isinstance(head, Const) or head.name not in index:
                raise HeadNotConstant(f"clause head {term_str(f.clause.head)} is not a program constant",
                                      f.clause.pos)
            p = index[head.name]
            preds.setdefault(p, []).append(len(clauses))
            clauses.append(FlatClause(p, f.clause))

    walk(e)
    return FlatProgram(consts, clauses, preds, index)


def flatten_graph(g: ModuleGraph) -> FlatProgram:
    return flatten(elaborate(g), g.nodes[g.root].own_sig)
