"""Lexing, parsing and pretty-printing of module files, signatures and goals."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Union

from .errors import (
    ClauseInSignature,
    DuplicateHeader,
    IllegalCharacter,
    ParseError,
    UnterminatedString,
)

Pos = tuple[int, int]

KEYWORDS = frozenset(
    ["module", "sig", "kind", "type", "exportdef", "useonly", "accumulate", "accum_sig", "use_sig"]
)
MODES = ("plain", "exportdef", "useonly")


def _pos():
    return field(default=None, compare=False, repr=False)


# ---------------------------------------------------------------------------
# Tokens

@dataclass(frozen=True)
class Token:
    kind: str  # id var int real str kw punct eof
    value: object
    line: int
    col: int

    @property
    def pos(self) -> Pos:
        return (self.line, self.col)

    def __repr__(self) -> str:
        return f"{self.kind} {self.value}"


_NUMBER = re.compile(r"-?\d+(\.\d+)?")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_']*")
_PUNCT2 = (":-", "->", "::")
_PUNCT1 = ",;()\\[]|"
_ESCAPES = {"n": "\n", "t": "\t", "\\": "\\", '"': '"'}


def tokenize(source: str, file: str | None = None) -> list[Token]:
    """Split ``source`` into tokens. Comments and whitespace are dropped; no EOF token is added."""
    out: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)

    def advance(k: int):
        nonlocal i, line, col
        for ch in source[i:i + k]:
            if ch == "\n":
                line, col = line + 1, 1
            else:
                col += 1
        i += k

    while i < n:
        ch = source[i]
        if ch in " \t\r\n\f\v":
            advance(1)
            continue
        if ch == "%":
            j = source.find("\n", i)
            advance((n if j < 0 else j) - i)
            continue
        start = (line, col)
        two = source[i:i + 2]
        if two in _PUNCT2:
            out.append(Token("punct", two, *start))
            advance(2)
            continue
        m = _NUMBER.match(source, i)
        if m and (ch != "-" or m.end() > i + 1):
            text = m.group(0)
            if m.group(1):
                out.append(Token("real", float(text), *start))
            else:
                out.append(Token("int", int(text), *start))
            advance(len(text))
            continue
        if ch == ".":
            nxt = source[i + 1] if i + 1 < n else ""
            if nxt == "" or nxt.isspace() or nxt == "%":
                out.append(Token("punct", ".", *start))
                advance(1)
                continue
            raise IllegalCharacter("'.' must end a declaration", start, file)
        if ch in _PUNCT1:
            out.append(Token("punct", ch, *start))
            advance(1)
            continue
        if ch == '"':
            j = i + 1
            buf = []
            while True:
                if j >= n or source[j] == "\n":
                    raise UnterminatedString("string literal not closed", start, file)
                c = source[j]
                if c == '"':
                    break
                if c == "\\" and j + 1 < n and source[j + 1] in _ESCAPES:
                    buf.append(_ESCAPES[source[j + 1]])
                    j += 2
                    continue
                buf.append(c)
                j += 1
            out.append(Token("str", "".join(buf), *start))
            advance(j + 1 - i)
            continue
        m = _NAME.match(source, i)
        if m:
            word = m.group(0)
            if word in KEYWORDS:
                out.append(Token("kw", word, *start))
            elif word[0].isupper() or word[0] == "_":
                out.append(Token("var", word, *start))
            else:
                out.append(Token("id", word, *start))
            advance(len(word))
            continue
        raise IllegalCharacter(f"unexpected character {ch!r}", start, file)
    return out


# ---------------------------------------------------------------------------
# Types

@dataclass(frozen=True)
class TyVar:
    name: str
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class TyApp:
    con: str
    args: tuple["TypeExpr", ...] = ()
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class Arrow:
    dom: "TypeExpr"
    cod: "TypeExpr"
    pos: Pos | None = _pos()


TypeExpr = Union[TyVar, TyApp, Arrow]


def target_type(ty: TypeExpr) -> TypeExpr:
    while isinstance(ty, Arrow):
        ty = ty.cod
    return ty


def is_pred_type(ty: TypeExpr) -> bool:
    t = target_type(ty)
    return isinstance(t, TyApp) and t.con == "o" and not t.args


def type_str(ty: TypeExpr, nested: bool = False) -> str:
    if isinstance(ty, TyVar):
        return ty.name
    if isinstance(ty, TyApp):
        if not ty.args:
            return ty.con
        s = ty.con + " " + " ".join(type_str(a, True) for a in ty.args)
        return f"({s})" if nested else s
    s = f"{type_str(ty.dom, True) if isinstance(ty.dom, Arrow) else type_str(ty.dom)} -> {type_str(ty.cod)}"
    return f"({s})" if nested else s


# ---------------------------------------------------------------------------
# Terms and goals

@dataclass(frozen=True)
class Const:
    name: str
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class Var:
    name: str
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class IntLit:
    value: int
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class RealLit:
    value: float
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class StrLit:
    value: str
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class App:
    head: "TermAst"
    arg: "TermAst"
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class ListNil:
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class ListCons:
    head: "TermAst"
    tail: "TermAst"
    pos: Pos | None = _pos()


TermAst = Union[Const, Var, IntLit, RealLit, StrLit, App, ListNil, ListCons]


@dataclass(frozen=True)
class TrueG:
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class Atom:
    term: TermAst
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class And:
    left: "GoalAst"
    right: "GoalAst"
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class Or:
    left: "GoalAst"
    right: "GoalAst"
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class Exists:
    var: str
    body: "GoalAst"
    pos: Pos | None = _pos()


GoalAst = Union[TrueG, Atom, And, Or, Exists]


def spine(t: TermAst) -> tuple[TermAst, list[TermAst]]:
    """Split a curried application into its head and argument list."""
    args = []
    while isinstance(t, App):
        args.append(t.arg)
        t = t.head
    args.reverse()
    return t, args


def mk_app(head: TermAst, args: Iterable[TermAst]) -> TermAst:
    for a in args:
        head = App(head, a)
    return head


def term_vars(t: TermAst, acc: list[str] | None = None) -> list[str]:
    """Variable names of ``t`` in first-occurrence order (no duplicates)."""
    acc = [] if acc is None else acc
    stack = [t]
    while stack:
        t = stack.pop()
        if isinstance(t, Var):
            if t.name not in acc:
                acc.append(t.name)
        elif isinstance(t, App):
            stack.append(t.arg)
            stack.append(t.head)
        elif isinstance(t, ListCons):
            stack.append(t.tail)
            stack.append(t.head)
    return acc


def goal_vars(g: GoalAst | None, acc: list[str] | None = None) -> list[str]:
    """All variable names (free and bound) of ``g`` in first-occurrence order."""
    acc = [] if acc is None else acc
    if g is None or isinstance(g, TrueG):
        return acc
    if isinstance(g, Atom):
        return term_vars(g.term, acc)
    if isinstance(g, (And, Or)):
        goal_vars(g.left, acc)
        return goal_vars(g.right, acc)
    if g.var not in acc:
        acc.append(g.var)
    return goal_vars(g.body, acc)


def free_goal_vars(g: GoalAst, bound: frozenset = frozenset()) -> list[str]:
    out: list[str] = []

    def walk(g, bound):
        if isinstance(g, Atom):
            for v in term_vars(g.term):
                if v not in bound and v not in out:
                    out.append(v)
        elif isinstance(g, (And, Or)):
            walk(g.left, bound)
            walk(g.right, bound)
        elif isinstance(g, Exists):
            walk(g.body, bound | {g.var})

    walk(g, bound)
    return out


# ---------------------------------------------------------------------------
# Declarations

@dataclass(frozen=True)
class KindDecl:
    names: tuple[str, ...]
    arity: int
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class TypeDecl:
    names: tuple[str, ...]
    ty: TypeExpr
    mode: str = "plain"
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class ClauseAst:
    head: TermAst
    body: GoalAst | None = None
    pos: Pos | None = _pos()

    @property
    def pred(self) -> str:
        return spine(self.head)[0].name

    def variables(self) -> list[str]:
        return goal_vars(self.body, term_vars(self.head))


@dataclass(frozen=True)
class ModuleAst:
    name: str
    accumulates: tuple[str, ...] = ()
    accum_sigs: tuple[tuple[str, str], ...] = ()
    kinds: tuple[KindDecl, ...] = ()
    types: tuple[TypeDecl, ...] = ()
    clauses: tuple[ClauseAst, ...] = ()
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class SignatureAst:
    name: str
    accum_sigs: tuple[tuple[str, str], ...] = ()
    kinds: tuple[KindDecl, ...] = ()
    types: tuple[TypeDecl, ...] = ()
    pos: Pos | None = _pos()


@dataclass(frozen=True)
class Query:
    goal: GoalAst
    free_vars: tuple[str, ...]


# ---------------------------------------------------------------------------
# Parser

_TERM_START = ("id", "var", "int", "real", "str")


class _Parser:
    def __init__(self, tokens: list[Token], file: str | None = None):
        self.toks = list(tokens)
        last = self.toks[-1] if self.toks else None
        eof_pos = (last.line, last.col + 1) if last else (1, 1)
        self.toks.append(Token("eof", None, *eof_pos))
        self.i = 0
        self.file = file
        self.anon = 0
        self.binders: list[str] = []

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def at(self, kind: str, value=None) -> bool:
        t = self.tok
        return t.kind == kind and (value is None or t.value == value)

    def take(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def expect(self, kind: str, value=None) -> Token:
        if not self.at(kind, value):
            want = value if value is not None else kind
            self.fail((str(want),))
        return self.take()

    def fail(self, expected: tuple[str, ...], message: str | None = None):
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.value)
        msg = message or f"expected {' or '.join(expected)}, found {found}"
        raise ParseError(msg, t.pos, expected, self.file)

    def names(self, kind: str = "id") -> tuple[str, ...]:
        out = [self.expect(kind).value]
        while self.at("punct", ","):
            self.take()
            out.append(self.expect(kind).value)
        return tuple(out)

    # types
    def type_expr(self) -> TypeExpr:
        pos = self.tok.pos
        dom = self.type_app()
        if self.at("punct", "->"):
            self.take()
            return Arrow(dom, self.type_expr(), pos=pos)
        return dom

    def type_app(self) -> TypeExpr:
        if self.at("id"):
            t = self.take()
            args = []
            while self.at("id") or self.at("var") or self.at("punct", "("):
                args.append(self.type_atom())
            return TyApp(t.value, tuple(args), pos=t.pos)
        return self.type_atom()

    def type_atom(self) -> TypeExpr:
        t = self.tok
        if t.kind == "var":
            self.take()
            return TyVar(t.value, pos=t.pos)
        if t.kind == "id":
            self.take()
            return TyApp(t.value, (), pos=t.pos)
        if self.at("punct", "("):
            self.take()
            ty = self.type_expr()
            self.expect("punct", ")")
            return ty
        self.fail(("type",))

    # terms
    def term(self) -> TermAst:
        pos = self.tok.pos
        head = self.app()
        if self.at("punct", "::"):
            self.take()
            return ListCons(head, self.term(), pos=pos)
        return head

    def starts_primary(self) -> bool:
        return self.tok.kind in _TERM_START or self.at("punct", "(") or self.at("punct", "[")

    def app(self) -> TermAst:
        pos = self.tok.pos
        t = self.primary()
        while self.starts_primary():
            t = App(t, self.primary(), pos=pos)
        return t

    def primary(self) -> TermAst:
        t = self.tok
        if t.kind == "id":
            self.take()
            if t.value == "nil":
                return ListNil(pos=t.pos)
            return Const(t.value, pos=t.pos)
        if t.kind == "var":
            self.take()
            name = t.value
            if name == "_":
                self.anon += 1
                name = f"_{self.anon}"
            return Var(name, pos=t.pos)
        if t.kind == "int":
            self.take()
            return IntLit(t.value, pos=t.pos)
        if t.kind == "real":
            self.take()
            return RealLit(t.value, pos=t.pos)
        if t.kind == "str":
            self.take()
            return StrLit(t.value, pos=t.pos)
        if self.at("punct", "("):
            self.take()
            inner = self.term()
            self.expect("punct", ")")
            return inner
        if self.at("punct", "["):
            return self.list_term()
        self.fail(("term",))

    def list_term(self) -> TermAst:
        pos = self.take().pos
        if self.at("punct", "]"):
            self.take()
            return ListNil(pos=pos)
        items = [self.term()]
        while self.at("punct", ","):
            self.take()
            items.append(self.term())
        tail: TermAst = ListNil(pos=pos)
        if self.at("punct", "|"):
            self.take()
            tail = self.term()
        self.expect("punct", "]")
        for it in reversed(items):
            tail = ListCons(it, tail, pos=pos)
        return tail

    # goals
    def goal(self) -> GoalAst:
        pos = self.tok.pos
        left = self.conj()
        if self.at("punct", ";"):
            self.take()
            return Or(left, self.goal(), pos=pos)
        return left

    def conj(self) -> GoalAst:
        pos = self.tok.pos
        left = self.gprimary()
        if self.at("punct", ","):
            self.take()
            return And(left, self.conj(), pos=pos)
        return left

    def gprimary(self) -> GoalAst:
        t = self.tok
        if t.kind == "id" and t.value == "sigma":
            self.take()
            v = self.expect("var")
            self.expect("punct", "\\")
            self.binders.append(v.value)
            try:
                body = self.goal()
            finally:
                self.binders.pop()
            return Exists(v.value, body, pos=t.pos)
        if self.at("punct", "("):
            self.take()
            g = self.goal()
            self.expect("punct", ")")
            return g
        if t.kind == "id" and t.value == "true" and not self._next_starts_arg():
            self.take()
            return TrueG(pos=t.pos)
        if t.kind in ("id", "var"):
            term = self.term()
            head, _ = spine(term)
            if isinstance(head, Var) and head.name not in self.binders:
                raise ParseError("atom head must be a constant or a sigma-bound variable", t.pos,
                                 ("constant",), self.file)
            if not isinstance(head, (Const, Var)):
                raise ParseError("atom head must be a constant", t.pos, ("constant",), self.file)
            return Atom(term, pos=t.pos)
        self.fail(("goal",))

    def _next_starts_arg(self) -> bool:
        nxt = self.toks[self.i + 1]
        return nxt.kind in _TERM_START or (nxt.kind == "punct" and nxt.value in "([")

    def clause(self) -> ClauseAst:
        pos = self.tok.pos
        self.anon = 0
        if not self.at("id"):
            self.fail(("declaration", "clause"))
        head = self.term()
        h, _ = spine(head)
        if not isinstance(h, Const) or h.name == "true":
            raise ParseError("clause head must start with a predicate constant", pos,
                             ("constant",), self.file)
        body = None
        if self.at("punct", ":-"):
            self.take()
            body = self.goal()
        self.expect("punct", ".")
        c = ClauseAst(head, body, pos=pos)
        return _uniquify_clause(c)

    # declarations
    def decl_kind(self) -> KindDecl:
        pos = self.take().pos
        names = self.names()
        self.expect("kw", "type")
        arity = 0
        while self.at("punct", "->"):
            self.take()
            self.expect("kw", "type")
            arity += 1
        self.expect("punct", ".")
        return KindDecl(names, arity, pos=pos)

    def decl_type(self) -> TypeDecl:
        t = self.take()
        mode = "plain" if t.value == "type" else t.value
        names = self.names()
        ty = self.type_expr()
        self.expect("punct", ".")
        return TypeDecl(names, ty, mode, pos=t.pos)

    def header(self, word: str) -> tuple[str, Pos]:
        t = self.expect("kw", word)
        name = self.expect("id").value
        self.expect("punct", ".")
        return name, t.pos

    def unit(self, is_sig: bool):
        name, pos = self.header("sig" if is_sig else "module")
        accs: list[str] = []
        asigs: list[tuple[str, str]] = []
        kinds: list[KindDecl] = []
        types: list[TypeDecl] = []
        clauses: list[ClauseAst] = []
        while not self.at("eof"):
            t = self.tok
            if t.kind == "kw" and t.value in ("module", "sig"):
                raise DuplicateHeader(f"second '{t.value}' header", t.pos, (), self.file)
            if t.kind == "kw" and t.value == "accumulate":
                if is_sig:
                    raise ClauseInSignature("'accumulate' is not allowed in a signature", t.pos,
                                            (), self.file)
                self.take()
                accs.extend(self.names())
                self.expect("punct", ".")
            elif t.kind == "kw" and t.value in ("accum_sig", "use_sig"):
                self.take()
                for n in self.names():
                    asigs.append((n, t.value))
                self.expect("punct", ".")
            elif t.kind == "kw" and t.value == "kind":
                kinds.append(self.decl_kind())
            elif t.kind == "kw" and t.value in ("type", "exportdef", "useonly"):
                types.append(self.decl_type())
            else:
                if is_sig:
                    raise ClauseInSignature("clauses are not allowed in a signature", t.pos,
                                            (), self.file)
                clauses.append(self.clause())
        if is_sig:
            return SignatureAst(name, tuple(asigs), tuple(kinds), tuple(types), pos=pos)
        return ModuleAst(name, tuple(accs), tuple(asigs), tuple(kinds), tuple(types),
                         tuple(clauses), pos=pos)


def _fresh(base: str, used: set[str]) -> str:
    k = 1
    while f"{base}_{k}" in used:
        k += 1
    name = f"{base}_{k}"
    used.add(name)
    return name


def _rename_term(t: TermAst, env: dict[str, str]) -> TermAst:
    if isinstance(t, Var):
        return Var(env[t.name], pos=t.pos) if t.name in env else t
    if isinstance(t, App):
        return App(_rename_term(t.head, env), _rename_term(t.arg, env), pos=t.pos)
    if isinstance(t, ListCons):
        return ListCons(_rename_term(t.head, env), _rename_term(t.tail, env), pos=t.pos)
    return t


def _uniquify(g: GoalAst, env: dict[str, str], free: set[str], used: set[str],
              seen: set[str]) -> GoalAst:
    if isinstance(g, Atom):
        return Atom(_rename_term(g.term, env), pos=g.pos)
    if isinstance(g, And):
        return And(_uniquify(g.left, env, free, used, seen),
                   _uniquify(g.right, env, free, used, seen), pos=g.pos)
    if isinstance(g, Or):
        return Or(_uniquify(g.left, env, free, used, seen),
                  _uniquify(g.right, env, free, used, seen), pos=g.pos)
    if isinstance(g, Exists):
        new = _fresh(g.var, used) if (g.var in free or g.var in seen) else g.var
        seen.add(g.var)
        seen.add(new)
        return Exists(new, _uniquify(g.body, {**env, g.var: new}, free, used, seen), pos=g.pos)
    return g


def _uniquify_goal(g: GoalAst, extra_free: Iterable[str] = ()) -> GoalAst:
    free = set(free_goal_vars(g)) | set(extra_free)
    used = set(goal_vars(g)) | free
    return _uniquify(g, {}, free, used, set())


def _uniquify_clause(c: ClauseAst) -> ClauseAst:
    """Rename sigma binders apart from every other variable of the clause."""
    if c.body is None:
        return c
    return ClauseAst(c.head, _uniquify_goal(c.body, term_vars(c.head)), pos=c.pos)


def parse_module(tokens: list[Token], file: str | None = None) -> ModuleAst:
    return _Parser(tokens, file).unit(is_sig=False)


def parse_signature(tokens: list[Token], file: str | None = None) -> SignatureAst:
    return _Parser(tokens, file).unit(is_sig=True)


def parse_goal(text: str, file: str | None = None) -> Query:
    """Parse a single ``.``-terminated top-level goal."""
    p = _Parser(tokenize(text, file), file)
    g = p.goal()
    p.expect("punct", ".")
    if not p.at("eof"):
        p.fail(("end of input",))
    g = _uniquify_goal(g)
    free = tuple(v for v in free_goal_vars(g) if not v.startswith("_"))
    return Query(g, free)


def parse_module_text(text: str, file: str | None = None) -> ModuleAst:
    return parse_module(tokenize(text, file), file)


def parse_signature_text(text: str, file: str | None = None) -> SignatureAst:
    return parse_signature(tokenize(text, file), file)


# ---------------------------------------------------------------------------
# Pretty printing

def _str_lit(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t") + '"'


def term_str(t: TermAst, nested: bool = False) -> str:
    if isinstance(t, Const):
        return t.name
    if isinstance(t, Var):
        return t.name
    if isinstance(t, IntLit):
        return str(t.value)
    if isinstance(t, RealLit):
        return repr(t.value)
    if isinstance(t, StrLit):
        return _str_lit(t.value)
    if isinstance(t, ListNil):
        return "[]"
    if isinstance(t, ListCons):
        items = []
        while isinstance(t, ListCons):
            items.append(term_str(t.head))
            t = t.tail
        tail = "" if isinstance(t, ListNil) else " | " + term_str(t)
        return "[" + ", ".join(items) + tail + "]"
    head, args = spine(t)
    s = " ".join([term_str(head, True)] + [term_str(a, True) for a in args])
    return f"({s})" if nested else s


def goal_str(g: GoalAst, level: int = 0) -> str:
    # level 0: disjunction context, 1: conjunction operand, 2: left operand of ','
    if isinstance(g, TrueG):
        return "true"
    if isinstance(g, Atom):
        return term_str(g.term)
    if isinstance(g, Exists):
        return f"(sigma {g.var}\\ {goal_str(g.body)})"
    if isinstance(g, And):
        s = f"{goal_str(g.left, 2)}, {goal_str(g.right, 1)}"
        return f"({s})" if level >= 2 else s
    s = f"{goal_str(g.left, 1)}; {goal_str(g.right, 0)}"
    return f"({s})" if level >= 1 else s


def clause_str(c: ClauseAst) -> str:
    if c.body is None:
        return term_str(c.head) + "."
    return f"{term_str(c.head)} :- {goal_str(c.body)}."


def _decls_str(kinds, types, asigs) -> list[str]:
    lines = []
    for name, mode in asigs:
        lines.append(f"{mode} {name}.")
    for k in kinds:
        lines.append(f"kind {', '.join(k.names)} " + " -> ".join(["type"] * (k.arity + 1)) + ".")
    for t in types:
        word = "type" if t.mode == "plain" else t.mode
        lines.append(f"{word} {', '.join(t.names)} {type_str(t.ty)}.")
    return lines


def module_str(m: ModuleAst) -> str:
    lines = [f"module {m.name}."]
    if m.accumulates:
        lines.append(f"accumulate {', '.join(m.accumulates)}.")
    lines += _decls_str(m.kinds, m.types, m.accum_sigs)
    lines += [clause_str(c) for c in m.clauses]
    return "\n".join(lines) + "\n"


def signature_str(s: SignatureAst) -> str:
    lines = [f"sig {s.name}."] + _decls_str(s.kinds, s.types, s.accum_sigs)
    return "\n".join(lines) + "\n"
