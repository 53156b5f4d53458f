"""Kind checking, signature and module checking, and clause type inference."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Mapping

from .errors import (
    ArityMismatch,
    ConflictingDeclaration,
    ExportdefViolation,
    SignatureMismatch,
    TypeCheckError,
    UnknownConstant,
    LocalConstantInGoal,
    UnknownTypeConstructor,
    UseonlyViolation,
)
from .syntax import (
    And,
    App,
    Arrow,
    Atom,
    ClauseAst,
    Const,
    Exists,
    GoalAst,
    IntLit,
    KindDecl,
    ListCons,
    ListNil,
    ModuleAst,
    Or,
    RealLit,
    SignatureAst,
    StrLit,
    TermAst,
    TrueG,
    TyApp,
    TyVar,
    TypeDecl,
    TypeExpr,
    Var,
    is_pred_type,
    spine,
    type_str,
)

BUILTIN_KINDS = {"int": 0, "real": 0, "string": 0, "o": 0, "list": 1}
O = TyApp("o")
BUILTIN_CONSTS = {"true": O}


# ---------------------------------------------------------------------------
# Canonical type encoding

def canon_type(ty: TypeExpr) -> str:
    """Prefix encoding with type variables numbered by first occurrence.

    Two declared types denote the same scheme iff their encodings are equal.
    """
    names: dict[str, int] = {}

    def enc(t: TypeExpr) -> str:
        if isinstance(t, TyVar):
            if t.name not in names:
                names[t.name] = len(names)
            return f"'{names[t.name]}"
        if isinstance(t, TyApp):
            if not t.args:
                return t.con
            return t.con + "(" + ",".join(enc(a) for a in t.args) + ")"
        return ">(" + enc(t.dom) + "," + enc(t.cod) + ")"

    return enc(ty)


def decode_type(text: str) -> TypeExpr:
    """Inverse of :func:`canon_type` (variables come back as ``A0``, ``A1``...)."""
    pos = 0

    def parse() -> TypeExpr:
        nonlocal pos
        if text.startswith(">(", pos):
            pos += 2
            dom = parse()
            assert text[pos] == ","
            pos += 1
            cod = parse()
            assert text[pos] == ")"
            pos += 1
            return Arrow(dom, cod)
        if text[pos] == "'":
            j = pos + 1
            while j < len(text) and text[j].isdigit():
                j += 1
            name = "A" + text[pos + 1:j]
            pos = j
            return TyVar(name)
        j = pos
        while j < len(text) and text[j] not in "(),":
            j += 1
        con = text[pos:j]
        pos = j
        args = []
        if pos < len(text) and text[pos] == "(":
            pos += 1
            args.append(parse())
            while text[pos] == ",":
                pos += 1
                args.append(parse())
            assert text[pos] == ")"
            pos += 1
        return TyApp(con, tuple(args))

    try:
        ty = parse()
    except (AssertionError, IndexError) as exc:
        raise ValueError(f"malformed type encoding {text!r}") from exc
    if pos != len(text):
        raise ValueError(f"malformed type encoding {text!r}")
    return ty


def same_type(a: TypeExpr, b: TypeExpr) -> bool:
    return canon_type(a) == canon_type(b)


def check_kinds(ty: TypeExpr, kinds: Mapping[str, int], file: str | None = None) -> None:
    if isinstance(ty, TyVar):
        return
    if isinstance(ty, Arrow):
        check_kinds(ty.dom, kinds, file)
        check_kinds(ty.cod, kinds, file)
        return
    if ty.con not in kinds:
        raise UnknownTypeConstructor(f"type constructor '{ty.con}' is not declared", ty.pos, file)
    if kinds[ty.con] != len(ty.args):
        raise ArityMismatch(
            f"'{ty.con}' expects {kinds[ty.con]} argument(s), got {len(ty.args)}", ty.pos, file)
    for a in ty.args:
        check_kinds(a, kinds, file)


def combine_modes(a: str, b: str) -> str | None:
    """Visible mode of a constant declared twice; ``None`` when the pair cannot coexist."""
    if a == b:
        return a
    if a == "useonly":
        return b
    if b == "useonly":
        return a
    return None


# ---------------------------------------------------------------------------
# Signatures

@dataclass(frozen=True)
class SigConst:
    name: str
    ty: TypeExpr
    mode: str = "plain"


@dataclass(frozen=True)
class CheckedSignature:
    name: str
    kinds: tuple[tuple[str, int], ...]
    consts: tuple[SigConst, ...]
    digest: bytes = b""

    def const(self, name: str) -> SigConst | None:
        for c in self.consts:
            if c.name == name:
                return c
        return None

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.consts]

    def with_digest(self) -> "CheckedSignature":
        return replace(self, digest=signature_digest(self))


def signature_digest(sig: CheckedSignature) -> bytes:
    lines = [f"sig {sig.name}"]
    lines += [f"kind {n} {a}" for n, a in sig.kinds]
    lines += [f"const {c.name} {c.mode} {canon_type(c.ty)}" for c in sig.consts]
    return hashlib.sha256("\n".join(lines).encode()).digest()


def apply_use_sig(sig: CheckedSignature) -> CheckedSignature:
    """Turn every ``exportdef`` entry into ``useonly``; nothing else changes."""
    consts = tuple(replace(c, mode="useonly") if c.mode == "exportdef" else c for c in sig.consts)
    return replace(sig, consts=consts).with_digest()


class _DeclSet:
    """Ordered kind and constant declarations with the clash rules applied on insert."""

    def __init__(self, file: str | None):
        self.kinds: dict[str, int] = {}
        self.consts: dict[str, SigConst] = {}
        self.file = file

    def add_kind(self, name: str, arity: int, pos=None, clash=ConflictingDeclaration):
        if name in BUILTIN_KINDS:
            raise clash(f"builtin type constructor '{name}' cannot be redeclared", pos, self.file)
        old = self.kinds.get(name)
        if old is not None and old != arity:
            raise clash(f"kind '{name}' declared with arity {old} and {arity}", pos, self.file)
        self.kinds[name] = arity

    def add_const(self, c: SigConst, pos=None, clash=ConflictingDeclaration):
        if c.name in BUILTIN_CONSTS:
            raise clash(f"builtin constant '{c.name}' cannot be redeclared", pos, self.file)
        old = self.consts.get(c.name)
        if old is None:
            self.consts[c.name] = c
            return
        mode = combine_modes(old.mode, c.mode)
        if not same_type(old.ty, c.ty) or mode is None:
            raise clash(
                f"'{c.name}' declared as {old.mode} {type_str(old.ty)} and as {c.mode} {type_str(c.ty)}",
                pos, self.file)
        self.consts[c.name] = SigConst(c.name, old.ty, mode)

    def include(self, sig: CheckedSignature, clash=ConflictingDeclaration):
        for n, a in sig.kinds:
            self.add_kind(n, a, clash=clash)
        for c in sig.consts:
            self.add_const(c, clash=clash)

    def all_kinds(self) -> dict[str, int]:
        return {**BUILTIN_KINDS, **self.kinds}


def _check_mode(d: TypeDecl, file):
    if d.mode != "plain" and not is_pred_type(d.ty):
        raise TypeCheckError(f"'{d.mode}' applies only to predicate constants", d.pos, file)


def check_signature(sig: SignatureAst, included: list[CheckedSignature],
                    file: str | None = None) -> CheckedSignature:
    """``included`` holds the checked signatures named by ``sig.accum_sigs``, in order."""
    ds = _DeclSet(file)
    for (name, how), inc in zip(sig.accum_sigs, included):
        ds.include(apply_use_sig(inc) if how == "use_sig" else inc)
    for k in sig.kinds:
        for n in k.names:
            ds.add_kind(n, k.arity, k.pos)
    kinds = ds.all_kinds()
    for d in sig.types:
        _check_mode(d, file)
        check_kinds(d.ty, kinds, file)
        for n in d.names:
            ds.add_const(SigConst(n, d.ty, d.mode), d.pos)
    for c in ds.consts.values():
        check_kinds(c.ty, kinds, file)
    return CheckedSignature(sig.name, tuple(ds.kinds.items()), tuple(ds.consts.values())).with_digest()


# ---------------------------------------------------------------------------
# Inference

class _Infer:
    """Unification-based inference over a private representation.

    Types are ``('v', id)``, ``('c', con, args)`` or ``('>', dom, cod)``.
    """

    def __init__(self, file: str | None = None):
        self.subst: dict[int, tuple] = {}
        self.counter = 0
        self.file = file

    def fresh(self) -> tuple:
        self.counter += 1
        return ("v", self.counter)

    def instantiate(self, ty: TypeExpr) -> tuple:
        env: dict[str, tuple] = {}

        def go(t):
            if isinstance(t, TyVar):
                if t.name not in env:
                    env[t.name] = self.fresh()
                return env[t.name]
            if isinstance(t, TyApp):
                return ("c", t.con, tuple(go(a) for a in t.args))
            return (">", go(t.dom), go(t.cod))

        return go(ty)

    def resolve(self, t: tuple) -> tuple:
        while t[0] == "v" and t[1] in self.subst:
            t = self.subst[t[1]]
        return t

    def zonk(self, t: tuple) -> tuple:
        t = self.resolve(t)
        if t[0] == "c":
            return ("c", t[1], tuple(self.zonk(a) for a in t[2]))
        if t[0] == ">":
            return (">", self.zonk(t[1]), self.zonk(t[2]))
        return t

    def occurs(self, v: int, t: tuple) -> bool:
        t = self.resolve(t)
        if t[0] == "v":
            return t[1] == v
        if t[0] == "c":
            return any(self.occurs(v, a) for a in t[2])
        return self.occurs(v, t[1]) or self.occurs(v, t[2])

    def unify(self, a: tuple, b: tuple, pos, what: str):
        a, b = self.resolve(a), self.resolve(b)
        if a == b:
            return
        if a[0] == "v":
            if self.occurs(a[1], b):
                self.error(pos, what, a, b, "circular type")
            self.subst[a[1]] = b
            return
        if b[0] == "v":
            self.unify(b, a, pos, what)
            return
        if a[0] != b[0] or (a[0] == "c" and (a[1] != b[1] or len(a[2]) != len(b[2]))):
            self.error(pos, what, a, b)
        if a[0] == "c":
            for x, y in zip(a[2], b[2]):
                self.unify(x, y, pos, what)
        else:
            self.unify(a[1], b[1], pos, what)
            self.unify(a[2], b[2], pos, what)

    def error(self, pos, what, expected, found, extra=""):
        e, f = self.show(expected), self.show(found)
        note = f" ({extra})" if extra else ""
        raise TypeCheckError(f"{what}: expected {e}, found {f}{note}", pos, self.file)

    def show(self, t: tuple) -> str:
        return type_str(self.to_expr(t))

    def to_expr(self, t: tuple, names: dict[int, str] | None = None) -> TypeExpr:
        names = {} if names is None else names
        t = self.resolve(t)
        if t[0] == "v":
            if t[1] not in names:
                names[t[1]] = f"T{len(names)}"
            return TyVar(names[t[1]])
        if t[0] == "c":
            return TyApp(t[1], tuple(self.to_expr(a, names) for a in t[2]))
        return Arrow(self.to_expr(t[1], names), self.to_expr(t[2], names))


_O = ("c", "o", ())


class _TermTyper:
    def __init__(self, consts: Mapping[str, TypeExpr], inf: _Infer,
                 hidden: frozenset[str] = frozenset()):
        self.consts = consts
        self.inf = inf
        self.vars: dict[str, tuple] = {}
        self.hidden = hidden

    def var(self, name: str) -> tuple:
        if name not in self.vars:
            self.vars[name] = self.inf.fresh()
        return self.vars[name]

    def const(self, c: Const) -> tuple:
        ty = self.consts.get(c.name)
        if ty is None:
            ty = BUILTIN_CONSTS.get(c.name)
        if ty is None:
            if c.name in self.hidden:
                raise LocalConstantInGoal(f"'{c.name}' is local to the module", c.pos, self.inf.file)
            raise UnknownConstant(f"constant '{c.name}' is not declared", c.pos, self.inf.file)
        return self.inf.instantiate(ty)

    def term(self, t: TermAst) -> tuple:
        inf = self.inf
        if isinstance(t, Const):
            return self.const(t)
        if isinstance(t, Var):
            return self.var(t.name)
        if isinstance(t, IntLit):
            return ("c", "int", ())
        if isinstance(t, RealLit):
            return ("c", "real", ())
        if isinstance(t, StrLit):
            return ("c", "string", ())
        if isinstance(t, ListNil):
            return ("c", "list", (inf.fresh(),))
        if isinstance(t, ListCons):
            h = self.term(t.head)
            tl = self.term(t.tail)
            lt = ("c", "list", (h,))
            inf.unify(lt, tl, t.pos, "list tail")
            return lt
        head, _ = spine(t)
        if isinstance(head, Var):
            raise TypeCheckError("applying a variable is not supported in the first-order fragment",
                                 t.pos, inf.file)
        fty = self.term(t.head)
        aty = self.term(t.arg)
        res = inf.fresh()
        inf.unify(fty, (">", aty, res), t.pos, "application")
        return res

    def atom(self, t: TermAst, pos) -> None:
        head, _ = spine(t)
        if isinstance(head, Var):
            raise TypeCheckError("variable-headed atoms are not supported", pos, self.inf.file)
        if not isinstance(head, Const):
            raise TypeCheckError("atom must start with a predicate constant", pos, self.inf.file)
        self.inf.unify(_O, self.term(t), pos, "atomic goal")

    def goal(self, g: GoalAst) -> None:
        if isinstance(g, TrueG):
            return
        if isinstance(g, Atom):
            self.atom(g.term, g.pos)
        elif isinstance(g, (And, Or)):
            self.goal(g.left)
            self.goal(g.right)
        elif isinstance(g, Exists):
            self.var(g.var)
            self.goal(g.body)

    def var_types(self) -> dict[str, TypeExpr]:
        names: dict[int, str] = {}
        return {v: self.inf.to_expr(t, names) for v, t in self.vars.items()}


@dataclass(frozen=True)
class TypedClause:
    clause: ClauseAst
    pred: str
    var_types: Mapping[str, TypeExpr] = field(compare=False)


def infer_clause_types(c: ClauseAst, consts: Mapping[str, TypeExpr],
                       file: str | None = None) -> TypedClause:
    """Infer types for clause variables; ``consts`` maps each visible constant to its scheme."""
    inf = _Infer(file)
    tt = _TermTyper(consts, inf)
    head, _ = spine(c.head)
    if not isinstance(head, Const):
        raise TypeCheckError("clause head must start with a constant", c.pos, file)
    hty = consts.get(head.name)
    if hty is None:
        raise UnknownConstant(f"constant '{head.name}' is not declared", head.pos, file)
    if not is_pred_type(hty):
        raise TypeCheckError(f"'{head.name}' is not a predicate", head.pos, file)
    tt.atom(c.head, c.pos)
    if c.body is not None:
        tt.goal(c.body)
    return TypedClause(c, head.name, tt.var_types())


def infer_goal_types(g: GoalAst, consts: Mapping[str, TypeExpr],
                     hidden: frozenset[str] = frozenset(), file: str | None = None) -> dict[str, TypeExpr]:
    """Type-check a top-level goal against the constants visible at the top level."""
    tt = _TermTyper(consts, _Infer(file), hidden)
    tt.goal(g)
    return tt.var_types()


# ---------------------------------------------------------------------------
# Modules

@dataclass(frozen=True)
class ConstInfo:
    name: str
    ty: TypeExpr
    mode: str
    in_sig: bool
    acc_modes: tuple[tuple[str, str], ...] = ()
    module_mode: str | None = None

    @property
    def is_pred(self) -> bool:
        return is_pred_type(self.ty)


@dataclass(frozen=True)
class SymbolTable:
    kinds: Mapping[str, int]
    consts: Mapping[str, ConstInfo]

    def types(self) -> dict[str, TypeExpr]:
        return {n: c.ty for n, c in self.consts.items()}


@dataclass(frozen=True)
class TypedModule:
    name: str
    table: SymbolTable
    clauses: tuple[TypedClause, ...]
    accumulates: tuple[str, ...]
    local_consts: tuple[str, ...]
    own_sig: CheckedSignature
    acc_sigs: tuple[CheckedSignature, ...]

    @property
    def global_consts(self) -> tuple[str, ...]:
        return tuple(self.own_sig.names)

    def predicates(self) -> list[str]:
        """Predicates with clauses here, in order of first clause."""
        out: list[str] = []
        for c in self.clauses:
            if c.pred not in out:
                out.append(c.pred)
        return out


def check_module(m: ModuleAst, own_sig: CheckedSignature, acc_sigs: list[CheckedSignature],
                 included: list[CheckedSignature] = (), file: str | None = None) -> TypedModule:
    """Check ``m`` against its own signature and the signatures of what it accumulates.

    ``included`` are the checked signatures named by the module's own
    ``accum_sig``/``use_sig`` lines, in order.
    """
    kinds: dict[str, int] = dict(BUILTIN_KINDS)
    consts: dict[str, ConstInfo] = {}
    order: list[str] = []

    def add_kind(name, arity, pos=None, clash=ConflictingDeclaration):
        if name in BUILTIN_KINDS:
            raise clash(f"builtin type constructor '{name}' cannot be redeclared", pos, file)
        old = kinds.get(name)
        if old is not None and old != arity:
            raise clash(f"kind '{name}' declared with arity {old} and {arity}", pos, file)
        kinds[name] = arity

    def clash_msg(name, old, ty, mode):
        return (f"'{name}' declared as {old.mode} {type_str(old.ty)} and as "
                f"{mode} {type_str(ty)}")

    for s in acc_sigs:
        for n, a in s.kinds:
            add_kind(n, a)
        for c in s.consts:
            old = consts.get(c.name)
            if old is None:
                consts[c.name] = ConstInfo(c.name, c.ty, c.mode, False, ((s.name, c.mode),))
                order.append(c.name)
                continue
            mode = combine_modes(old.mode, c.mode)
            if not same_type(old.ty, c.ty) or mode is None:
                raise ConflictingDeclaration(clash_msg(c.name, old, c.ty, c.mode), m.pos, file)
            consts[c.name] = replace(old, mode=mode, acc_modes=old.acc_modes + ((s.name, c.mode),))

    local_decls: list[tuple[str, TypeExpr, str, object]] = []
    for (name, how), inc in zip(m.accum_sigs, included):
        s = apply_use_sig(inc) if how == "use_sig" else inc
        for n, a in s.kinds:
            add_kind(n, a)
        for c in s.consts:
            local_decls.append((c.name, c.ty, c.mode, m.pos))
    for k in m.kinds:
        for n in k.names:
            add_kind(n, k.arity, k.pos)
    for d in m.types:
        _check_mode(d, file)
        for n in d.names:
            local_decls.append((n, d.ty, d.mode, d.pos))

    own_kinds = dict(own_sig.kinds)
    for n, a in own_kinds.items():
        add_kind(n, a, clash=SignatureMismatch)

    for d in m.types:
        check_kinds(d.ty, kinds, file)

    for name, ty, mode, pos in local_decls:
        if name in BUILTIN_CONSTS:
            raise ConflictingDeclaration(f"builtin constant '{name}' cannot be redeclared", pos, file)
        old = consts.get(name)
        if old is None:
            consts[name] = ConstInfo(name, ty, mode, False, (), mode)
            order.append(name)
            continue
        if not same_type(old.ty, ty):
            raise ConflictingDeclaration(clash_msg(name, old, ty, mode), pos, file)
        new_mode = combine_modes(old.mode, mode)
        if new_mode is None:
            raise ConflictingDeclaration(clash_msg(name, old, ty, mode), pos, file)
        prev = old.module_mode
        mm = mode if prev is None else combine_modes(prev, mode)
        consts[name] = replace(old, mode=new_mode, module_mode=mm)

    for c in own_sig.consts:
        old = consts.get(c.name)
        if old is None:
            consts[c.name] = ConstInfo(c.name, c.ty, c.mode, True, (), None)
            order.append(c.name)
            continue
        if not same_type(old.ty, c.ty):
            raise SignatureMismatch(
                f"signature declares '{c.name}' as {type_str(c.ty)} but the module has {type_str(old.ty)}",
                m.pos, file)
        consts[c.name] = replace(old, in_sig=True, mode=c.mode if old.mode != "exportdef" else old.mode)

    for c in consts.values():
        check_kinds(c.ty, kinds, file)

    # useonly constants declared only inside the module would never get a definition
    for name, _ty, mode, pos in local_decls:
        info = consts[name]
        if mode == "useonly" and not info.in_sig and not info.acc_modes:
            raise UseonlyViolation(f"useonly predicate '{name}' must come from a signature", pos, file)

    table = SymbolTable(kinds, consts)
    types = table.types()
    own_modes = {c.name: c.mode for c in own_sig.consts}
    typed = []
    for cl in m.clauses:
        tc = infer_clause_types(cl, types, file)
        info = consts[tc.pred]
        if any(md == "exportdef" for _, md in info.acc_modes):
            src = next(s for s, md in info.acc_modes if md == "exportdef")
            raise ExportdefViolation(
                f"'{tc.pred}' is exportdef in the signature of accumulated module '{src}'", cl.pos, file)
        if own_modes.get(tc.pred) == "useonly" or info.module_mode == "useonly":
            raise UseonlyViolation(f"'{tc.pred}' is useonly and may not be defined here", cl.pos, file)
        typed.append(tc)

    locals_ = tuple(n for n in _local_order(local_decls, acc_sigs) if not consts[n].in_sig)
    return TypedModule(m.name, table, tuple(typed), tuple(m.accumulates), locals_, own_sig,
                       tuple(acc_sigs))


def _local_order(local_decls, acc_sigs) -> list[str]:
    out: list[str] = []
    for name, *_ in local_decls:
        if name not in out:
            out.append(name)
    for s in acc_sigs:
        for c in s.consts:
            if c.name not in out:
                out.append(c.name)
    return out
