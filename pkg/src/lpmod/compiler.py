"""Clause compilation, predicate code layout and per-module object files.

Only the module's own clauses and the signatures it can see are consulted;
the code for a predicate assumes other modules may contribute clauses too.
"""

from __future__ import annotations

from typing import Callable, Sequence

from .instr import (
    ClauseCode,
    ConstRef,
    Instr,
    Item,
    LabelDef,
    LabelGen,
    PredRef,
    Reg,
    assemble,
    key_class,
)
from .syntax import (
    And,
    App,
    Atom,
    ClauseAst,
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
    goal_vars,
    spine,
    term_vars,
)
from .objfile import ConstEntry, ObjectFile, RenamingMap
from .typecheck import TypedModule, canon_type

ConstFn = Callable[[str], object]
PredFn = Callable[[str], object]


def _has_or(g: GoalAst | None) -> bool:
    if isinstance(g, Or):
        return True
    if isinstance(g, And):
        return _has_or(g.left) or _has_or(g.right)
    if isinstance(g, Exists):
        return _has_or(g.body)
    return False


def _atoms(g: GoalAst | None, out: list[TermAst]) -> list[TermAst]:
    if isinstance(g, Atom):
        out.append(g.term)
    elif isinstance(g, And):
        _atoms(g.left, out)
        _atoms(g.right, out)
    elif isinstance(g, Exists):
        _atoms(g.body, out)
    return out


def _goal_atoms_all(g: GoalAst | None, out: list[TermAst]) -> list[TermAst]:
    if isinstance(g, (And, Or)):
        _goal_atoms_all(g.left, out)
        _goal_atoms_all(g.right, out)
    elif isinstance(g, Exists):
        _goal_atoms_all(g.body, out)
    elif isinstance(g, Atom):
        out.append(g.term)
    return out


def _count_vars(terms: Sequence[TermAst]) -> dict[str, int]:
    counts: dict[str, int] = {}

    def walk(t):
        if isinstance(t, Var):
            counts[t.name] = counts.get(t.name, 0) + 1
        elif isinstance(t, App):
            walk(t.head)
            walk(t.arg)
        elif isinstance(t, ListCons):
            walk(t.head)
            walk(t.tail)

    for t in terms:
        walk(t)
    return counts


class _ClauseCompiler:
    """Compiles one clause (or a top-level query) to straight-line WAM code."""

    def __init__(self, const_ref: ConstFn, pred_ref: PredFn, first_temp: int):
        self.const_ref = const_ref
        self.pred_ref = pred_ref
        self.code: list[Instr] = []
        self.regs: dict[str, Reg] = {}
        self.seen: set[str] = set()
        self.void: set[str] = set()
        self.next_temp = first_temp
        self.labels: dict[str, int] = {}
        self._lab = LabelGen("J")

    def emit(self, op: str, *args) -> None:
        self.code.append(Instr(op, tuple(args)))

    def temp(self) -> Reg:
        r = Reg("x", self.next_temp)
        self.next_temp += 1
        return r

    def reg(self, name: str) -> Reg:
        if name not in self.regs:
            self.regs[name] = self.temp()
        return self.regs[name]

    # -- head ---------------------------------------------------------------
    def head(self, args: list[TermAst]) -> None:
        queue: list[tuple[Reg, TermAst]] = []
        for i, a in enumerate(args, 1):
            ai = Reg("x", i)
            if isinstance(a, Var):
                if a.name in self.void:
                    continue
                if a.name in self.seen:
                    self.emit("get_value", self.reg(a.name), ai)
                else:
                    self.seen.add(a.name)
                    self.emit("get_variable", self.reg(a.name), ai)
            else:
                self.get_term(a, ai, queue)
        while queue:
            r, t = queue.pop(0)
            self.get_term(t, r, queue)

    def get_term(self, t: TermAst, r: Reg, queue: list) -> None:
        if isinstance(t, Const):
            self.emit("get_constant", self.const_ref(t.name), r)
        elif isinstance(t, IntLit):
            self.emit("get_integer", t.value, r)
        elif isinstance(t, RealLit):
            self.emit("get_real", t.value, r)
        elif isinstance(t, StrLit):
            self.emit("get_string", t.value, r)
        elif isinstance(t, ListNil):
            self.emit("get_nil", r)
        elif isinstance(t, ListCons):
            self.emit("get_list", r)
            self.unify_arg(t.head, queue)
            self.unify_arg(t.tail, queue)
        else:
            head, args = spine(t)
            self.emit("get_structure", self.const_ref(head.name), len(args), r)
            for a in args:
                self.unify_arg(a, queue)

    def unify_arg(self, t: TermAst, queue: list) -> None:
        if isinstance(t, Var):
            if t.name in self.void:
                self.emit("unify_void", 1)
            elif t.name in self.seen:
                self.emit("unify_value", self.reg(t.name))
            else:
                self.seen.add(t.name)
                self.emit("unify_variable", self.reg(t.name))
        elif isinstance(t, Const):
            self.emit("unify_constant", self.const_ref(t.name))
        elif isinstance(t, IntLit):
            self.emit("unify_integer", t.value)
        elif isinstance(t, RealLit):
            self.emit("unify_real", t.value)
        elif isinstance(t, StrLit):
            self.emit("unify_string", t.value)
        elif isinstance(t, ListNil):
            self.emit("unify_nil")
        else:
            r = self.temp()
            self.emit("unify_variable", r)
            queue.append((r, t))

    # -- body ---------------------------------------------------------------
    def put_args(self, args: list[TermAst]) -> None:
        for i, a in enumerate(args, 1):
            self.put_term(a, Reg("x", i))

    def put_term(self, t: TermAst, r: Reg) -> None:
        if isinstance(t, Var):
            if t.name in self.seen:
                self.emit("put_value", self.reg(t.name), r)
            else:
                self.seen.add(t.name)
                self.emit("put_variable", self.reg(t.name), r)
        elif isinstance(t, Const):
            self.emit("put_constant", self.const_ref(t.name), r)
        elif isinstance(t, IntLit):
            self.emit("put_integer", t.value, r)
        elif isinstance(t, RealLit):
            self.emit("put_real", t.value, r)
        elif isinstance(t, StrLit):
            self.emit("put_string", t.value, r)
        elif isinstance(t, ListNil):
            self.emit("put_nil", r)
        elif isinstance(t, ListCons):
            sub = [self.build_sub(x) for x in (t.head, t.tail)]
            self.emit("put_list", r)
            for x, s in zip((t.head, t.tail), sub):
                self.set_arg(x, s)
        else:
            head, args = spine(t)
            sub = [self.build_sub(x) for x in args]
            self.emit("put_structure", self.const_ref(head.name), len(args), r)
            for x, s in zip(args, sub):
                self.set_arg(x, s)

    def build_sub(self, t: TermAst) -> Reg | None:
        """Build a compound argument bottom-up into a fresh temporary."""
        if isinstance(t, (App, ListCons)):
            r = self.temp()
            self.put_term(t, r)
            return r
        return None

    def set_arg(self, t: TermAst, built: Reg | None) -> None:
        if built is not None:
            self.emit("set_value", built)
        elif isinstance(t, Var):
            if t.name in self.void:
                self.emit("set_void", 1)
            elif t.name in self.seen:
                self.emit("set_value", self.reg(t.name))
            else:
                self.seen.add(t.name)
                self.emit("set_variable", self.reg(t.name))
        elif isinstance(t, Const):
            self.emit("set_constant", self.const_ref(t.name))
        elif isinstance(t, IntLit):
            self.emit("set_integer", t.value)
        elif isinstance(t, RealLit):
            self.emit("set_real", t.value)
        elif isinstance(t, StrLit):
            self.emit("set_string", t.value)
        else:
            self.emit("set_nil")

    def call(self, atom: TermAst, last: bool, env: bool) -> None:
        head, args = spine(atom)
        self.put_args(args)
        target = self.pred_ref(head.name)
        if last:
            if env:
                self.emit("deallocate")
            self.emit("execute", target, len(args))
        else:
            self.emit("call", target, len(args))

    # -- goals with disjunction (every variable permanent) ------------------
    def new_label(self) -> str:
        return self._lab()

    def place(self, name: str) -> None:
        self.labels[name] = len(self.code)

    def goal(self, g: GoalAst | None) -> None:
        if g is None or isinstance(g, TrueG):
            return
        if isinstance(g, Atom):
            head, args = spine(g.term)
            self.put_args(args)
            self.emit("call", self.pred_ref(head.name), len(args))
        elif isinstance(g, And):
            self.goal(g.left)
            self.goal(g.right)
        elif isinstance(g, Exists):
            self.goal(g.body)
        else:
            alts: list[GoalAst] = []
            while isinstance(g, Or):
                alts.append(g.left)
                g = g.right
            alts.append(g)
            end = self.new_label()
            nxt = self.new_label()
            for k, alt in enumerate(alts):
                if k > 0:
                    self.place(nxt)
                    nxt = self.new_label()
                if k == 0:
                    self.emit("try_me_else", nxt)
                elif k < len(alts) - 1:
                    self.emit("retry_me_else", nxt)
                else:
                    self.emit("trust_me")
                self.goal(alt)
                if k < len(alts) - 1:
                    self.emit("jump", end)
            self.place(end)

    def resolve_labels(self) -> list[Instr]:
        return [i.map_labels(lambda n: self.labels[n] if isinstance(n, str) else n) for i in self.code]


def _max_arity(terms: Sequence[TermAst]) -> int:
    return max((len(spine(t)[1]) for t in terms), default=0)


def compile_clause(c: ClauseAst, const_ref: ConstFn, pred_ref: PredFn) -> ClauseCode:
    """Compile one clause; ``const_ref``/``pred_ref`` choose the operand encoding."""
    _, head_args = spine(c.head)
    all_atoms = _goal_atoms_all(c.body, [])
    first_temp = max(len(head_args), _max_arity(all_atoms)) + 1
    cc = _ClauseCompiler(const_ref, pred_ref, first_temp)
    counts = _count_vars([c.head] + all_atoms)

    if _has_or(c.body):
        names = c.variables()
        for k, v in enumerate(names, 1):
            cc.regs[v] = Reg("y", k)
        cc.emit("allocate", len(names))
        cc.head(head_args)
        for v in names:
            if v not in cc.seen:
                cc.seen.add(v)
                cc.emit("init_variable", cc.regs[v])
        cc.goal(c.body)
        cc.emit("deallocate")
        cc.emit("proceed")
        return ClauseCode(tuple(cc.resolve_labels()))

    atoms = _atoms(c.body, [])
    chunks = [term_vars(c.head)] + [term_vars(a) for a in atoms]
    if atoms:
        chunks[0] = chunks[0] + chunks.pop(1)
    where: dict[str, set[int]] = {}
    order: list[str] = []
    for k, vs in enumerate(chunks):
        for v in vs:
            if v not in where:
                where[v] = set()
                order.append(v)
            where[v].add(k)
    perms = [v for v in order if len(where[v]) > 1]
    for k, v in enumerate(perms, 1):
        cc.regs[v] = Reg("y", k)
    cc.void = {v for v, n in counts.items() if n == 1}
    env = len(atoms) >= 2
    if env:
        cc.emit("allocate", len(perms))
    cc.head(head_args)
    if not atoms:
        cc.emit("proceed")
    for k, a in enumerate(atoms):
        cc.call(a, k == len(atoms) - 1, env)
    return ClauseCode(tuple(cc.code))


def compile_query(q: Query, const_ref: ConstFn, pred_ref: PredFn) -> tuple[list[Instr], list[Reg]]:
    """Compile a top-level goal ending in ``halt``.

    Returns the code and, in query order, the registers holding the free variables.
    """
    atoms = _goal_atoms_all(q.goal, [])
    cc = _ClauseCompiler(const_ref, pred_ref, _max_arity(atoms) + 1)
    names = list(q.free_vars)
    for v in goal_vars(q.goal):
        if v not in names:
            names.append(v)
    for k, v in enumerate(names, 1):
        cc.regs[v] = Reg("y", k)
    cc.emit("allocate", len(names))
    for v in names:
        cc.seen.add(v)
        cc.emit("query_variable" if v in q.free_vars else "init_variable", cc.regs[v])
    cc.goal(q.goal)
    cc.emit("halt")
    return cc.resolve_labels(), [cc.regs[v] for v in q.free_vars]


# ---------------------------------------------------------------------------
# Predicate layout

def partition_blocks(clauses: Sequence[ClauseCode]) -> list[list[int]]:
    """Split clause positions into blocks.

    Maximal runs of two or more clauses with a non-variable first argument form
    indexed blocks; every other clause stands alone.
    """
    blocks: list[list[int]] = []
    run: list[int] = []

    def flush():
        if len(run) >= 2:
            blocks.append(list(run))
        else:
            blocks.extend([i] for i in run)
        run.clear()

    for i, c in enumerate(clauses):
        if c.key is None:
            flush()
            blocks.append([i])
        else:
            run.append(i)
    flush()
    return blocks


def emit_indexed_block(clauses: Sequence[ClauseCode], new_label: LabelGen) -> list[Item]:
    """switch_on_term, switch tables, the variable-case chain, then per-symbol chains."""
    lv = new_label()
    clabels = [new_label() for _ in clauses]
    groups: dict[tuple, list[int]] = {}
    for i, c in enumerate(clauses):
        groups.setdefault(c.key, []).append(i)
    const_keys = [k for k in groups if key_class(k) == "c"]
    struct_keys = [k for k in groups if key_class(k) == "s"]
    list_key = next((k for k in groups if key_class(k) == "l"), None)

    tail: list[Item] = []

    def target(key) -> str:
        idx = groups[key]
        if len(idx) == 1:
            return clabels[idx[0]]
        start = new_label()
        tail.append(LabelDef(start))
        for n, i in enumerate(idx):
            op = "try" if n == 0 else "trust" if n == len(idx) - 1 else "retry"
            tail.append(Instr(op, (clabels[i],)))
        return start

    const_pairs = tuple((k, target(k)) for k in const_keys)
    struct_pairs = tuple((k, target(k)) for k in struct_keys)
    ll = target(list_key) if list_key is not None else None
    lc = new_label() if const_pairs else None
    ls = new_label() if struct_pairs else None

    items: list[Item] = [Instr("switch_on_term", (lv, lc, ll, ls))]
    if lc:
        items += [LabelDef(lc), Instr("switch_on_constant", (const_pairs,))]
    if ls:
        items += [LabelDef(ls), Instr("switch_on_structure", (struct_pairs,))]
    items += emit_chain([[LabelDef(cl), c] for cl, c in zip(clabels, clauses)], new_label,
                        first_label=lv)
    return items + tail


def emit_chain(blocks: list[list[Item]], new_label: LabelGen, first_label: str | None = None) -> list[Item]:
    """Sequence ``blocks`` with try_me_else / retry_me_else / trust_me."""
    if len(blocks) == 1:
        pre = [LabelDef(first_label)] if first_label else []
        return pre + blocks[0]
    labels = [first_label or new_label()] + [new_label() for _ in blocks[1:]]
    items: list[Item] = []
    for i, b in enumerate(blocks):
        items.append(LabelDef(labels[i]))
        if i == 0:
            items.append(Instr("try_me_else", (labels[1],)))
        elif i < len(blocks) - 1:
            items.append(Instr("retry_me_else", (labels[i + 1],)))
        else:
            items.append(Instr("trust_me"))
        items.extend(b)
    return items


def emit_predicate(clauses: Sequence[ClauseCode], new_label: LabelGen | None = None) -> list[Item]:
    """Full symbolic code for one predicate's clause list."""
    new_label = new_label or LabelGen()
    blocks: list[list[Item]] = []
    for idx in partition_blocks(clauses):
        if len(idx) == 1:
            blocks.append([clauses[idx[0]]])
        else:
            blocks.append(emit_indexed_block([clauses[i] for i in idx], new_label))
    if not blocks:
        return [Instr("fail")]
    return emit_chain(blocks, new_label)


def compile_predicate(clauses: Sequence[ClauseAst], const_ref: ConstFn, pred_ref: PredFn) -> list[Item]:
    return emit_predicate([compile_clause(c, const_ref, pred_ref) for c in clauses])


# ---------------------------------------------------------------------------
# Modules

def redefinable_names(tm: TypedModule) -> list[str]:
    """Signature-global predicates in scope that are not frozen by exportdef."""
    out: list[str] = []
    for s in (tm.own_sig,) + tuple(tm.acc_sigs):
        for c in s.consts:
            info = tm.table.consts[c.name]
            if c.name not in out and info.is_pred and info.mode != "exportdef":
                out.append(c.name)
    return out


def compile_module(tm: TypedModule, debug_names: bool = False) -> ObjectFile:
    """Compile a checked module into an object file."""
    refs: dict[str, ConstRef] = {}
    glob = []
    for i, c in enumerate(tm.own_sig.consts):
        refs[c.name] = ConstRef("G", i)
        glob.append(ConstEntry(c.name, canon_type(c.ty)))
    loc = []
    for j, name in enumerate(tm.local_consts):
        refs[name] = ConstRef("L", j)
        loc.append(ConstEntry(name if debug_names else "", canon_type(tm.table.consts[name].ty)))
    accums = tuple(
        RenamingMap(s.name, s.digest, tuple((c.name, refs[c.name]) for c in s.consts))
        for s in tm.acc_sigs)
    redef = redefinable_names(tm)
    redef_index = {n: i for i, n in enumerate(redef)}

    def const_ref(name: str) -> ConstRef:
        return refs[name]

    def pred_ref(name: str) -> PredRef:
        if name in redef_index:
            return PredRef("R", redef_index[name])
        r = refs[name]
        return PredRef(r.space, r.index)

    code: list[Instr] = []
    entries = []
    for pred in tm.predicates():
        clauses = [tc.clause for tc in tm.clauses if tc.pred == pred]
        items = compile_predicate(clauses, const_ref, pred_ref)
        entries.append((refs[pred], len(code)))
        code.extend(assemble(items, len(code)).code)
    return ObjectFile(tm.name, tm.own_sig.digest, tuple(glob), tuple(loc), accums,
                      tuple(refs[n] for n in redef), tuple(code), tuple(entries))
