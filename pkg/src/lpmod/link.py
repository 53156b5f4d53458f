"""Linking separately compiled object files into one executable image.

The linker walks the accumulation nest from the root object file, gives every
constant a runtime index (root globals at level 0, every local of every
accumulation occurrence a fresh index at level 1), relocates each module's
predicate code and combines the per-module pieces of each predicate in the
fixed order: accumulated modules first, in accumulation order, then the
parent. Where two indexed blocks meet at a seam they are merged into one.

``inline_compile`` is the whole-program path: it flattens the module nest and
compiles every predicate's full clause list directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .compiler import compile_clause, emit_chain, emit_predicate
from .elaborate import ModuleGraph, flatten_graph
from .errors import (
    CyclicAccumulation,
    LinkError,
    MergeClosedDefinition,
    MissingObjectFile,
    RenamingDomainMismatch,
    SignatureSkew,
)
from .instr import (
    CHAIN_OPS,
    SUBCHAIN_OPS,
    Assembled,
    ClauseCode,
    ConstRef,
    Instr,
    Item,
    LabelDef,
    LabelGen,
    RtPred,
    assemble,
    key_class,
    lift,
)
from .objfile import Image, ImageConst, ObjectFile, decode, validate
from .syntax import is_pred_type
from .typecheck import canon_type, decode_type

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Constant-index assignment

@dataclass(frozen=True)
class Assignment:
    """Runtime indices chosen for one accumulation occurrence of a module."""
    path: tuple[str, ...]
    refs: dict[ConstRef, int]
    globals: dict[str, int]
    locals: tuple[int, ...]

    @property
    def module(self) -> str:
        return self.path[-1]


@dataclass
class Frame:
    consts: list[ImageConst] = field(default_factory=list)
    trace: list[Assignment] = field(default_factory=list)

    def fresh(self, name: str, ty: str, level: int) -> int:
        self.consts.append(ImageConst(name, ty, level))
        return len(self.consts) - 1


def assign_indices(frame: Frame, o: ObjectFile, parent: dict[str, int] | None,
                   path: tuple[str, ...] = ()) -> Assignment:
    """Resolve ``o``'s globals through ``parent`` (fresh level-0 indices at the root)
    and give each of its locals a fresh level-1 index."""
    refs: dict[ConstRef, int] = {}
    names = [e.name for e in o.globals]
    if parent is None:
        for i, e in enumerate(o.globals):
            refs[ConstRef("G", i)] = frame.fresh(e.name, e.ty, 0)
    else:
        if sorted(parent) != sorted(names):
            missing = sorted(set(names) - set(parent))
            extra = sorted(set(parent) - set(names))
            raise RenamingDomainMismatch(
                f"renaming map for {o.name} does not match its globals "
                f"(missing {missing}, unexpected {extra})")
        for i, n in enumerate(names):
            refs[ConstRef("G", i)] = parent[n]
    loc = []
    for j, e in enumerate(o.locals):
        k = frame.fresh(e.name, e.ty, 1)
        refs[ConstRef("L", j)] = k
        loc.append(k)
    a = Assignment(path or (o.name,), refs, {n: refs[ConstRef("G", i)] for i, n in enumerate(names)},
                   tuple(loc))
    frame.trace.append(a)
    return a


# ---------------------------------------------------------------------------
# Symbolic chain manipulation

@dataclass
class Block:
    label: str | None
    items: list[Item]

    @property
    def indexed(self) -> bool:
        first = next((i for i in self.items if not isinstance(i, LabelDef)), None)
        return isinstance(first, Instr) and first.op == "switch_on_term"


def _label_positions(items: Sequence[Item]) -> dict[str, int]:
    return {it.name: k for k, it in enumerate(items) if isinstance(it, LabelDef)}


def split_chain(items: Sequence[Item]) -> list[Block]:
    """Split one predicate's code into its top-level blocks."""
    items = list(items)
    k = 0
    lead: list[str] = []
    while k < len(items) and isinstance(items[k], LabelDef):
        lead.append(items[k].name)
        k += 1
    first = items[k] if k < len(items) else None
    if not (isinstance(first, Instr) and first.op == "try_me_else"):
        extra = [LabelDef(n) for n in lead[1:]]
        return [Block(lead[0] if lead else None, extra + items[k:])]
    where = _label_positions(items)
    blocks: list[Block] = []
    label = lead[0] if lead else None
    while True:
        ins = items[k]
        if ins.op == "trust_me":
            blocks.append(Block(label, items[k + 1:]))
            return blocks
        nxt = where[ins.args[0]]
        blocks.append(Block(label, items[k + 1:nxt]))
        label = items[nxt].name
        k = nxt
        while isinstance(items[k], LabelDef):
            k += 1


def _first_item(items: Sequence[Item], label: str) -> int:
    k = _label_positions(items)[label] + 1
    while isinstance(items[k], LabelDef):
        k += 1
    return k


@dataclass
class _Indexed:
    pre: list[Item]
    sot: Instr
    tables: dict[str, tuple[str, Instr]]
    var: list[Item]
    sub: list[Item]


def _parse_indexed(items: Sequence[Item]) -> _Indexed:
    pre: list[Item] = []
    k = 0
    while isinstance(items[k], LabelDef):
        pre.append(items[k])
        k += 1
    sot = items[k]
    tables: dict[str, tuple[str, Instr]] = {}
    var: list[Item] = []
    sub: list[Item] = []
    pending: list[Item] = []
    for it in items[k + 1:]:
        if isinstance(it, LabelDef):
            pending.append(it)
            continue
        if isinstance(it, Instr) and it.op in ("switch_on_constant", "switch_on_structure"):
            tables[it.op] = (pending[0].name, it)
            pending = []
            continue
        dest = sub if isinstance(it, Instr) and it.op in SUBCHAIN_OPS else var
        dest.extend(pending)
        dest.append(it)
        pending = []
    return _Indexed(pre, sot, tables, var, sub + pending)


def _targets(ix: _Indexed) -> dict[tuple, str]:
    out: dict[tuple, str] = {}
    for op in ("switch_on_constant", "switch_on_structure"):
        if op in ix.tables:
            for key, lab in ix.tables[op][1].args[0]:
                out[key] = lab
    if ix.sot.args[2] is not None:
        out[("l",)] = ix.sot.args[2]
    return out


def _is_subchain(items: Sequence[Item], label: str) -> bool:
    it = items[_first_item(items, label)]
    return isinstance(it, Instr) and it.op in SUBCHAIN_OPS


def _terminal(items: list[Item], label: str) -> int:
    """Position of the trust that ends the sub-chain starting at ``label``."""
    k = _first_item(items, label)
    for _ in range(len(items) + 1):
        ins = items[k]
        if ins.op == "trust":
            return k
        if ins.op in ("try_else", "retry_else"):
            k = _first_item(items, ins.args[1])
        else:
            k += 1
            while isinstance(items[k], LabelDef):
                k += 1
    raise LinkError(f"sub-chain at {label} does not terminate")


def merge_indexed_blocks(a: Sequence[Item], b: Sequence[Item],
                         new_label: Callable[[], str] | None = None) -> list[Item]:
    """Merge indexed block ``b`` into the preceding indexed block ``a``."""
    new_label = new_label or LabelGen("M")
    A, B = _parse_indexed(list(a)), _parse_indexed(list(b))

    # variable case: join the two try_me_else chains
    var_a, var_b = list(A.var), list(B.var)
    last = max(k for k, it in enumerate(var_a) if isinstance(it, Instr) and it.op in CHAIN_OPS)
    var_a[last] = Instr("retry_me_else", (B.sot.args[0],))
    first = min(k for k, it in enumerate(var_b) if isinstance(it, Instr) and it.op in CHAIN_OPS)
    if var_b[first].op == "try_me_else":
        var_b[first] = Instr("retry_me_else", var_b[first].args)

    sub: list[Item] = list(A.sub) + list(B.sub)
    extra: list[Item] = []
    all_items = lambda: var_a + var_b + sub + extra  # noqa: E731

    ta, tb = _targets(A), _targets(B)

    def open_b(label: str) -> None:
        k = _first_item(sub, label)
        ins = sub[k]
        if ins.op == "try":
            sub[k] = Instr("retry", ins.args)
        elif ins.op == "try_else":
            sub[k] = Instr("retry_else", ins.args)

    def merge_target(la: str, lb: str) -> str:
        items = all_items()
        a_chain, b_chain = _is_subchain(items, la), _is_subchain(items, lb)
        if b_chain:
            open_b(lb)
            cont = lb
        else:
            cont = new_label()
            extra.extend([LabelDef(cont), Instr("trust", (lb,))])
        if a_chain:
            k = _terminal(sub, la)
            sub[k] = Instr("retry_else", (sub[k].args[0], cont))
            return la
        start = new_label()
        extra[0:0] = [LabelDef(start), Instr("try_else", (la, cont))]
        return start

    merged: dict[tuple, str] = dict(ta)
    for key, lb in tb.items():
        merged[key] = merge_target(ta[key], lb) if key in ta else lb

    header: list[Item] = []
    labels = {}
    for op, cls in (("switch_on_constant", "c"), ("switch_on_structure", "s")):
        keys = [k for k in ta if key_class(k) == cls] + [k for k in tb if key_class(k) == cls and k not in ta]
        if not keys:
            labels[cls] = None
            continue
        lab = (A.tables.get(op) or B.tables[op])[0]
        labels[cls] = lab
        header += [LabelDef(lab), Instr(op, (tuple((k, merged[k]) for k in keys),))]
    sot = Instr("switch_on_term", (A.sot.args[0], labels["c"], merged.get(("l",)), labels["s"]))
    return A.pre + B.pre + [sot] + header + var_a + var_b + sub + extra


def combine_definitions(segments: Sequence[Sequence[Item]], new_label: Callable[[], str] | None = None,
                        merge_seams: bool = True) -> list[Item]:
    """Append the clause chains of several modules' code for one predicate."""
    new_label = new_label or LabelGen("K")
    blocks: list[Block] = []
    for seg in segments:
        bs = split_chain(seg)
        if merge_seams and blocks and blocks[-1].indexed and bs[0].indexed:
            prev = blocks[-1]
            blocks[-1] = Block(prev.label, merge_indexed_blocks(prev.items, bs[0].items, new_label))
            bs = bs[1:]
        blocks.extend(bs)
    if len(blocks) == 1:
        b = blocks[0]
        return ([LabelDef(b.label)] if b.label else []) + b.items
    labels = [b.label or new_label() for b in blocks]
    out: list[Item] = []
    for i, b in enumerate(blocks):
        out.append(LabelDef(labels[i]))
        if i == 0:
            out.append(Instr("try_me_else", (labels[1],)))
        elif i < len(blocks) - 1:
            out.append(Instr("retry_me_else", (labels[i + 1],)))
        else:
            out.append(Instr("trust_me"))
        out.extend(b.items)
    return out


# ---------------------------------------------------------------------------
# Chain simulation

def simulate_clause_order(asm: Assembled, entry: int, key: tuple | None) -> list[int]:
    """Clause start offsets entered, in order, when every clause fails after entry.

    ``key`` is the first-argument index key of the call (None for an unbound
    first argument).
    """
    code = asm.code
    starts = {s for s, _ in asm.clauses}
    stack: list[int] = []
    out: list[int] = []
    pc: int | None = entry
    for _ in range(100000):
        if pc is None or pc in starts or code[pc].op == "fail":
            if pc is not None and pc in starts:
                out.append(pc)
            if not stack:
                return out
            pc = stack[-1]
            continue
        ins = code[pc]
        op, args = ins.op, ins.args
        if op == "try_me_else":
            stack.append(args[0])
            pc += 1
        elif op == "retry_me_else":
            stack[-1] = args[0]
            pc += 1
        elif op == "trust_me":
            stack.pop()
            pc += 1
        elif op == "try":
            stack.append(pc + 1)
            pc = args[0]
        elif op == "retry":
            stack[-1] = pc + 1
            pc = args[0]
        elif op == "trust":
            stack.pop()
            pc = args[0]
        elif op == "try_else":
            stack.append(args[1])
            pc = args[0]
        elif op == "retry_else":
            stack[-1] = args[1]
            pc = args[0]
        elif op == "switch_on_term":
            pc = args["vcls".index(key_class(key))]
        elif op in ("switch_on_constant", "switch_on_structure"):
            pc = dict(args[0]).get(key)
        else:
            raise LinkError(f"unexpected {op} at {pc} while walking a clause chain")
    raise LinkError("clause chain does not terminate")


def compatible(clause_key: tuple | None, key: tuple | None) -> bool:
    return key is None or clause_key is None or clause_key == key


def canonical_clauses(items: Sequence[Item]) -> list[ClauseCode]:
    """Clause list of a merged chain, checking every switch path against it."""
    asm = assemble(items)
    by_start = dict(asm.clauses)
    order = simulate_clause_order(asm, 0, None)
    if sorted(order) != sorted(by_start):
        raise LinkError("variable-case chain does not visit every clause exactly once")
    clauses = [by_start[s] for s in order]
    for key in {c.key for c in clauses if c.key is not None}:
        got = [s for s in simulate_clause_order(asm, 0, key) if compatible(by_start[s].key, key)]
        want = [s for s in order if compatible(by_start[s].key, key)]
        if got != want:
            raise LinkError(f"switch path for {key} visits clauses out of order")
    return clauses


# ---------------------------------------------------------------------------
# Image layout

def _is_pred(ty: str) -> bool:
    return is_pred_type(decode_type(ty))


def layout_image(name: str, consts: Sequence[ImageConst], preds: dict[int, list[Item]]) -> Image:
    """Lay out predicate code in runtime-index order and patch call targets.

    Predicates that are called, or visible at the top level, but have no code
    get a single ``fail``.
    """
    called = {a.index for items in preds.values() for it in items if isinstance(it, ClauseCode)
              for ins in it.instrs if ins.op in ("call", "execute") for a in ins.args[:1]}
    code: list[Instr] = []
    entries: list[tuple[int, int]] = []
    for i, c in enumerate(consts):
        if i in preds:
            items = preds[i]
        elif i in called or (c.level == 0 and _is_pred(c.ty)):
            items = [Instr("fail")]
        else:
            continue
        entries.append((i, len(code)))
        code.extend(assemble(items, len(code)).code)
    offsets = dict(entries)
    code = [ins.map_refs(pred=lambda p: offsets[p.index]) for ins in code]
    return Image(name, tuple(consts), tuple(code), tuple(entries))


def layout_clauses(name: str, consts: Sequence[ImageConst], clauses: dict[int, list[ClauseCode]]) -> Image:
    return layout_image(name, consts, {p: emit_predicate(cs) for p, cs in clauses.items() if cs})


# ---------------------------------------------------------------------------
# Linking

class ObjectLoader:
    """Reads ``name.lmo`` from the first directory on the search path that has it."""

    def __init__(self, path: Iterable[str | Path] = (".",)):
        self.path = [Path(p) for p in path]
        self._cache: dict[str, ObjectFile] = {}

    def __call__(self, name: str) -> ObjectFile:
        if name not in self._cache:
            for d in self.path:
                p = d / f"{name}.lmo"
                if p.is_file():
                    self._cache[name] = decode(p.read_bytes())
                    break
            else:
                raise MissingObjectFile(f"cannot find {name}.lmo on search path "
                                        + ":".join(str(d) for d in self.path))
        return self._cache[name]


@dataclass
class Segment:
    module: str
    items: list[Item]
    closed: bool


@dataclass
class LinkResult:
    image: Image
    frame: Frame
    segments: dict[int, list[Segment]]


def _object_predicates(o: ObjectFile, prefix: str = "") -> list[tuple[ConstRef, list[Item]]]:
    starts = sorted(off for _, off in o.entries)
    out = []
    for ref, off in o.entries:
        later = [s for s in starts if s > off]
        end = later[0] if later else len(o.code)
        out.append((ref, lift(list(o.code), off, end, prefix)))
    return out


def _relocate(items: list[Item], o: ObjectFile, a: Assignment) -> list[Item]:
    def const(r: ConstRef) -> int:
        return a.refs[r]

    def pred(p) -> RtPred:
        if p.kind == "R":
            return RtPred(a.refs[o.redefinable[p.index]])
        return RtPred(a.refs[ConstRef(p.kind, p.index)])

    out: list[Item] = []
    for it in items:
        if isinstance(it, ClauseCode):
            out.append(it.map_refs(const, pred))
        elif isinstance(it, Instr):
            out.append(it.map_refs(const, pred))
        else:
            out.append(it)
    return out


def link_objects(root: str, load: Callable[[str], ObjectFile], layout: str = "canonical",
                 merge_seams: bool = True) -> LinkResult:
    """Link ``root`` and everything it accumulates.

    ``layout`` is ``"canonical"`` (re-emit each combined predicate from its
    clause order, the default) or ``"inplace"`` (keep the rewritten chains,
    including try_else/retry_else).
    """
    frame = Frame()
    segments: dict[int, list[Segment]] = {}

    def visit(name: str, parent: dict[str, int] | None, path: tuple[str, ...]):
        if name in path:
            raise CyclicAccumulation(list(path[path.index(name):]) + [name])
        o = load(name)
        validate(o)
        if o.name != name:
            raise LinkError(f"object file for {name} names module {o.name}")
        a = assign_indices(frame, o, parent, path + (name,))
        prefix = f"{len(frame.trace)}."
        for rm in o.accums:
            if rm.module in path + (name,):
                raise CyclicAccumulation(list((path + (name,))[(path + (name,)).index(rm.module):])
                                         + [rm.module])
            child = load(rm.module)
            if child.sig_digest != rm.digest:
                raise SignatureSkew(f"{name} was compiled against a different signature of {rm.module}")
            visit(rm.module, {n: a.refs[r] for n, r in rm.entries}, path + (name,))
        redef = set(o.redefinable)
        for ref, items in _object_predicates(o, prefix):
            segments.setdefault(a.refs[ref], []).append(
                Segment(name, _relocate(items, o, a), ref not in redef))

    visit(root, None, ())

    preds: dict[int, list[Item]] = {}
    gen = LabelGen("K")
    for p, segs in sorted(segments.items()):
        for s in segs[:-1]:
            if s.closed:
                pname = frame.consts[p].name or f"#{p}"
                raise MergeClosedDefinition(
                    f"predicate {pname} is closed in {s.module} but later modules add clauses")
        merged = combine_definitions([s.items for s in segs], gen, merge_seams)
        if layout == "canonical":
            merged = emit_predicate(canonical_clauses(merged))
        elif layout != "inplace":
            raise ValueError(f"unknown layout {layout}")
        preds[p] = merged
    return LinkResult(layout_image(root, frame.consts, preds), frame, segments)


def link(root: str, load: Callable[[str], ObjectFile], layout: str = "canonical",
         merge_seams: bool = True) -> Image:
    return link_objects(root, load, layout, merge_seams).image


def inline_compile(g: ModuleGraph, debug_names: bool = False) -> Image:
    """Whole-program compilation of a module graph straight to an image."""
    flat = flatten_graph(g)
    consts = tuple(ImageConst(c.display if (c.level == 0 or debug_names) else "", canon_type(c.ty), c.level)
                   for c in flat.consts)

    def const_ref(name: str) -> int:
        return flat.index[name]

    def pred_ref(name: str) -> RtPred:
        return RtPred(flat.index[name])

    clauses = {p: [compile_clause(flat.clauses[i].clause, const_ref, pred_ref) for i in idx]
               for p, idx in flat.predicates.items()}
    return layout_clauses(g.root, consts, clauses)
