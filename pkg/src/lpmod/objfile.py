"""Object files (``.lmo``), linked images (``.lmx``) and their binary codec.

All integers are little-endian and fixed width; strings and byte blobs are
prefixed with a u32 length. Absent labels are written as 0xFFFFFFFF.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import BadMagic, FormatError, ImageCorrupt, IndexOutOfRange, Truncated, UnsupportedVersion
from .instr import OPCODE_NAMES, OPCODE_NUMBERS, OPCODES, ConstRef, Instr, PredRef, Reg, key_str, listing

OBJ_MAGIC = b"LMO1"
IMG_MAGIC = b"LMX1"
VERSION = 1
NO_LABEL = 0xFFFFFFFF

_SPACES = {"G": 0, "L": 1}
_PRED_KINDS = {"R": 0, "G": 1, "L": 2}
_KEY_TAGS = {"c": 0, "i": 1, "r": 2, "s": 3, "n": 4, "f": 5, "l": 6}


@dataclass(frozen=True)
class ConstEntry:
    name: str
    ty: str  # canonical type encoding


@dataclass(frozen=True)
class RenamingMap:
    """How an accumulated module's signature globals map into this module's tables."""
    module: str
    digest: bytes
    entries: tuple[tuple[str, ConstRef], ...]


@dataclass(frozen=True)
class ObjectFile:
    name: str
    sig_digest: bytes
    globals: tuple[ConstEntry, ...] = ()
    locals: tuple[ConstEntry, ...] = ()
    accums: tuple[RenamingMap, ...] = ()
    redefinable: tuple[ConstRef, ...] = ()
    code: tuple[Instr, ...] = ()
    entries: tuple[tuple[ConstRef, int], ...] = ()

    def table(self, space: str) -> tuple[ConstEntry, ...]:
        return self.globals if space == "G" else self.locals

    def const_name(self, ref: ConstRef) -> str:
        e = self.table(ref.space)[ref.index]
        return e.name or str(ref)


@dataclass(frozen=True)
class ImageConst:
    name: str
    ty: str
    level: int


@dataclass(frozen=True)
class Image:
    name: str
    consts: tuple[ImageConst, ...] = ()
    code: tuple[Instr, ...] = ()
    entries: tuple[tuple[int, int], ...] = ()

    def entry_map(self) -> dict[int, int]:
        return dict(self.entries)

    def const_name(self, i: int) -> str:
        c = self.consts[i]
        return c.name or f"l{i}"


# ---------------------------------------------------------------------------
# Writer / reader primitives

class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def raw(self, b: bytes):
        self.parts.append(b)

    def u8(self, v: int):
        self.parts.append(struct.pack("<B", v))

    def u16(self, v: int):
        self.parts.append(struct.pack("<H", v))

    def u32(self, v: int):
        if not 0 <= v <= 0xFFFFFFFF:
            raise FormatError(f"value {v} does not fit in 32 bits")
        self.parts.append(struct.pack("<I", v))

    def i64(self, v: int):
        if not -(1 << 63) <= v < (1 << 63):
            raise FormatError(f"integer {v} does not fit in 64 bits")
        self.parts.append(struct.pack("<q", v))

    def f64(self, v: float):
        self.parts.append(struct.pack("<d", v))

    def blob(self, b: bytes):
        self.u32(len(b))
        self.parts.append(b)

    def str(self, s: str):
        self.blob(s.encode("utf-8"))

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated(f"unexpected end of data at byte {self.pos} (need {n} more)")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def str(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"invalid UTF-8 string: {e}") from None

    def count(self, min_size: int = 1) -> int:
        n = self.u32()
        if n * min_size > len(self.data) - self.pos:
            raise Truncated(f"count {n} exceeds remaining data")
        return n

    def end(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes")


# ---------------------------------------------------------------------------
# Operand codecs. Object files carry ConstRef/PredRef; images carry plain ints.

class _ObjRefs:
    def put_const(self, w: _Writer, r: ConstRef):
        w.u8(_SPACES[r.space])
        w.u32(r.index)

    def get_const(self, rd: _Reader) -> ConstRef:
        s = rd.u8()
        if s > 1:
            raise FormatError(f"bad constant space tag {s}")
        return ConstRef("GL"[s], rd.u32())

    def put_pred(self, w: _Writer, p: PredRef):
        w.u8(_PRED_KINDS[p.kind])
        w.u32(p.index)

    def get_pred(self, rd: _Reader) -> PredRef:
        k = rd.u8()
        if k > 2:
            raise FormatError(f"bad predicate reference tag {k}")
        return PredRef("RGL"[k], rd.u32())


class _ImgRefs:
    def put_const(self, w: _Writer, r: int):
        w.u32(r)

    def get_const(self, rd: _Reader) -> int:
        return rd.u32()

    put_pred = put_const
    get_pred = get_const


def _put_key(w: _Writer, key: tuple, refs):
    w.u8(_KEY_TAGS[key[0]])
    tag = key[0]
    if tag == "c":
        refs.put_const(w, key[1])
    elif tag == "i":
        w.i64(key[1])
    elif tag == "r":
        w.f64(key[1])
    elif tag == "s":
        w.str(key[1])
    elif tag == "f":
        refs.put_const(w, key[1])
        w.u32(key[2])


def _get_key(rd: _Reader, refs) -> tuple:
    t = rd.u8()
    if t == 0:
        return ("c", refs.get_const(rd))
    if t == 1:
        return ("i", rd.i64())
    if t == 2:
        return ("r", rd.f64())
    if t == 3:
        return ("s", rd.str())
    if t == 4:
        return ("n",)
    if t == 5:
        return ("f", refs.get_const(rd), rd.u32())
    if t == 6:
        return ("l",)
    raise FormatError(f"bad switch key tag {t}")


def _put_label(w: _Writer, lab):
    w.u32(NO_LABEL if lab is None else lab)


def _get_label(rd: _Reader):
    v = rd.u32()
    return None if v == NO_LABEL else v


def _put_instr(w: _Writer, ins: Instr, refs):
    w.u8(OPCODE_NUMBERS[ins.op])
    for kind, a in zip(OPCODES[ins.op], ins.args):
        if kind == "L":
            _put_label(w, a)
        elif kind == "R":
            w.u8(0 if a.kind == "x" else 1)
            w.u32(a.n)
        elif kind == "N":
            w.u32(a)
        elif kind == "C":
            refs.put_const(w, a)
        elif kind == "P":
            refs.put_pred(w, a)
        elif kind == "I":
            w.i64(a)
        elif kind == "F":
            w.f64(a)
        elif kind == "S":
            w.str(a)
        else:
            w.u32(len(a))
            for key, lab in a:
                _put_key(w, key, refs)
                _put_label(w, lab)


def _get_instr(rd: _Reader, refs) -> Instr:
    n = rd.u8()
    if n >= len(OPCODE_NAMES):
        raise FormatError(f"unknown opcode {n}")
    op = OPCODE_NAMES[n]
    args = []
    for kind in OPCODES[op]:
        if kind == "L":
            args.append(_get_label(rd))
        elif kind == "R":
            k = rd.u8()
            if k > 1:
                raise FormatError(f"bad register tag {k}")
            args.append(Reg("xy"[k], rd.u32()))
        elif kind == "N":
            args.append(rd.u32())
        elif kind == "C":
            args.append(refs.get_const(rd))
        elif kind == "P":
            args.append(refs.get_pred(rd))
        elif kind == "I":
            args.append(rd.i64())
        elif kind == "F":
            args.append(rd.f64())
        elif kind == "S":
            args.append(rd.str())
        else:
            args.append(tuple((_get_key(rd, refs), _get_label(rd)) for _ in range(rd.count(2))))
    return Instr(op, tuple(args))


def _check_labels(code, what=IndexOutOfRange):
    for pc, ins in enumerate(code):
        for t in ins.labels():
            if t is not None and not 0 <= t < len(code):
                raise what(f"instruction {pc} ({ins.op}) jumps to {t}, outside code of length {len(code)}")


# ---------------------------------------------------------------------------
# Object files

def encode(o: ObjectFile) -> bytes:
    """Deterministic bytes for an object file."""
    w = _Writer()
    refs = _ObjRefs()
    w.raw(OBJ_MAGIC)
    w.u16(VERSION)
    w.str(o.name)
    w.blob(o.sig_digest)
    for table in (o.globals, o.locals):
        w.u32(len(table))
        for e in table:
            w.str(e.name)
            w.str(e.ty)
    w.u32(len(o.accums))
    for rm in o.accums:
        w.str(rm.module)
        w.blob(rm.digest)
        w.u32(len(rm.entries))
        for name, ref in rm.entries:
            w.str(name)
            refs.put_const(w, ref)
    w.u32(len(o.redefinable))
    for r in o.redefinable:
        refs.put_const(w, r)
    w.u32(len(o.code))
    for ins in o.code:
        _put_instr(w, ins, refs)
    w.u32(len(o.entries))
    for r, off in o.entries:
        refs.put_const(w, r)
        w.u32(off)
    return w.bytes()


def _header(rd: _Reader, magic: bytes):
    m = rd.take(4)
    if m != magic:
        raise BadMagic(f"bad magic {m!r}, expected {magic!r}")
    v = rd.u16()
    if v != VERSION:
        raise UnsupportedVersion(f"format version {v} is not supported (expected {VERSION})")


def decode(data: bytes) -> ObjectFile:
    """Parse and fully validate object-file bytes."""
    rd = _Reader(bytes(data))
    refs = _ObjRefs()
    _header(rd, OBJ_MAGIC)
    name = rd.str()
    digest = rd.blob()
    tables = []
    for _ in range(2):
        tables.append(tuple(ConstEntry(rd.str(), rd.str()) for _ in range(rd.count(8))))
    glob, loc = tables
    accums = []
    for _ in range(rd.count(12)):
        mod = rd.str()
        dg = rd.blob()
        entries = tuple((rd.str(), refs.get_const(rd)) for _ in range(rd.count(9)))
        accums.append(RenamingMap(mod, dg, entries))
    redef = tuple(refs.get_const(rd) for _ in range(rd.count(5)))
    code = tuple(_get_instr(rd, refs) for _ in range(rd.count(1)))
    entries = tuple((refs.get_const(rd), rd.u32()) for _ in range(rd.count(9)))
    rd.end()
    o = ObjectFile(name, digest, glob, loc, tuple(accums), redef, code, entries)
    validate(o)
    return o


def validate(o: ObjectFile) -> None:
    sizes = {"G": len(o.globals), "L": len(o.locals)}

    def cref(r: ConstRef, where: str):
        if r.index >= sizes[r.space]:
            raise IndexOutOfRange(f"{where}: constant {r} outside table of size {sizes[r.space]}")
        return r

    def pref(p: PredRef, where: str):
        if p.kind == "R":
            if p.index >= len(o.redefinable):
                raise IndexOutOfRange(f"{where}: redefinable index {p.index} outside list of "
                                      f"size {len(o.redefinable)}")
        else:
            cref(ConstRef(p.kind, p.index), where)
        return p

    names = [e.name for e in o.globals]
    if any(not n for n in names) or len(set(names)) != len(names):
        raise FormatError("global constant names must be non-empty and unique")
    for rm in o.accums:
        for n, r in rm.entries:
            cref(r, f"renaming map for {rm.module}")
    for r in o.redefinable:
        cref(r, "redefinable list")
    for pc, ins in enumerate(o.code):
        ins.map_refs(lambda r, pc=pc: cref(r, f"instruction {pc}"),
                     lambda p, pc=pc: pref(p, f"instruction {pc}"))
    _check_labels(o.code)
    for r, off in o.entries:
        cref(r, "entry map")
        if off >= len(o.code):
            raise IndexOutOfRange(f"entry offset {off} outside code of length {len(o.code)}")


def disassemble(o: ObjectFile) -> str:
    """Human-readable listing of all six parts of an object file."""
    out = [f"object {o.name}  signature {o.sig_digest.hex()[:16]}"]
    out.append("globals:")
    out += [f"  g{i} {e.name} : {e.ty}" for i, e in enumerate(o.globals)]
    out.append("locals:")
    out += [f"  l{i} {e.name or '-'} : {e.ty}" for i, e in enumerate(o.locals)]
    out.append("accumulates:")
    for rm in o.accums:
        pairs = ", ".join(f"{n} -> {r}" for n, r in rm.entries)
        out.append(f"  {rm.module} [{pairs}]")
    out.append("redefinable: " + ", ".join(f"{o.const_name(r)}({r})" for r in o.redefinable))
    out.append("code:")
    entries = {off: o.const_name(r) for r, off in o.entries}
    out.append(listing(list(o.code), o.const_name, entries))
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Images

def encode_image(img: Image) -> bytes:
    w = _Writer()
    refs = _ImgRefs()
    w.raw(IMG_MAGIC)
    w.u16(VERSION)
    w.str(img.name)
    w.u32(len(img.consts))
    for c in img.consts:
        w.str(c.name)
        w.str(c.ty)
        w.u8(c.level)
    w.u32(len(img.code))
    for ins in img.code:
        _put_instr(w, ins, refs)
    w.u32(len(img.entries))
    for p, off in img.entries:
        w.u32(p)
        w.u32(off)
    return w.bytes()


def decode_image(data: bytes) -> Image:
    rd = _Reader(bytes(data))
    refs = _ImgRefs()
    _header(rd, IMG_MAGIC)
    name = rd.str()
    consts = tuple(ImageConst(rd.str(), rd.str(), rd.u8()) for _ in range(rd.count(9)))
    code = tuple(_get_instr(rd, refs) for _ in range(rd.count(1)))
    entries = tuple((rd.u32(), rd.u32()) for _ in range(rd.count(8)))
    rd.end()
    img = Image(name, consts, code, entries)
    validate_image(img)
    return img


def validate_image(img: Image) -> None:
    n = len(img.consts)

    def cref(i):
        if i >= n:
            raise IndexOutOfRange(f"constant index {i} outside table of size {n}")
        return i

    def pref(off):
        if off >= len(img.code):
            raise IndexOutOfRange(f"call target {off} outside code of length {len(img.code)}")
        return off

    for ins in img.code:
        ins.map_refs(cref, pref)
    _check_labels(img.code)
    for p, off in img.entries:
        cref(p)
        pref(off)


def disassemble_image(img: Image) -> str:
    out = [f"image {img.name}", "constants:"]
    out += [f"  {i:4d} {c.name or '-'} : {c.ty} @{c.level}" for i, c in enumerate(img.consts)]
    out.append("code:")
    entries = {off: img.const_name(p) for p, off in img.entries}
    out.append(listing(list(img.code), img.const_name, entries))
    return "\n".join(out)


def first_difference(a: bytes, b: bytes) -> int | None:
    """Offset of the first differing byte, or None when identical."""
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return None if len(a) == len(b) else min(len(a), len(b))
