"""Hypothesis strategies for well-formed object files."""

from __future__ import annotations

from hypothesis import strategies as st

from lpmod.instr import OPCODES, ConstRef, Instr, PredRef, Reg
from lpmod.objfile import ConstEntry, ObjectFile, RenamingMap

names = st.text(st.characters(min_codepoint=33, max_codepoint=0x2FF), min_size=1, max_size=8)
types = st.sampled_from(["o", "int", ">(int,o)", "store('0)", ">('0,>(store('0),o))", "list(string)"])
u32s = st.integers(0, 0xFFFFFFFF - 1)
i64s = st.integers(-(1 << 63), (1 << 63) - 1)
reals = st.floats(allow_nan=False)
strings = st.text(max_size=10)
OPS = sorted(OPCODES)


@st.composite
def object_files(draw, max_code: int = 25) -> ObjectFile:
    glob_names = draw(st.lists(names, max_size=6, unique=True))
    globs = tuple(ConstEntry(n, draw(types)) for n in glob_names)
    locs = tuple(ConstEntry(draw(st.one_of(st.just(""), names)), draw(types))
                 for _ in range(draw(st.integers(0, 5))))
    consts = [ConstRef("G", i) for i in range(len(globs))] + [ConstRef("L", i) for i in range(len(locs))]
    const = st.sampled_from(consts) if consts else st.nothing()

    redef = tuple(draw(st.lists(const, max_size=4))) if consts else ()
    preds = [PredRef(c.space, c.index) for c in consts] + [PredRef("R", i) for i in range(len(redef))]
    pred = st.sampled_from(preds) if preds else st.nothing()

    n = draw(st.integers(0, max_code))
    label = st.integers(0, n - 1) if n else st.nothing()
    key = st.one_of(
        const.map(lambda c: ("c", c)) if consts else st.nothing(),
        i64s.map(lambda v: ("i", v)),
        reals.map(lambda v: ("r", v)),
        strings.map(lambda v: ("s", v)),
        st.just(("n",)),
        st.just(("l",)),
        st.tuples(const, st.integers(0, 9)).map(lambda p: ("f", p[0], p[1])) if consts else st.nothing(),
    )
    operand = {
        "L": label,
        "R": st.builds(Reg, st.sampled_from("xy"), st.integers(0, 300)),
        "N": st.integers(0, 1000),
        "C": const,
        "P": pred,
        "I": i64s,
        "F": reals,
        "S": strings,
        "T": st.lists(st.tuples(key, label), max_size=4).map(tuple),
    }
    usable = [op for op in OPS if all(
        (k not in "CP" or (consts if k == "C" else preds)) and (k not in "LT" or n) for k in OPCODES[op])]
    code = []
    for _ in range(n):
        op = draw(st.sampled_from(usable))
        args = []
        for k in OPCODES[op]:
            if op == "switch_on_term":
                args.append(draw(st.one_of(st.none(), label)))
            else:
                args.append(draw(operand[k]))
        code.append(Instr(op, tuple(args)))

    accums = []
    for _ in range(draw(st.integers(0, 2))):
        entries = tuple((draw(names), draw(const)) for _ in range(draw(st.integers(0, 3)))) if consts else ()
        accums.append(RenamingMap(draw(names), draw(st.binary(min_size=8, max_size=8)), entries))
    entries = tuple((draw(const), draw(label)) for _ in range(draw(st.integers(0, 4)))) if consts and n else ()
    return ObjectFile(draw(names), draw(st.binary(min_size=8, max_size=8)), globs, locs,
                      tuple(accums), redef, tuple(code), entries)
