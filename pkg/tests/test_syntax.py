from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpmod.errors import (
    ClauseInSignature,
    DuplicateHeader,
    IllegalCharacter,
    ParseError,
    UnterminatedString,
)
from lpmod.syntax import (
    And,
    App,
    Atom,
    Const,
    Exists,
    IntLit,
    ListCons,
    ListNil,
    Or,
    RealLit,
    StrLit,
    TrueG,
    Var,
    goal_str,
    mk_app,
    module_str,
    parse_goal,
    parse_module_text,
    parse_signature_text,
    signature_str,
    term_str,
    tokenize,
)

from conftest import CORPUS


def toks(src):
    return [(t.kind, t.value) for t in tokenize(src)]


class TestTokenize:
    def test_empty(self):
        assert tokenize("") == []

    def test_store_clause(self):
        assert toks("add X S (stk X S).") == [
            ("id", "add"), ("var", "X"), ("var", "S"), ("punct", "("), ("id", "stk"),
            ("var", "X"), ("var", "S"), ("punct", ")"), ("punct", "."),
        ]

    def test_kind_decl(self):
        assert toks("kind store type -> type.") == [
            ("kw", "kind"), ("id", "store"), ("kw", "type"), ("punct", "->"), ("kw", "type"), ("punct", "."),
        ]

    def test_keywords(self):
        words = "module sig kind type exportdef useonly accumulate accum_sig use_sig"
        assert {k for k, _ in toks(words)} == {"kw"}

    def test_sigma_is_identifier(self):
        assert toks("sigma")[0] == ("id", "sigma")

    def test_punctuation_and_comments(self):
        got = toks("a :- b, c ; d :: e \\ % trailing comment\n")
        assert [v for k, v in got if k == "punct"] == [":-", ",", ";", "::", "\\"]

    def test_literals(self):
        assert toks('"hi\\n" 42 -7 2.5') == [("str", "hi\n"), ("int", 42), ("int", -7), ("real", 2.5)]

    def test_positions(self):
        t = tokenize("p.\n  q X.")
        assert (t[2].line, t[2].col) == (2, 3)

    def test_unterminated_string(self):
        with pytest.raises(UnterminatedString) as e:
            tokenize('p "abc')
        assert e.value.pos == (1, 3)

    def test_illegal_character(self):
        with pytest.raises(IllegalCharacter) as e:
            tokenize("p X :- X < 3.")
        assert e.value.pos is not None


class TestParseModule:
    def test_store(self):
        m = parse_module_text((CORPUS / "store" / "store.mod").read_text())
        assert m.name == "store"
        assert [(k.names, k.arity) for k in m.kinds] == [(("store",), 1)]
        assert [n for d in m.types for n in d.names] == ["emp", "stk", "init", "add", "remove"]
        assert len(m.clauses) == 3

    def test_accumulate_order(self):
        m = parse_module_text("module m5. accumulate m3, m4. type q int -> o. q 5.")
        assert m.accumulates == ("m3", "m4")

    def test_empty_module(self):
        m = parse_module_text("module e.")
        assert m.name == "e" and m.clauses == () and m.types == ()

    def test_duplicate_header(self):
        with pytest.raises(DuplicateHeader):
            parse_module_text("module a. module b.")

    def test_accum_and_use_sig(self):
        m = parse_module_text("module a. accum_sig s. use_sig t.")
        assert m.accum_sigs == (("s", "accum_sig"), ("t", "use_sig"))

    def test_sigma_body(self):
        m = parse_module_text("module a. type p int -> o. p X :- sigma Y\\ p Y.")
        assert isinstance(m.clauses[0].body, Exists)

    def test_missing_period(self):
        with pytest.raises(ParseError) as e:
            parse_module_text("module a. type p o")
        assert e.value.expected


class TestParseSignature:
    def test_store_sig(self):
        s = parse_signature_text((CORPUS / "store" / "store.sig").read_text())
        names = [n for d in s.types for n in d.names]
        assert names == ["init", "add", "remove"]
        assert "emp" not in names and "stk" not in names
        assert [(k.names, k.arity) for k in s.kinds] == [(("store",), 1)]

    def test_exportdef(self):
        s = parse_signature_text("sig s. exportdef p o.")
        d = s.types[0]
        assert d.names == ("p",) and d.mode == "exportdef"
        assert d.ty.con == "o"

    def test_accumulate_rejected(self):
        with pytest.raises(ClauseInSignature):
            parse_signature_text("sig s. accumulate m.")

    def test_clause_rejected(self):
        with pytest.raises(ClauseInSignature):
            parse_signature_text("sig s. type p o. p.")


class TestParseGoal:
    def test_true(self):
        assert parse_goal("true.").goal == TrueG()

    def test_atom(self):
        q = parse_goal("test 5.")
        assert q.goal == Atom(App(Const("test"), IntLit(5)))
        assert q.free_vars == ()

    def test_sigma_free_vars(self):
        q = parse_goal("sigma S\\ (init S, add 1 S T).")
        assert isinstance(q.goal, Exists) and q.goal.var == "S"
        assert isinstance(q.goal.body, And)
        assert q.free_vars == ("T",)

    def test_free_var_order(self):
        assert parse_goal("p Y X, q X Z.").free_vars == ("Y", "X", "Z")

    def test_conjunction_right_assoc(self):
        g = parse_goal("a, b, c.").goal
        assert isinstance(g, And) and isinstance(g.right, And)
        assert g.left == Atom(Const("a"))

    def test_comma_binds_tighter(self):
        g = parse_goal("a, b ; c.").goal
        assert isinstance(g, Or) and isinstance(g.left, And)

    def test_list_sugar(self):
        q = parse_goal("p (1 :: 2 :: nil).")
        t = q.goal.term.arg
        assert t == ListCons(IntLit(1), ListCons(IntLit(2), ListNil()))
        assert term_str(t) == "[1, 2]"

    def test_unterminated_goal(self):
        with pytest.raises(ParseError):
            parse_goal("p X")


def test_module_round_trip_on_corpus():
    for path in sorted(CORPUS.glob("*/*.mod")):
        m = parse_module_text(path.read_text())
        assert parse_module_text(module_str(m)) == m, path


def test_signature_round_trip_on_corpus():
    for path in sorted(CORPUS.glob("*/*.sig")):
        s = parse_signature_text(path.read_text())
        assert parse_signature_text(signature_str(s)) == s, path


# -- generated round trips ---------------------------------------------------

KEYWORDS = {"module", "sig", "kind", "type", "exportdef", "useonly", "accumulate", "accum_sig",
            "use_sig", "sigma", "true", "nil"}
const_names = st.from_regex(r"[a-z][a-z0-9_]{0,5}", fullmatch=True).filter(lambda s: s not in KEYWORDS)
var_names = st.from_regex(r"[A-DF-Z][a-z0-9]{0,3}", fullmatch=True)
# binders live in their own name space so printing never needs to rename them
binder_names = st.from_regex(r"E[0-9]{1,3}", fullmatch=True)
leaves = st.one_of(
    const_names.map(Const),
    var_names.map(Var),
    st.integers(-10**6, 10**6).map(IntLit),
    st.integers(-400, 400).map(lambda n: RealLit(n / 4)),
    st.text(st.characters(min_codepoint=32, max_codepoint=126), max_size=6).map(StrLit),
    st.just(ListNil()),
)


def _extend(children):
    return st.one_of(
        st.tuples(const_names, st.lists(children, min_size=1, max_size=3)).map(
            lambda p: mk_app(Const(p[0]), p[1])),
        st.tuples(children, children).map(lambda p: ListCons(*p)),
    )


terms = st.recursive(leaves, _extend, max_leaves=12)
atoms = st.tuples(const_names, st.lists(terms, max_size=3)).map(lambda p: Atom(mk_app(Const(p[0]), p[1])))


def _goal_extend(children):
    return st.one_of(
        st.tuples(children, children).map(lambda p: And(*p)),
        st.tuples(children, children).map(lambda p: Or(*p)),
        st.tuples(binder_names, children).map(lambda p: Exists(*p)),
    )


def _binders(g) -> list[str]:
    if isinstance(g, Exists):
        return [g.var] + _binders(g.body)
    if isinstance(g, (And, Or)):
        return _binders(g.left) + _binders(g.right)
    return []


goals = st.recursive(st.one_of(atoms, st.just(TrueG())), _goal_extend, max_leaves=8).filter(
    lambda g: len(set(_binders(g))) == len(_binders(g)))


@settings(max_examples=300, deadline=None)
@given(goals)
def test_goal_print_parse_round_trip(g):
    assert parse_goal(goal_str(g) + ".").goal == g


@settings(max_examples=200, deadline=None)
@given(st.lists(atoms, min_size=3, max_size=6))
def test_conjunction_shape(parts):
    text = ", ".join(goal_str(a) for a in parts) + "."
    g = parse_goal(text).goal
    for a in parts[:-1]:
        assert isinstance(g, And) and g.left == a
        g = g.right
    assert g == parts[-1]


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet="abXY(). ,;:-\\\"%\n12\t", max_size=40))
def test_tokenizer_total(src):
    # any input either tokenizes or raises a positioned lexical error
    try:
        out = tokenize(src)
    except (UnterminatedString, IllegalCharacter) as e:
        assert e.pos is not None
    else:
        assert all(t.line >= 1 and t.col >= 1 for t in out)
