from __future__ import annotations

import logging

import pytest

from lpmod.elaborate import (
    EClause,
    EConj,
    EExists,
    count_binders,
    elaborate,
    eformula_str,
    flatten,
    flatten_graph,
    resolve_graph,
)
from lpmod.errors import CyclicAccumulation, ModuleNotFound
from lpmod.loader import SourceLoader
from lpmod.syntax import spine, term_str

from conftest import ALL_GRAPHS, CORPUS, POLICY, graph_of, program_of


def nest():
    return resolve_graph("m5", SourceLoader([CORPUS / "nest"]))


class TestResolve:
    def test_nest_nodes_and_edges(self):
        g = nest()
        assert set(g.nodes) == {"m5", "m3", "m4", "m1", "m2"}
        assert g.edges["m5"] == ("m3", "m4")
        assert g.edges["m3"] == ("m1",)
        assert g.edges["m4"] == ("m2",)
        assert g.edges["m1"] == () and g.edges["m2"] == ()

    def test_single_module(self):
        g = resolve_graph("store", SourceLoader([CORPUS / "store"]))
        assert list(g.nodes) == ["store"] and g.edges["store"] == ()

    def test_two_cycle(self):
        files = {
            "a.sig": "sig a.", "a.mod": "module a. accumulate b.",
            "b.sig": "sig b.", "b.mod": "module b. accumulate a.",
        }
        with pytest.raises(CyclicAccumulation) as e:
            resolve_graph("a", SourceLoader(files=files))
        assert e.value.cycle == ["a", "b", "a"]

    def test_three_cycle(self):
        with pytest.raises(CyclicAccumulation) as e:
            resolve_graph("cyc_a", SourceLoader([POLICY]))
        assert e.value.cycle == ["cyc_a", "cyc_b", "cyc_c", "cyc_a"]

    def test_missing_module(self):
        files = {"a.sig": "sig a.", "a.mod": "module a. accumulate nowhere."}
        with pytest.raises(ModuleNotFound):
            resolve_graph("a", SourceLoader(files=files))

    def test_diamond_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            resolve_graph("top", SourceLoader([CORPUS / "diamond"]))
        assert "private copy" in caplog.text


class TestElaborate:
    def test_store_formula(self):
        e = elaborate(resolve_graph("store", SourceLoader([CORPUS / "store"])))
        assert isinstance(e, EExists) and e.name == "emp#1"
        assert isinstance(e.body, EExists) and e.body.name == "stk#2"
        matrix = e.body.body
        assert isinstance(matrix, EConj) and len(matrix.parts) == 3
        assert eformula_str(e) == (
            "exists emp#1. exists stk#2. (init emp#1 /\\ all X. all S. add X S (stk#2 X S) "
            "/\\ all X. all S. remove X (stk#2 X S) S)")

    def test_empty_module(self):
        g = resolve_graph("e", SourceLoader(files={"e.sig": "sig e.", "e.mod": "module e."}))
        e = elaborate(g)
        assert e == EConj(())
        p = flatten(e, g.nodes["e"].own_sig)
        assert p.consts == [] and p.clauses == []

    def test_nest_binders(self):
        e = elaborate(nest())
        names = []
        while isinstance(e, EExists):
            names.append(e.name)
            e = e.body
        assert [n.split("#")[0] for n in names] == ["q", "r", "w", "r"]
        assert len(set(names)) == 4

    def test_nest_sharing(self):
        # m1's r is m3's local r; m3's w and m5's w are the root global w
        p = program_of("nest")
        m1_r_clause = next(c for c in p.clauses if term_str(c.clause.head) == "r#2 1")
        assert m1_r_clause is not None
        heads = [spine(c.clause.head)[0].name for c in p.clauses]
        assert heads.count("w") == 6
        assert "r#4" in heads and "w#3" in heads

    @pytest.mark.parametrize("graph", ALL_GRAPHS)
    def test_every_local_bound_once(self, graph):
        g = graph_of(graph)
        e = elaborate(g)
        expected = 0

        def count(name):
            nonlocal expected
            expected += len(g.nodes[name].local_consts)
            for child in g.edges[name]:
                count(child)

        count(g.root)
        assert count_binders(e) == expected

    def test_binders_distinct(self):
        e = elaborate(graph_of("diamond"))
        names = []
        while isinstance(e, EExists):
            names.append(e.name)
            e = e.body
        assert len(names) == len(set(names)) == 6
        # counter reached along two paths: two disjoint copies of its hidden constants
        assert sorted(n.split("#")[0] for n in names) == ["bump", "bump", "lhs", "rhs", "step", "step"]


class TestFlatten:
    def test_store(self):
        p = flatten_graph(resolve_graph("store", SourceLoader([CORPUS / "store"])))
        assert [(c.display, c.level) for c in p.consts] == [
            ("init", 0), ("add", 0), ("remove", 0), ("emp", 1), ("stk", 1)]
        assert len(p.clauses) == 3

    def test_nest_levels(self):
        p = program_of("nest")
        assert [(c.display, c.level) for c in p.consts] == [
            ("w", 0), ("q", 1), ("r", 1), ("w", 1), ("r", 1)]

    def test_clause_order_accumulated_first(self):
        p = program_of("prop_logic")
        prove = p.index["prove"]
        heads = [term_str(c.clause.head) for c in p.clauses_of(prove)]
        assert heads[:4] == ["prove tt", "prove (and A B)", "prove (or A B)", "prove (or A B)"]
        assert heads[4] == "prove (atm N)"

    @pytest.mark.parametrize("graph", ALL_GRAPHS)
    def test_level_soundness(self, graph):
        g = graph_of(graph)
        p = program_of(graph)
        root_names = set(g.nodes[g.root].own_sig.names)
        for c in p.consts:
            assert (c.level == 0) == (c.name in root_names)

    def test_alpha_invariance(self):
        text = (CORPUS / "store" / "store.mod").read_text()
        renamed = text.replace("emp", "vide").replace("stk", "pile")
        sig = (CORPUS / "store" / "store.sig").read_text()
        a = flatten_graph(resolve_graph("store", SourceLoader(files={"store.mod": text, "store.sig": sig})))
        b = flatten_graph(resolve_graph("store", SourceLoader(files={"store.mod": renamed, "store.sig": sig})))
        assert [(c.ty, c.level) for c in a.consts] == [(c.ty, c.level) for c in b.consts]
        swap = {"vide": "emp", "pile": "stk"}

        def norm(s):
            for k, v in swap.items():
                s = s.replace(k, v)
            return s

        assert [term_str(c.clause.head) for c in a.clauses] == [norm(term_str(c.clause.head)) for c in b.clauses]

    def test_eclause_keeps_source(self):
        e = elaborate(resolve_graph("store", SourceLoader([CORPUS / "store"])))
        while isinstance(e, EExists):
            e = e.body
        assert all(isinstance(c, EClause) and c.source.pred for c in e.parts)
