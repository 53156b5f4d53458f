from __future__ import annotations

import itertools
import json
from functools import lru_cache
from pathlib import Path

import pytest

from lpmod.compiler import compile_module
from lpmod.elaborate import flatten_graph, resolve_graph
from lpmod.interp import show_answer, solve
from lpmod.link import inline_compile, link
from lpmod.loader import SourceLoader
from lpmod.objfile import decode, encode
from lpmod.syntax import parse_goal
from lpmod.vm import compile_goal, load, run

TESTS = Path(__file__).parent
CORPUS = TESTS / "corpus"
POLICY = TESTS / "policy"
MANIFEST = json.loads((CORPUS / "manifest.json").read_text())
MAX_ANSWERS = 25


def corpus_dir(graph: str) -> Path:
    return CORPUS / graph


def sources(graph: str) -> SourceLoader:
    return SourceLoader([corpus_dir(graph)])


@lru_cache(maxsize=None)
def graph_of(graph: str):
    return resolve_graph(MANIFEST[graph]["root"], sources(graph))


@lru_cache(maxsize=None)
def program_of(graph: str):
    return flatten_graph(graph_of(graph))


def objects_of(src: SourceLoader, root: str) -> dict:
    """Compile every module reachable from ``root`` on its own, through the object codec."""
    g = resolve_graph(root, src)
    return {n: decode(encode(compile_module(src.typed_module(n)))) for n in g.nodes}


@lru_cache(maxsize=None)
def separate_image(graph: str, layout: str = "canonical", merge_seams: bool = True):
    objs = objects_of(sources(graph), MANIFEST[graph]["root"])
    return link(MANIFEST[graph]["root"], objs.__getitem__, layout=layout, merge_seams=merge_seams)


@lru_cache(maxsize=None)
def inline_image(graph: str):
    return inline_compile(graph_of(graph))


def interp_answers(program, goal: str, limit: int = MAX_ANSWERS) -> list[str]:
    return [show_answer(a) for a in itertools.islice(solve(program, parse_goal(goal), depth=2000), limit)]


def vm_answers(img, goal: str, limit: int = MAX_ANSWERS, machine=None) -> list[str]:
    m = machine or load(img)
    return [show_answer(a) for a in itertools.islice(run(m, compile_goal(goal, img)), limit)]


ALL_GRAPHS = sorted(MANIFEST)
ALL_GOALS = [(g, goal) for g in ALL_GRAPHS for goal in MANIFEST[g]["goals"]]


@pytest.fixture
def store_src() -> SourceLoader:
    return sources("store")


# -- acceptance report -------------------------------------------------------

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    failed = call.excinfo is not None and not call.excinfo.errisinstance(pytest.skip.Exception)
    prev = _criteria.get(n, (title, "PASS"))[1]
    if call.when == "call" or failed:
        _criteria[n] = (title, "FAIL" if failed or prev == "FAIL" else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}: {title}")
