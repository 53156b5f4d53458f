"""Locate, parse and check module and signature files along a search path."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, Mapping

from .errors import CyclicAccumulation, ModuleNotFound, ParseError
from .syntax import ModuleAst, SignatureAst, parse_module_text, parse_signature_text
from .typecheck import CheckedSignature, TypedModule, check_module, check_signature


def search_path(cli_path: Iterable[str] | None = None) -> list[Path]:
    """Directories from ``--path`` (in order), else ``LP_PATH``, else the current directory."""
    dirs = [p for p in (cli_path or []) if p]
    if not dirs:
        env = os.environ.get("LP_PATH", "")
        dirs = [p for p in env.split(":") if p]
    return [Path(p) for p in (dirs or ["."])]


class SourceLoader:
    """Loads ``name.mod``/``name.sig`` either from disk or from an in-memory mapping.

    Results are cached per name; every module is type-checked at most once.
    """

    def __init__(self, path: Iterable[str | Path] | None = None,
                 files: Mapping[str, str] | None = None):
        self.path = [Path(p) for p in path] if path is not None else [Path(".")]
        self.files = dict(files) if files is not None else None
        self._mods: dict[str, ModuleAst] = {}
        self._sigasts: dict[str, SignatureAst] = {}
        self._sigs: dict[str, CheckedSignature] = {}
        self._typed: dict[str, TypedModule] = {}
        self._sig_stack: list[str] = []

    def read(self, name: str, ext: str) -> tuple[str, str]:
        fname = f"{name}.{ext}"
        if self.files is not None:
            if fname not in self.files:
                raise ModuleNotFound(f"cannot find {fname}")
            return self.files[fname], fname
        for d in self.path:
            p = d / fname
            if p.is_file():
                return p.read_text(encoding="latin-1"), str(p)
        raise ModuleNotFound(f"cannot find {fname} on search path "
                             + ":".join(str(d) for d in self.path))

    def locate(self, name: str, ext: str) -> str:
        return self.read(name, ext)[1]

    def module_ast(self, name: str) -> ModuleAst:
        if name not in self._mods:
            text, fname = self.read(name, "mod")
            m = parse_module_text(text, fname)
            if m.name != name:
                raise ParseError(f"module header names '{m.name}' but file is {name}.mod", m.pos,
                                 (name,), fname)
            self._mods[name] = m
        return self._mods[name]

    def signature_ast(self, name: str) -> SignatureAst:
        if name not in self._sigasts:
            text, fname = self.read(name, "sig")
            s = parse_signature_text(text, fname)
            if s.name != name:
                raise ParseError(f"signature header names '{s.name}' but file is {name}.sig", s.pos,
                                 (name,), fname)
            self._sigasts[name] = s
        return self._sigasts[name]

    def signature(self, name: str) -> CheckedSignature:
        if name in self._sigs:
            return self._sigs[name]
        if name in self._sig_stack:
            cyc = self._sig_stack[self._sig_stack.index(name):] + [name]
            raise CyclicAccumulation(cyc)
        self._sig_stack.append(name)
        try:
            ast = self.signature_ast(name)
            included = [self.signature(n) for n, _ in ast.accum_sigs]
            sig = check_signature(ast, included, self.locate(name, "sig"))
        finally:
            self._sig_stack.pop()
        self._sigs[name] = sig
        return sig

    def typed_module(self, name: str) -> TypedModule:
        if name not in self._typed:
            m = self.module_ast(name)
            own = self.signature(name)
            accs = [self.signature(a) for a in m.accumulates]
            inc = [self.signature(s) for s, _ in m.accum_sigs]
            self._typed[name] = check_module(m, own, accs, inc, self.locate(name, "mod"))
        return self._typed[name]
