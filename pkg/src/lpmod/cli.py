"""Command-line driver: check, compile, link, run, interp, disasm, verify."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Iterator, TextIO

from .compiler import compile_module
from .elaborate import flatten_graph, resolve_graph
from .errors import CyclicAccumulation, FormatError, FrontendError, LinkError, LPError
from .interp import Answer, Solver, show_answer
from .link import ObjectLoader, inline_compile, link
from .loader import SourceLoader, search_path
from .objfile import (
    IMG_MAGIC,
    OBJ_MAGIC,
    decode,
    decode_image,
    disassemble,
    disassemble_image,
    encode,
    encode_image,
    first_difference,
)
from .syntax import parse_goal
from .vm import compile_goal, load, run

EXIT_OK, EXIT_NO, EXIT_USAGE, EXIT_COMPILE, EXIT_LINK, EXIT_DIFFER = 0, 1, 2, 3, 4, 5
_SOURCE_COMMANDS = ("check", "compile", "interp", "verify")


def _exit_code(e: LPError, command: str = "") -> int:
    # a cycle found while reading sources is a compile-time error
    if isinstance(e, CyclicAccumulation) and command in _SOURCE_COMMANDS:
        return EXIT_COMPILE
    if isinstance(e, FrontendError):
        return EXIT_COMPILE
    if isinstance(e, LinkError):
        return EXIT_LINK
    # an unreadable object file is a link failure, an unreadable image is not
    if isinstance(e, FormatError) and command == "link":
        return EXIT_LINK
    return EXIT_USAGE


def _sources(args) -> SourceLoader:
    return SourceLoader(search_path(args.path))


def _module_name(arg: str) -> str:
    p = Path(arg)
    return p.stem if p.suffix in (".mod", ".sig", ".lmo", ".lmx") else arg


def cmd_check(args, out: TextIO) -> int:
    src = _sources(args)
    for m in args.modules:
        g = resolve_graph(_module_name(m), src)
        out.write(f"{g.root}: ok ({len(g.nodes)} modules)\n")
    return EXIT_OK


def cmd_compile(args, out: TextIO) -> int:
    src = _sources(args)
    outdir = Path(args.out_dir)
    for m in args.modules:
        name = _module_name(m)
        obj = compile_module(src.typed_module(name), debug_names=args.debug_names)
        target = outdir / f"{name}.lmo"
        target.write_bytes(encode(obj))
        out.write(f"wrote {target}\n")
    return EXIT_OK


def cmd_link(args, out: TextIO) -> int:
    name = _module_name(args.module)
    img = link(name, ObjectLoader(search_path(args.path)), layout=args.layout,
               merge_seams=not args.no_merge)
    target = Path(args.output or f"{name}.lmx")
    target.write_bytes(encode_image(img))
    out.write(f"wrote {target}\n")
    return EXIT_OK


def _answers_loop(answers: Iterator[Answer], args, out: TextIO, inp: TextIO) -> int:
    count = 0
    for a in answers:
        count += 1
        if args.batch:
            if count > 1:
                out.write("\n")
            out.write(show_answer(a) + "\n")
            continue
        out.write(show_answer(a) + " ")
        out.flush()
        reply = inp.readline()
        if reply.strip() != ";":
            out.write("\n")
            return EXIT_OK
    if count == 0:
        out.write("no\n")
        return EXIT_NO
    if not args.batch:
        out.write("\nno more answers\n")
    return EXIT_OK


def _goal_texts(args, out: TextIO, inp: TextIO) -> Iterator[str]:
    if args.goal is not None:
        yield args.goal
        return
    while True:
        out.write("?- ")
        out.flush()
        line = inp.readline()
        if not line:
            out.write("\n")
            return
        if line.strip():
            yield line.strip()


def _serve(make: Callable[[str], Iterator[Answer]], args, out: TextIO, inp: TextIO) -> int:
    status = EXIT_OK
    for text in _goal_texts(args, out, inp):
        status = _answers_loop(make(text), args, out, inp)
    return status


def cmd_run(args, out: TextIO, inp: TextIO) -> int:
    img = decode_image(Path(args.image).read_bytes())
    machine = load(img, occurs_check=not args.no_occurs, max_choicepoints=args.depth)
    return _serve(lambda text: run(machine, compile_goal(text, img)), args, out, inp)


def cmd_interp(args, out: TextIO, inp: TextIO) -> int:
    src = _sources(args)
    program = flatten_graph(resolve_graph(_module_name(args.module), src))

    def make(text: str):
        solver = Solver(program, depth=args.depth, occurs_check=not args.no_occurs)
        q = parse_goal(text)
        solver.check_goal(q)
        return solver.solve(q)

    return _serve(make, args, out, inp)


def cmd_disasm(args, out: TextIO) -> int:
    data = Path(args.file).read_bytes()
    if data[:4] == IMG_MAGIC:
        out.write(disassemble_image(decode_image(data)) + "\n")
    else:
        if data[:4] != OBJ_MAGIC:
            raise FormatError(f"{args.file} is neither an object file nor an image")
        out.write(disassemble(decode(data)) + "\n")
    return EXIT_OK


def separate_image_bytes(root: str, src: SourceLoader, debug_names: bool = False,
                         layout: str = "canonical") -> bytes:
    """Compile each module on its own, round-trip it through the object codec, and link."""
    g = resolve_graph(root, src)
    objs = {n: decode(encode(compile_module(src.typed_module(n), debug_names))) for n in g.nodes}
    return encode_image(link(root, objs.__getitem__, layout=layout))


def inline_image_bytes(root: str, src: SourceLoader, debug_names: bool = False) -> bytes:
    return encode_image(inline_compile(resolve_graph(root, src), debug_names))


def cmd_verify(args, out: TextIO) -> int:
    src = _sources(args)
    status = EXIT_OK
    for m in args.modules:
        name = _module_name(m)
        a = separate_image_bytes(name, src, args.debug_names)
        b = inline_image_bytes(name, src, args.debug_names)
        off = first_difference(a, b)
        if off is None:
            out.write(f"{name}: IDENTICAL ({len(a)} bytes)\n")
        else:
            out.write(f"{name}: DIFFER at byte {off} (separate {len(a)} bytes, inline {len(b)} bytes)\n")
            status = EXIT_DIFFER
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpmod", description="Modular logic programming toolchain.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_path(sp):
        sp.add_argument("--path", action="append", default=[], metavar="DIR",
                        help="search directory (repeatable; default $LP_PATH or .)")
        return sp

    def with_run_flags(sp):
        sp.add_argument("--batch", action="store_true", help="print all answers without prompting")
        sp.add_argument("--depth", type=int, default=None, help="search depth bound")
        sp.add_argument("--no-occurs", action="store_true", help="disable the occurs check")
        return sp

    sp = with_path(sub.add_parser("check", help="parse and type-check a module graph"))
    sp.add_argument("modules", nargs="+")

    sp = with_path(sub.add_parser("compile", help="compile modules to .lmo object files"))
    sp.add_argument("modules", nargs="+")
    sp.add_argument("--out-dir", default=".")
    sp.add_argument("--debug-names", action="store_true", help="keep local constant names")

    sp = with_path(sub.add_parser("link", help="link object files into a .lmx image"))
    sp.add_argument("module")
    sp.add_argument("-o", "--output")
    sp.add_argument("--layout", choices=("canonical", "inplace"), default="canonical")
    sp.add_argument("--no-merge", action="store_true", help="append chains without merging indexed seams")

    sp = with_run_flags(sub.add_parser("run", help="run a goal on a linked image"))
    sp.add_argument("image")
    sp.add_argument("goal", nargs="?")

    sp = with_run_flags(with_path(sub.add_parser("interp", help="run a goal with the reference interpreter")))
    sp.add_argument("module")
    sp.add_argument("goal", nargs="?")

    sp = sub.add_parser("disasm", help="list an object file or image")
    sp.add_argument("file")

    sp = with_path(sub.add_parser("verify", help="compare separately linked and inline-compiled images"))
    sp.add_argument("modules", nargs="+")
    sp.add_argument("--debug-names", action="store_true")
    return p


def main(argv: list[str] | None = None, out: TextIO | None = None, err: TextIO | None = None,
         inp: TextIO | None = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    inp = inp or sys.stdin
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=err)
    handlers = {
        "check": lambda: cmd_check(args, out),
        "compile": lambda: cmd_compile(args, out),
        "link": lambda: cmd_link(args, out),
        "run": lambda: cmd_run(args, out, inp),
        "interp": lambda: cmd_interp(args, out, inp),
        "disasm": lambda: cmd_disasm(args, out),
        "verify": lambda: cmd_verify(args, out),
    }
    try:
        return handlers[args.command]()
    except LPError as e:
        err.write(f"{e}\n")
        return _exit_code(e, args.command)
    except OSError as e:
        err.write(f"error: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
