from __future__ import annotations

import io
import os
import subprocess
import sys

import pytest

import lpmod.cli
from lpmod.cli import EXIT_COMPILE, EXIT_DIFFER, EXIT_LINK, EXIT_NO, EXIT_OK, EXIT_USAGE, main

from conftest import ALL_GOALS, CORPUS, MANIFEST, POLICY


def cli(*argv, stdin: str = ""):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err, io.StringIO(stdin))
    return code, out.getvalue(), err.getvalue()


def build(graph: str, tmp_path):
    """compile every module of ``graph`` into tmp_path and link its root there."""
    d = CORPUS / graph
    mods = sorted(p.stem for p in d.glob("*.mod"))
    code, _, err = cli("compile", "--path", str(d), "--out-dir", str(tmp_path), *mods)
    assert code == EXIT_OK, err
    image = tmp_path / f"{MANIFEST[graph]['root']}.lmx"
    code, _, err = cli("link", "--path", str(tmp_path), MANIFEST[graph]["root"], "-o", str(image))
    assert code == EXIT_OK, err
    return image


class TestCheckCompileLink:
    def test_check(self):
        code, out, _ = cli("check", "--path", str(CORPUS / "nest"), "m5")
        assert code == EXIT_OK and out == "m5: ok (5 modules)\n"

    def test_check_type_error(self, tmp_path):
        (tmp_path / "bad.sig").write_text("sig bad. type p int -> o.\n")
        (tmp_path / "bad.mod").write_text('module bad.\ntype p int -> o.\np "x".\n')
        code, out, err = cli("check", "--path", str(tmp_path), "bad")
        assert code == EXIT_COMPILE and out == ""
        assert "TypeCheckError" in err

    def test_parse_error_has_position(self, tmp_path):
        (tmp_path / "bad.sig").write_text("sig bad.\n")
        (tmp_path / "bad.mod").write_text("module bad.\ntype p o\n")
        code, _, err = cli("check", "--path", str(tmp_path), "bad")
        assert code == EXIT_COMPILE
        assert "bad.mod:" in err

    def test_compile_writes_objects(self, tmp_path):
        code, out, _ = cli("compile", "--path", str(CORPUS / "store"), "--out-dir", str(tmp_path), "store")
        assert code == EXIT_OK
        assert (tmp_path / "store.lmo").read_bytes()[:4] == b"LMO1"
        assert out.strip().endswith("store.lmo")

    def test_policy_violation_exit(self):
        code, _, err = cli("compile", "--path", str(POLICY), "bad_extend", "--out-dir", "/nonexistent")
        assert code == EXIT_COMPILE and "ExportdefViolation" in err

    def test_source_cycle_is_compile_error(self):
        code, _, err = cli("check", "--path", str(POLICY), "cyc_a")
        assert code == EXIT_COMPILE
        assert "cyc_a -> cyc_b -> cyc_c -> cyc_a" in err

    def test_link_cycle(self, tmp_path):
        for m in ("cyc_a", "cyc_b", "cyc_c"):
            assert cli("compile", "--path", str(POLICY), "--out-dir", str(tmp_path), m)[0] == EXIT_OK
        code, out, err = cli("link", "--path", str(tmp_path), "cyc_a", "-o", str(tmp_path / "x.lmx"))
        assert code == EXIT_LINK and out == ""
        assert "cyc_a -> cyc_b -> cyc_c -> cyc_a" in err

    def test_link_missing_object(self, tmp_path):
        code, _, err = cli("link", "--path", str(tmp_path), "store")
        assert code == EXIT_LINK and "MissingObjectFile" in err

    def test_link_malformed_object(self, tmp_path):
        (tmp_path / "store.lmo").write_bytes(b"junk")
        code, _, err = cli("link", "--path", str(tmp_path), "store")
        assert code == EXIT_LINK and "BadMagic" in err


class TestRun:
    def test_wrapper(self, tmp_path):
        image = build("wrapper", tmp_path)
        assert cli("run", str(image), "test 5.", "--batch") == (EXIT_OK, "yes\n", "")

    def test_no_answers(self, tmp_path):
        image = build("store", tmp_path)
        assert cli("run", str(image), "init S.", "--batch") == (EXIT_NO, "no\n", "")

    def test_hidden_name_rejected(self, tmp_path):
        image = build("store", tmp_path)
        code, out, err = cli("run", str(image), "init emp.", "--batch")
        assert code == EXIT_COMPILE and out == "" and "UnknownConstant" in err

    def test_batch_separates_answers(self, tmp_path):
        image = build("nest", tmp_path)
        code, out, _ = cli("run", str(image), "w X.", "--batch")
        assert code == EXIT_OK
        assert out == "X = 10\n\nX = 11\n\nX = 30\n\nX = 31\n\nX = 50\n\nX = 5\n"

    def test_interactive(self, tmp_path):
        image = build("nest", tmp_path)
        code, out, _ = cli("run", str(image), stdin="w X.\n;\n\n")
        assert code == EXIT_OK
        assert out.startswith("?- X = 10 X = 11 \n?- ")

    def test_depth_bound(self, tmp_path):
        (tmp_path / "d.sig").write_text("sig d. type deep o.\n")
        (tmp_path / "d.mod").write_text("module d. type deep o. type two int -> o.\ntwo 1. two 2.\ndeep :- two X, deep.\n")
        cli("compile", "--path", str(tmp_path), "--out-dir", str(tmp_path), "d")
        cli("link", "--path", str(tmp_path), "d", "-o", str(tmp_path / "d.lmx"))
        code, _, err = cli("run", str(tmp_path / "d.lmx"), "deep.", "--batch", "--depth", "20")
        assert code == EXIT_USAGE and "DepthLimitExceeded" in err

    def test_missing_image(self, tmp_path):
        code, _, err = cli("run", str(tmp_path / "nope.lmx"), "true.")
        assert code == EXIT_USAGE and err


class TestInterp:
    def test_wrapper(self):
        assert cli("interp", "--path", str(CORPUS / "wrapper"), "wrapper", "test 5.", "--batch") == (
            EXIT_OK, "yes\n", "")

    def test_local_constant(self):
        code, _, err = cli("interp", "--path", str(CORPUS / "store"), "store", "init emp.", "--batch")
        assert code == EXIT_COMPILE and "LocalConstantInGoal" in err


@pytest.mark.parametrize("graph,goal", ALL_GOALS[::2])
def test_run_and_interp_stdout_identical(graph, goal, tmp_path):
    image = build(graph, tmp_path)
    a = cli("run", str(image), goal, "--batch")
    b = cli("interp", "--path", str(CORPUS / graph), MANIFEST[graph]["root"], goal, "--batch", "--depth", "2000")
    assert a[:2] == b[:2]


class TestVerifyDisasm:
    def test_verify_m5(self):
        code, out, _ = cli("verify", "--path", str(CORPUS / "nest"), "m5")
        assert code == EXIT_OK
        assert out.startswith("m5: IDENTICAL (")

    def test_verify_reports_difference(self, monkeypatch):
        monkeypatch.setattr(lpmod.cli, "inline_image_bytes", lambda *a, **k: b"LMX1 not the same")
        code, out, _ = cli("verify", "--path", str(CORPUS / "store"), "store")
        assert code == EXIT_DIFFER and "DIFFER at byte 4" in out

    def test_disasm_object_and_image(self, tmp_path):
        image = build("wrapper", tmp_path)
        code, out, _ = cli("disasm", str(tmp_path / "store.lmo"))
        assert code == EXIT_OK and out.startswith("object store")
        code, out, _ = cli("disasm", str(image))
        assert code == EXIT_OK and out.startswith("image wrapper")

    def test_disasm_garbage(self, tmp_path):
        (tmp_path / "junk").write_bytes(b"hello")
        code, _, err = cli("disasm", str(tmp_path / "junk"))
        assert code == EXIT_USAGE and err


class TestUsage:
    def test_no_subcommand(self):
        assert cli()[0] == EXIT_USAGE

    def test_unknown_flag(self):
        assert cli("run", "--frobnicate")[0] == EXIT_USAGE

    def test_lp_path_default(self, monkeypatch):
        monkeypatch.setenv("LP_PATH", f"{CORPUS / 'nest'}:{CORPUS / 'store'}")
        assert cli("check", "m5", "store")[0] == EXIT_OK

    def test_console_script(self):
        env = dict(os.environ, LP_PATH=str(CORPUS / "nest"))
        r = subprocess.run([sys.executable, "-m", "lpmod.cli", "verify", "m5"], capture_output=True,
                           text=True, env=env)
        assert r.returncode == 0 and "IDENTICAL" in r.stdout
