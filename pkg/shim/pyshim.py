"""Minimal in-workspace test executor.

Discovers test files in a workspace (default glob ``test_*.py``), finds
top-level ``test_*`` functions by parsing the source (no import side
effects during discovery), runs each test in its own subprocess with a
per-test timeout, and writes ``outcome.json``::

    {"passed": [...], "failed": [...],
     "errored": [{"id": ..., "kind": "assertion" | "crash" | "timeout"}]}

Test ids are ``<file>::<test name>``. A failing assertion counts as
failed; any other exception (including an import failure) is errored with
kind "crash"; a test exceeding the timeout is errored with kind
"timeout". The process exits 0 even when tests fail; a nonzero exit means
the shim itself broke.

Single file, standard library only, so it can be copied into any
workspace. Usage: ``shim <workspace> --timeout <seconds>``.
"""

from __future__ import annotations

import argparse
import ast
import importlib.util
import json
import os
import signal
import subprocess
import sys
import traceback
from pathlib import Path

EXIT_PASS = 0
EXIT_ASSERTION = 13
EXIT_CRASH = 14


def discover(workspace: Path, glob: str) -> list[tuple[str, str]]:
    """(file name, test name) pairs, in sorted file order then line order.

    Discovery parses the source instead of importing it, so a module that
    crashes or hangs at import time cannot take the shim down.
    """
    found: list[tuple[str, str]] = []
    for path in sorted(workspace.glob(glob)):
        try:
            tree = ast.parse(path.read_text(encoding="utf-8"))
        except SyntaxError:
            # unparseable test file: surface one crash entry per file
            found.append((path.name, "<module>"))
            continue
        for node in tree.body:
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and node.name.startswith(
                "test_"
            ):
                found.append((path.name, node.name))
    return found


def run_single(workspace: str, file_name: str, test_name: str) -> int:
    """Child-process entry: import the file, call one test, map the result
    to an exit code."""
    os.chdir(workspace)
    sys.path.insert(0, workspace)
    path = Path(workspace) / file_name
    try:
        spec = importlib.util.spec_from_file_location(path.stem, path)
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)
        if test_name == "<module>":
            return EXIT_CRASH  # reaching here means the file parsed after all
        fn = getattr(module, test_name)
        fn()
        return EXIT_PASS
    except AssertionError:
        traceback.print_exc()
        return EXIT_ASSERTION
    except BaseException:
        traceback.print_exc()
        return EXIT_CRASH


def execute(workspace: Path, timeout: float, glob: str = "test_*.py") -> dict:
    """Run every discovered test sequentially and return the outcome dict."""
    passed: list[str] = []
    failed: list[str] = []
    errored: list[dict] = []
    for file_name, test_name in discover(workspace, glob):
        test_id = f"{file_name}::{test_name}"
        cmd = [
            sys.executable,
            os.path.abspath(__file__),
            "--run-single",
            str(workspace),
            file_name,
            test_name,
        ]
        proc = subprocess.Popen(
            cmd,
            cwd=workspace,
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
            start_new_session=True,
        )
        try:
            returncode = proc.wait(timeout=timeout)
        except subprocess.TimeoutExpired:
            try:
                os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                pass
            proc.wait()
            errored.append({"id": test_id, "kind": "timeout"})
            continue
        if returncode == EXIT_PASS:
            passed.append(test_id)
        elif returncode == EXIT_ASSERTION:
            failed.append(test_id)
        else:
            errored.append({"id": test_id, "kind": "crash"})
    return {
        "passed": sorted(passed),
        "failed": sorted(failed),
        "errored": sorted(errored, key=lambda e: e["id"]),
    }


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if argv[:1] == ["--run-single"]:
        return run_single(argv[1], argv[2], argv[3])

    parser = argparse.ArgumentParser(prog="shim", description=__doc__.splitlines()[0])
    parser.add_argument("workspace", help="directory containing code and tests")
    parser.add_argument("--timeout", type=float, default=10.0, help="per-test timeout (s)")
    parser.add_argument("--glob", default="test_*.py", help="test file glob")
    args = parser.parse_args(argv)

    workspace = Path(args.workspace).resolve()
    if not workspace.is_dir():
        print(f"shim: workspace not found: {workspace}", file=sys.stderr)
        return 2
    outcome = execute(workspace, args.timeout, args.glob)
    (workspace / "outcome.json").write_text(
        json.dumps(outcome, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
