"""Execute a unit's test suite against original or rewritten code.

Two backends:

  mock        outcomes come from the suite's manifest rules; nothing runs.
              Rules are matched in order against the candidate code (and
              optionally the library text); the first match wins.
  subprocess  a fresh workspace is materialized (library as codebank.py,
              the unit under test, the suite's test files) and an external
              runner command is invoked on it. The runner writes
              outcome.json in the shared schema (data/outcome_schema.json).

Mock manifest rule shape::

    {"when": {"code_contains": "..."} | {"code_sha256": "..."} |
             {"library_contains": "..."} | "always",
     "passed": [...], "failed": [...], "errored": [{"id":..., "kind":...}]}
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .errors import BackendProtocolError, UnitMismatch, WorkspaceError
from .model import ERROR_KINDS, SuiteSpec, TestOutcome

LIBRARY_MODULE = "codebank"  # rewritten files import the library under this name


@dataclass(frozen=True)
class RunnerBackend:
    kind: str = "mock"  # "mock" | "subprocess"
    timeout_s: float = 10.0
    cpu_seconds: int | None = None
    memory_bytes: int | None = None
    workspace_root: str | None = None  # fresh temp dir per run lives under here
    runner_cmd: tuple[str, ...] = ("shim",)
    overall_timeout_s: float = 120.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "timeout_s": self.timeout_s,
            "cpu_seconds": self.cpu_seconds,
            "memory_bytes": self.memory_bytes,
            "workspace_root": self.workspace_root,
            "runner_cmd": list(self.runner_cmd),
            "overall_timeout_s": self.overall_timeout_s,
        }


def _rule_matches(rule: dict, code: str, library: str) -> bool:
    when = rule.get("when", "always")
    if when == "always":
        return True
    if "code_contains" in when:
        return when["code_contains"] in code
    if "code_sha256" in when:
        return hashlib.sha256(code.encode("utf-8")).hexdigest() == when["code_sha256"]
    if "library_contains" in when:
        return when["library_contains"] in library
    raise BackendProtocolError(f"unknown mock rule condition: {when!r}")


def _outcome_from_rule(unit_id: str, rule: dict) -> TestOutcome:
    return TestOutcome(
        unit_id=unit_id,
        passed=frozenset(rule.get("passed", [])),
        failed=frozenset(rule.get("failed", [])),
        errored=frozenset((e["id"], e["kind"]) for e in rule.get("errored", [])),
    )


def _run_mock(unit_id: str, code: str, library: str, suite: SuiteSpec) -> TestOutcome:
    if suite.manifest is None:
        raise BackendProtocolError(f"suite {suite.ref} has no mock manifest")
    for rule in suite.manifest:
        if _rule_matches(rule, code, library):
            return _outcome_from_rule(unit_id, rule)
    raise BackendProtocolError(f"no mock rule matched for unit {unit_id} (suite {suite.ref})")


def _parse_outcome_file(unit_id: str, path: Path) -> TestOutcome:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BackendProtocolError(f"unreadable outcome file {path}: {exc}") from exc
    for key in ("passed", "failed", "errored"):
        if key not in raw:
            raise BackendProtocolError(f"outcome file missing key {key!r}")
    errored = set()
    for entry in raw["errored"]:
        if not isinstance(entry, dict) or "id" not in entry or "kind" not in entry:
            raise BackendProtocolError(f"malformed errored entry: {entry!r}")
        if entry["kind"] not in ERROR_KINDS:
            raise BackendProtocolError(f"unknown error kind: {entry['kind']!r}")
        errored.add((entry["id"], entry["kind"]))
    return TestOutcome(
        unit_id=unit_id,
        passed=frozenset(raw["passed"]),
        failed=frozenset(raw["failed"]),
        errored=frozenset(errored),
    )


def _clean_env() -> dict[str, str]:
    # do not propagate credentials into tested code
    keep = ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "PYTHONPATH")
    env = {k: os.environ[k] for k in keep if k in os.environ}
    env["PYTHONDONTWRITEBYTECODE"] = "1"
    return env


def _limit_resources(backend: RunnerBackend):
    """preexec_fn applying rlimits; they are inherited by the runner's
    own child processes."""
    if backend.cpu_seconds is None and backend.memory_bytes is None:
        return None
    import resource

    def apply():
        if backend.cpu_seconds is not None:
            resource.setrlimit(resource.RLIMIT_CPU, (backend.cpu_seconds, backend.cpu_seconds))
        if backend.memory_bytes is not None:
            resource.setrlimit(resource.RLIMIT_AS, (backend.memory_bytes, backend.memory_bytes))

    return apply


def _run_subprocess(
    unit_id: str, code: str, library: str, suite: SuiteSpec, backend: RunnerBackend
) -> TestOutcome:
    root = backend.workspace_root
    if root:
        Path(root).mkdir(parents=True, exist_ok=True)
    workspace = Path(tempfile.mkdtemp(prefix="libforge-ws-", dir=root))
    try:
        try:
            (workspace / f"{LIBRARY_MODULE}.py").write_text(library, encoding="utf-8")
            (workspace / suite.program_name).write_text(code, encoding="utf-8")
            for test_path in suite.test_paths:
                src = Path(test_path)
                shutil.copy(src, workspace / src.name)
        except OSError as exc:
            raise WorkspaceError(f"cannot materialize workspace: {exc}") from exc

        cmd = [*backend.runner_cmd, str(workspace), "--timeout", str(backend.timeout_s)]
        try:
            proc = subprocess.run(
                cmd,
                cwd=workspace,
                env=_clean_env(),
                capture_output=True,
                timeout=backend.overall_timeout_s,
                preexec_fn=_limit_resources(backend),
            )
        except subprocess.TimeoutExpired:
            return TestOutcome(
                unit_id=unit_id,
                passed=frozenset(),
                failed=frozenset(),
                errored=frozenset({("__suite__", "timeout")}),
            )
        except OSError as exc:
            raise WorkspaceError(f"cannot invoke runner {cmd[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            raise BackendProtocolError(
                f"runner exited {proc.returncode}: {proc.stderr.decode('utf-8', 'replace')[:500]}"
            )
        return _parse_outcome_file(unit_id, workspace / "outcome.json")
    finally:
        shutil.rmtree(workspace, ignore_errors=True)


def run_suite(
    unit_id: str,
    code: str,
    library: str,
    suite: SuiteSpec,
    backend: RunnerBackend,
) -> TestOutcome:
    """Run one unit's suite against (code, library) and collect outcomes."""
    if backend.kind == "mock":
        return _run_mock(unit_id, code, library, suite)
    if backend.kind == "subprocess":
        return _run_subprocess(unit_id, code, library, suite, backend)
    raise BackendProtocolError(f"unknown backend kind: {backend.kind!r}")


def pass_gate(original: TestOutcome, candidate: TestOutcome) -> bool:
    """True iff the candidate passes every test the original passed."""
    if original.unit_id != candidate.unit_id:
        raise UnitMismatch(f"{original.unit_id} vs {candidate.unit_id}")
    return original.passed <= candidate.passed
