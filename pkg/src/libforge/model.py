"""Domain types, task manifests, and validation shared by every other module.

All types are immutable after construction and safe to share across
concurrent workers. Serialization is canonical JSON (sorted keys, fixed
separators) so artifacts are byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .errors import InvalidCandidate, InvalidTask

ERROR_KINDS = ("assertion", "crash", "timeout")


def canonical_json(obj: Any) -> str:
    """Serialize to the one JSON form used for hashing and artifacts."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def dump_json(obj: Any) -> str:
    """Human-readable but still deterministic JSON for run-directory files."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class SourceUnit:
    """One original file: code text plus a reference to its test suite."""

    id: str
    code: str
    test_ref: str
    description: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "code": self.code,
            "test_ref": self.test_ref,
            "description": self.description,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SourceUnit":
        return cls(
            id=d["id"],
            code=d["code"],
            test_ref=d["test_ref"],
            description=d.get("description"),
        )


@dataclass(frozen=True)
class SuiteSpec:
    """Descriptor of one test suite in a task's registry.

    kind "mock": outcomes come from `manifest` rules, no code is executed.
    kind "files": `test_paths` are copied into a workspace and executed by
    the subprocess backend; the unit under test is written as `program_name`.
    """

    ref: str
    kind: str  # "mock" | "files"
    manifest: tuple | None = None  # mock rules, as loaded (tuple of dicts)
    test_paths: tuple[str, ...] = ()
    program_name: str = "solution.py"

    def to_dict(self) -> dict:
        return {
            "ref": self.ref,
            "kind": self.kind,
            "manifest": list(self.manifest) if self.manifest is not None else None,
            "test_paths": list(self.test_paths),
            "program_name": self.program_name,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SuiteSpec":
        manifest = d.get("manifest")
        return cls(
            ref=d["ref"],
            kind=d["kind"],
            manifest=tuple(manifest) if manifest is not None else None,
            test_paths=tuple(d.get("test_paths", ())),
            program_name=d.get("program_name", "solution.py"),
        )


@dataclass(frozen=True)
class Task:
    """A named set of related source units plus their test registry."""

    name: str
    units: tuple[SourceUnit, ...]
    test_registry: Mapping[str, SuiteSpec]
    tags: Mapping[str, frozenset[str]] | None = None

    def unit(self, unit_id: str) -> SourceUnit:
        for u in self.units:
            if u.id == unit_id:
                return u
        raise KeyError(unit_id)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "units": [u.to_dict() for u in self.units],
            "test_registry": {k: v.to_dict() for k, v in self.test_registry.items()},
            "tags": {k: sorted(v) for k, v in self.tags.items()} if self.tags else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Task":
        tags = d.get("tags")
        return cls(
            name=d["name"],
            units=tuple(SourceUnit.from_dict(u) for u in d["units"]),
            test_registry={k: SuiteSpec.from_dict(v) for k, v in d["test_registry"].items()},
            tags={k: frozenset(v) for k, v in tags.items()} if tags else None,
        )


@dataclass(frozen=True)
class Provenance:
    """Record of the sampling call that produced a candidate."""

    model: str
    temperature: float
    sample_index: int
    prompt_sha256: str

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "temperature": self.temperature,
            "sample_index": self.sample_index,
            "prompt_sha256": self.prompt_sha256,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Provenance":
        return cls(
            model=d["model"],
            temperature=d["temperature"],
            sample_index=d["sample_index"],
            prompt_sha256=d["prompt_sha256"],
        )


def candidate_digest(library: str, rewritten: Mapping[str, str]) -> str:
    """Deterministic 256-bit hex digest of a candidate's content.

    Order-insensitive over the rewritten map: entries are hashed in sorted
    key order.
    """
    if not rewritten:
        raise InvalidCandidate("rewritten map must not be empty")
    payload = canonical_json({"library": library, "rewritten": dict(sorted(rewritten.items()))})
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Candidate:
    """One proposed refactoring: new library text plus rewritten sources."""

    digest: str
    library: str
    rewritten: Mapping[str, str]
    provenance: Provenance

    @classmethod
    def create(
        cls, library: str, rewritten: Mapping[str, str], provenance: Provenance
    ) -> "Candidate":
        return cls(
            digest=candidate_digest(library, rewritten),
            library=library,
            rewritten=dict(rewritten),
            provenance=provenance,
        )

    def to_dict(self) -> dict:
        return {
            "digest": self.digest,
            "library": self.library,
            "rewritten": dict(sorted(self.rewritten.items())),
            "provenance": self.provenance.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Candidate":
        return cls(
            digest=d["digest"],
            library=d["library"],
            rewritten=dict(d["rewritten"]),
            provenance=Provenance.from_dict(d["provenance"]),
        )


@dataclass(frozen=True)
class TestOutcome:
    """The sets of test identifiers a unit passed, failed, or errored on."""

    unit_id: str
    passed: frozenset[str]
    failed: frozenset[str]
    errored: frozenset[tuple[str, str]]  # (test id, kind)

    def __post_init__(self):
        overlap = self.passed & self.failed
        if overlap:
            raise ValueError(f"tests both passed and failed: {sorted(overlap)}")
        for _, kind in self.errored:
            if kind not in ERROR_KINDS:
                raise ValueError(f"unknown error kind: {kind!r}")

    @property
    def total(self) -> int:
        return len(self.passed) + len(self.failed) + len(self.errored)

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "passed": sorted(self.passed),
            "failed": sorted(self.failed),
            "errored": [{"id": i, "kind": k} for i, k in sorted(self.errored)],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TestOutcome":
        return cls(
            unit_id=d["unit_id"],
            passed=frozenset(d["passed"]),
            failed=frozenset(d["failed"]),
            errored=frozenset((e["id"], e["kind"]) for e in d["errored"]),
        )


@dataclass(frozen=True)
class Loss:
    """Gated loss: a finite metric value, or Infeasible.

    Infeasible is an explicit variant (value is None), never a float
    infinity, so ranking code never compares NaN/inf.
    """

    value: float | None
    reason: str | None = None  # set when infeasible: "failed_tests" | "unscorable"

    @classmethod
    def finite(cls, value: float) -> "Loss":
        return cls(value=float(value))

    @classmethod
    def infeasible(cls, reason: str = "failed_tests") -> "Loss":
        return cls(value=None, reason=reason)

    @property
    def is_finite(self) -> bool:
        return self.value is not None

    def to_dict(self) -> dict:
        return {"value": self.value, "reason": self.reason}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Loss":
        return cls(value=d["value"], reason=d.get("reason"))


@dataclass(frozen=True)
class ScoreCard:
    """All four metric values plus the gated loss for one candidate."""

    tokens: int
    mdl_nats: float
    cc: int
    mi_neg: float
    loss: Loss

    def metric_value(self, metric: str) -> float:
        return {
            "tokens": float(self.tokens),
            "mdl": self.mdl_nats,
            "cc": float(self.cc),
            "mi": self.mi_neg,
        }[metric]

    def to_dict(self) -> dict:
        return {
            "tokens": self.tokens,
            "mdl_nats": self.mdl_nats,
            "cc": self.cc,
            "mi_neg": self.mi_neg,
            "loss": self.loss.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScoreCard":
        return cls(
            tokens=d["tokens"],
            mdl_nats=d["mdl_nats"],
            cc=d["cc"],
            mi_neg=d["mi_neg"],
            loss=Loss.from_dict(d["loss"]),
        )


def validate_task(task: Task) -> list[str]:
    """Return all invariant violations; empty list means the task is valid."""
    violations: list[str] = []
    if not task.units:
        violations.append("task has no units")
    seen: set[str] = set()
    for u in task.units:
        if u.id in seen:
            violations.append(f"duplicate id: {u.id}")
        seen.add(u.id)
        if not u.code:
            violations.append(f"unit {u.id}: empty code")
        if u.test_ref not in task.test_registry:
            violations.append(f"unit {u.id}: unknown test_ref {u.test_ref!r}")
    if task.tags:
        for unit_id in task.tags:
            if unit_id not in seen:
                violations.append(f"tags reference unknown unit: {unit_id}")
    return violations


def load_task(task_dir: str | Path) -> Task:
    """Load a task manifest directory (task.json + files/ + tests/).

    Manifest schema (task.json):
      name: str
      units: [{id, code_path, test_ref, description?}]
      test_registry: {ref: {kind: "mock", manifest_path} |
                           {kind: "files", test_paths: [...], program_name?}}
      tags?: {unit_id: [tag, ...]}

    code_path / manifest_path / test_paths are relative to the task dir;
    test_paths are resolved to absolute paths on load.
    """
    task_dir = Path(task_dir)
    manifest_file = task_dir / "task.json"
    if not manifest_file.is_file():
        raise InvalidTask([f"missing manifest: {manifest_file}"])
    try:
        raw = json.loads(manifest_file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidTask([f"malformed manifest {manifest_file}: {exc}"]) from exc

    units = []
    for entry in raw.get("units", []):
        code_path = task_dir / entry["code_path"]
        if not code_path.is_file():
            raise InvalidTask([f"unit {entry.get('id')}: missing code file {entry['code_path']}"])
        units.append(
            SourceUnit(
                id=entry["id"],
                code=code_path.read_text(encoding="utf-8"),
                test_ref=entry["test_ref"],
                description=entry.get("description"),
            )
        )

    registry: dict[str, SuiteSpec] = {}
    for ref, spec in raw.get("test_registry", {}).items():
        kind = spec.get("kind")
        if kind == "mock":
            manifest_path = task_dir / spec["manifest_path"]
            if not manifest_path.is_file():
                raise InvalidTask([f"suite {ref}: missing manifest {spec['manifest_path']}"])
            try:
                rules = json.loads(manifest_path.read_text(encoding="utf-8"))["rules"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise InvalidTask([f"suite {ref}: malformed manifest: {exc}"]) from exc
            registry[ref] = SuiteSpec(ref=ref, kind="mock", manifest=tuple(rules))
        elif kind == "files":
            paths = tuple(str(task_dir / p) for p in spec.get("test_paths", []))
            for p in paths:
                if not Path(p).is_file():
                    raise InvalidTask([f"suite {ref}: missing test file {p}"])
            registry[ref] = SuiteSpec(
                ref=ref,
                kind="files",
                test_paths=paths,
                program_name=spec.get("program_name", "solution.py"),
            )
        else:
            raise InvalidTask([f"suite {ref}: unknown kind {kind!r}"])

    tags_raw = raw.get("tags")
    tags = {k: frozenset(v) for k, v in tags_raw.items()} if tags_raw else None

    task = Task(
        name=raw.get("name", task_dir.name),
        units=tuple(units),
        test_registry=registry,
        tags=tags,
    )
    violations = validate_task(task)
    if violations:
        raise InvalidTask(violations)
    return task
