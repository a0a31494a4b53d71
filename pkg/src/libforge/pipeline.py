"""End-to-end orchestration: per-cluster sample-and-rerank, parallel union
mode, and incremental accumulation mode with retrieval from the growing
library.

Output protocol markers are fixed verbatim; completions that deviate are
discarded (counted, never repaired). Runs are byte-reproducible under a
fixed seed and stub gateway: every artifact file is deterministic.
"""

from __future__ import annotations

import ast
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tokens
from .clustering import (
    DEFAULT_MIN_SLOC,
    ClusterPlan,
    cluster_fixed_size,
    filter_refactorable,
    summarize,
)
from .errors import ContextOverflow, InvalidTask, ParseError, ProtocolError
from .gateway import LMGateway
from .harness import RunnerBackend, run_suite
from .model import Candidate, ScoreCard, SourceUnit, Task, TestOutcome, dump_json
from .scoring import (
    KEEP_ORIGINALS,
    Baseline,
    KeepOriginals,
    MetricId,
    baseline_metrics,
    build_scorecard,
    score_cc,
    score_mdl,
    score_mi,
    score_tokens,
    select_best,
)

HELPER_MARKER = "# ==== NEW HELPER FUNCTIONS ===="
PROGRAM_MARKER_TEMPLATE = "# ########## PROGRAM: {unit_id} ##########"
_PROGRAM_MARKER_RE = re.compile(r"^# ########## PROGRAM: (.*?) ##########\s*$")
RETRIEVED_MARKER = "# ==== EXISTING LIBRARY FUNCTIONS (already available; call, do not redefine) ===="


@dataclass(frozen=True)
class RunConfig:
    k: int = 8
    cluster_size: int = 3
    metric: MetricId = MetricId.MDL
    mode: str = "parallel"  # "parallel" | "incremental"
    retrieval_top_m: int = 5
    seed: int = 0
    min_sloc: int = DEFAULT_MIN_SLOC
    jobs: int = 1
    tokenizer: str = tokens.REF_MODEL
    seed_library: str | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("sample budget k must be >= 1")
        if self.cluster_size < 1:
            raise ValueError("cluster size must be >= 1")
        if self.mode not in ("parallel", "incremental"):
            raise ValueError(f"unknown mode: {self.mode!r}")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "cluster_size": self.cluster_size,
            "metric": str(self.metric),
            "mode": self.mode,
            "retrieval_top_m": self.retrieval_top_m,
            "seed": self.seed,
            "min_sloc": self.min_sloc,
            "jobs": self.jobs,
            "tokenizer": self.tokenizer,
            "seed_library": self.seed_library,
        }


@dataclass(frozen=True)
class LibraryEntry:
    name: str
    source: str
    origin_cluster: int

    @property
    def is_prelude(self) -> bool:
        return self.name.startswith("_prelude_")


@dataclass(frozen=True)
class LibraryState:
    """Accumulated library across sequential cluster processing.

    Entries are append-only; name collisions on union are suffixed and the
    rename map returned so call sites can follow.
    """

    entries: tuple[LibraryEntry, ...] = ()
    revision: int = 0

    def text(self) -> str:
        return "\n\n".join(e.source.rstrip("\n") for e in self.entries) + (
            "\n" if self.entries else ""
        )

    def names(self) -> set[str]:
        return {e.name for e in self.entries}

    def union_with(
        self, delta: Sequence[LibraryEntry], cluster_index: int
    ) -> tuple["LibraryState", dict[str, str]]:
        existing = self.names()
        renames: dict[str, str] = {}
        new_entries = list(self.entries)
        for entry in delta:
            name = entry.name
            if not entry.is_prelude and name in existing:
                n = 2
                while f"{name}_v{n}" in existing:
                    n += 1
                renames[name] = f"{name}_v{n}"
                name = renames[entry.name]
            source = entry.source
            for old, new in renames.items():
                source = re.sub(rf"\b{re.escape(old)}\b", new, source)
            existing.add(name)
            new_entries.append(LibraryEntry(name=name, source=source, origin_cluster=cluster_index))
        return LibraryState(entries=tuple(new_entries), revision=self.revision + 1), renames


def parse_library_entries(library_text: str, origin_cluster: int) -> list[LibraryEntry]:
    """Split library source into one entry per top-level def/class; other
    top-level statements become prelude entries that travel with the text
    but are never retrieval targets."""
    if not library_text.strip():
        return []
    tree = ast.parse(library_text)
    lines = library_text.splitlines()
    entries: list[LibraryEntry] = []
    prelude_idx = 0
    for node in tree.body:
        start = node.lineno
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            if node.decorator_list:
                start = min(d.lineno for d in node.decorator_list)
            source = "\n".join(lines[start - 1 : node.end_lineno]) + "\n"
            entries.append(
                LibraryEntry(name=node.name, source=source, origin_cluster=origin_cluster)
            )
        else:
            source = "\n".join(lines[start - 1 : node.end_lineno]) + "\n"
            entries.append(
                LibraryEntry(
                    name=f"_prelude_{origin_cluster}_{prelude_idx}",
                    source=source,
                    origin_cluster=origin_cluster,
                )
            )
            prelude_idx += 1
    return entries


def build_prompt(units: Sequence[SourceUnit], retrieved: Sequence[LibraryEntry]) -> str:
    """Deterministic refactoring prompt for one cluster."""
    parts = [
        "You are refactoring a group of related programs into a shared library.",
        "Extract reusable helper functions and classes, and rewrite each program",
        "to use them via `from codebank import *`. Rewritten programs must keep",
        "passing their original tests.",
        "",
        "Respond with exactly these sections, markers verbatim:",
        f"{HELPER_MARKER}",
        "<new helper definitions; may be empty>",
    ]
    for unit in units:
        parts.append(PROGRAM_MARKER_TEMPLATE.format(unit_id=unit.id))
        parts.append("<rewritten program>")
    parts.append("")
    if retrieved:
        parts.append(RETRIEVED_MARKER)
        for entry in retrieved:
            parts.append(entry.source.rstrip("\n"))
        parts.append("")
    parts.append("The programs to refactor:")
    parts.append("")
    for unit in units:
        parts.append(PROGRAM_MARKER_TEMPLATE.format(unit_id=unit.id))
        if unit.description:
            parts.append(f"# description: {unit.description}")
        parts.append(unit.code.rstrip("\n"))
        parts.append("")
    return "\n".join(parts)


def parse_candidate(
    completion: str, cluster_units: Sequence[SourceUnit], provenance
) -> Candidate:
    """Strict inverse of the output protocol; raises ProtocolError on any
    marker deviation and ParseError when a section is not valid source."""
    lines = completion.splitlines()
    helper_line = None
    sections: list[tuple[str, int]] = []  # (unit id, line index of marker)
    for i, line in enumerate(lines):
        if line.rstrip() == HELPER_MARKER:
            if helper_line is not None:
                raise ProtocolError("duplicate helper marker")
            helper_line = i
        else:
            m = _PROGRAM_MARKER_RE.match(line)
            if m:
                sections.append((m.group(1), i))
    if helper_line is None:
        raise ProtocolError("missing helper marker")
    expected = {u.id for u in cluster_units}
    seen = [uid for uid, _ in sections]
    if len(seen) != len(set(seen)):
        raise ProtocolError("duplicate program section")
    unknown = set(seen) - expected
    if unknown:
        raise ProtocolError(f"unknown unit ids: {sorted(unknown)}")
    missing = expected - set(seen)
    if missing:
        raise ProtocolError(f"missing program sections: {sorted(missing)}")

    boundaries = sorted([helper_line] + [idx for _, idx in sections]) + [len(lines)]

    def section_text(start: int) -> str:
        end = boundaries[boundaries.index(start) + 1]
        text = "\n".join(lines[start + 1 : end]).strip()
        return text + "\n" if text else ""

    library = section_text(helper_line)
    rewritten = {uid: section_text(idx) for uid, idx in sections}
    for uid, source in rewritten.items():
        if not source:
            raise ProtocolError(f"empty program section: {uid}")
    try:
        if library:
            ast.parse(library)
        for source in rewritten.values():
            ast.parse(source)
    except SyntaxError as exc:
        raise ParseError(exc.msg or "syntax error", exc.lineno, exc.offset) from exc
    return Candidate.create(library=library, rewritten=rewritten, provenance=provenance)


def retrieve_relevant(
    library: LibraryState,
    cluster_units: Sequence[SourceUnit],
    m: int,
    gateway: LMGateway,
) -> list[LibraryEntry]:
    """Top-m library entries by max cosine similarity between the entry
    source embedding and any cluster-unit description embedding."""
    candidates = [e for e in library.entries if not e.is_prelude]
    if m <= 0 or not candidates:
        return []
    descriptions = [u.description or u.code for u in cluster_units]
    desc_vecs = np.stack(gateway.embed(descriptions))
    entry_vecs = np.stack(gateway.embed([e.source for e in candidates]))
    sims = entry_vecs @ desc_vecs.T  # unit norm -> cosine
    best = sims.max(axis=1)
    ranked = sorted(zip(candidates, best), key=lambda p: (-p[1], p[0].name))
    return [entry for entry, _ in ranked[:m]]


@dataclass
class SampleRecord:
    index: int
    status: str  # scored | protocol_error | parse_error | unscorable | redefines_retrieved
    completion: str
    detail: str = ""
    candidate: Candidate | None = None
    scored_digest: str | None = None
    scorecard: ScoreCard | None = None
    outcomes: dict[str, TestOutcome] | None = None


@dataclass
class ClusterResult:
    index: int
    unit_ids: tuple[str, ...]
    prompt: str
    samples: list[SampleRecord]
    selection_digest: str | None  # None = keep originals
    selected_sample_index: int | None
    delta: list[LibraryEntry]
    counters: dict[str, int]
    cluster_baseline: dict[str, float]

    @property
    def kept_originals(self) -> bool:
        return self.selection_digest is None


def _full_library_text(state_text: str, delta_text: str) -> str:
    if not state_text.strip():
        return delta_text
    if not delta_text.strip():
        return state_text
    return state_text.rstrip("\n") + "\n\n" + delta_text


def _cluster_identity_metrics(
    units: Sequence[SourceUnit], gateway: LMGateway, tokenizer: str
) -> dict[str, float]:
    from .model import Provenance

    ident = Candidate.create(
        library="",
        rewritten={u.id: u.code for u in units},
        provenance=Provenance(model="identity", temperature=0.0, sample_index=0, prompt_sha256=""),
    )
    return {
        "tokens": float(score_tokens(ident, tokenizer)),
        "mdl": score_mdl(ident, gateway),
        "cc": float(score_cc(ident)),
        "mi": score_mi(ident),
    }


def refactor_cluster(
    task: Task,
    cluster_units: Sequence[SourceUnit],
    cluster_index: int,
    state: LibraryState,
    retrieved: Sequence[LibraryEntry],
    cfg: RunConfig,
    gateway: LMGateway,
    backend: RunnerBackend,
    baseline: Baseline,
) -> ClusterResult:
    """Sample K candidates for one cluster, test, score, gate, and select."""
    prompt = build_prompt(cluster_units, retrieved)
    completions = gateway.sample(prompt, cfg.k)
    retrieved_names = {e.name for e in retrieved}
    state_text = state.text()

    counters = {
        "protocol_error": 0,
        "parse_error": 0,
        "unscorable": 0,
        "redefines_retrieved": 0,
    }
    records: list[SampleRecord] = []
    scored: list[tuple[Candidate, "object"]] = []
    by_digest: dict[str, SampleRecord] = {}

    for i, completion in enumerate(completions):
        record = SampleRecord(index=i, status="scored", completion=completion.text)
        records.append(record)
        try:
            candidate = parse_candidate(completion.text, cluster_units, completion.provenance)
        except ProtocolError as exc:
            record.status, record.detail = "protocol_error", str(exc)
            counters["protocol_error"] += 1
            continue
        except ParseError as exc:
            record.status, record.detail = "parse_error", str(exc)
            counters["parse_error"] += 1
            continue
        record.candidate = candidate

        delta_names = {e.name for e in parse_library_entries(candidate.library, cluster_index)}
        overlap = delta_names & retrieved_names
        if overlap:
            record.status = "redefines_retrieved"
            record.detail = f"redefines retrieved names: {sorted(overlap)}"
            counters["redefines_retrieved"] += 1
            continue

        full_library = _full_library_text(state_text, candidate.library)
        outcomes: dict[str, TestOutcome] = {}
        for unit in cluster_units:
            suite = task.test_registry[unit.test_ref]
            outcomes[unit.id] = run_suite(
                unit.id, candidate.rewritten[unit.id], full_library, suite, backend
            )
        record.outcomes = outcomes

        scored_candidate = Candidate.create(
            library=full_library,
            rewritten=dict(candidate.rewritten),
            provenance=completion.provenance,
        )
        record.scored_digest = scored_candidate.digest
        try:
            card = build_scorecard(
                scored_candidate, baseline, outcomes, cfg.metric, gateway, cfg.tokenizer
            )
        except (ParseError, ContextOverflow) as exc:
            record.status, record.detail = "unscorable", str(exc)
            counters["unscorable"] += 1
            continue
        record.scorecard = card
        scored.append((scored_candidate, card.loss))
        by_digest.setdefault(scored_candidate.digest, record)

    selection: Candidate | KeepOriginals = (
        select_best(scored) if scored else KEEP_ORIGINALS
    )
    if isinstance(selection, KeepOriginals):
        selection_digest = None
        selected_index = None
        delta: list[LibraryEntry] = []
    else:
        selection_digest = selection.digest
        winner = by_digest[selection.digest]
        selected_index = winner.index
        delta = parse_library_entries(winner.candidate.library, cluster_index)

    return ClusterResult(
        index=cluster_index,
        unit_ids=tuple(u.id for u in cluster_units),
        prompt=prompt,
        samples=records,
        selection_digest=selection_digest,
        selected_sample_index=selected_index,
        delta=delta,
        counters=counters,
        cluster_baseline=_cluster_identity_metrics(cluster_units, gateway, cfg.tokenizer),
    )


def _apply_renames(source: str, renames: Mapping[str, str]) -> str:
    for old, new in renames.items():
        source = re.sub(rf"\b{re.escape(old)}\b", new, source)
    return source


@dataclass
class RunResult:
    task: Task
    plan: ClusterPlan | None
    passthrough_ids: tuple[str, ...]
    baseline: Baseline
    cluster_results: list[ClusterResult]
    library: LibraryState
    revisions: list[int]  # entry count after each union step
    final_files: dict[str, str]
    final_outcomes: dict[str, TestOutcome]
    final_metrics: dict[str, float]
    collision_count: int
    run_dir: Path


def _sanitize_filename(unit_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", unit_id) or "unit"


def default_rewritten_filename(unit_id: str) -> str:
    """File name a unit's rewrite is stored under when no index maps it."""
    name = _sanitize_filename(unit_id)
    return name if name.endswith(".py") else name + ".py"


def _load_seed_library(path: str | None) -> LibraryState:
    if not path:
        return LibraryState()
    text = Path(path).read_text(encoding="utf-8")
    entries = parse_library_entries(text, origin_cluster=-1)
    return LibraryState(entries=tuple(entries), revision=0)


def _final_metrics(
    task: Task,
    final_files: Mapping[str, str],
    library_text: str,
    gateway: LMGateway,
    tokenizer: str,
) -> dict[str, float]:
    from .model import Provenance

    candidate = Candidate.create(
        library=library_text,
        rewritten=dict(final_files),
        provenance=Provenance(model="final", temperature=0.0, sample_index=0, prompt_sha256=""),
    )
    return {
        "tokens": float(score_tokens(candidate, tokenizer)),
        "mdl": score_mdl(candidate, gateway),
        "cc": float(score_cc(candidate)),
        "mi": score_mi(candidate),
    }


def run_parallel(
    task: Task,
    cfg: RunConfig,
    gateway: LMGateway,
    backend: RunnerBackend,
    run_dir: str | Path,
    config_echo: Mapping | None = None,
) -> RunResult:
    """Refactor every cluster independently and union the deltas."""
    return run_refactor(task, replace(cfg, mode="parallel"), gateway, backend,
                        run_dir, config_echo)


def run_incremental(
    task: Task,
    cfg: RunConfig,
    gateway: LMGateway,
    backend: RunnerBackend,
    run_dir: str | Path,
    config_echo: Mapping | None = None,
) -> RunResult:
    """Process clusters sequentially, carrying the accumulated library
    forward as retrievable context."""
    return run_refactor(task, replace(cfg, mode="incremental"), gateway, backend,
                        run_dir, config_echo)


def run_refactor(
    task: Task,
    cfg: RunConfig,
    gateway: LMGateway,
    backend: RunnerBackend,
    run_dir: str | Path,
    config_echo: Mapping | None = None,
) -> RunResult:
    """Execute a full refactoring run (parallel or incremental mode) and
    populate `run_dir` with deterministic artifacts."""
    from .model import validate_task

    violations = validate_task(task)
    if violations:
        raise InvalidTask(violations)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    eligible, passthrough = filter_refactorable(task.units, cfg.min_sloc)
    passthrough_ids = tuple(u.id for u in passthrough)

    descriptions: dict[str, str] = {}
    plan: ClusterPlan | None = None
    clustered_units: dict[str, SourceUnit] = {}
    if len(eligible) >= cfg.cluster_size:
        described = [replace(u, description=summarize(u, gateway)) for u in eligible]
        descriptions = {u.id: u.description or "" for u in described}
        ordered = sorted(described, key=lambda u: u.id)
        vecs = gateway.embed([u.description or "" for u in ordered])
        vectors = {u.id: v for u, v in zip(ordered, vecs)}
        plan = cluster_fixed_size(vectors, cfg.cluster_size)
        clustered_units = {u.id: u for u in described}
    else:
        passthrough_ids = tuple(u.id for u in task.units)

    # baseline: originals, empty library
    baseline_outcomes = {
        u.id: run_suite(u.id, u.code, "", task.test_registry[u.test_ref], backend)
        for u in task.units
    }
    baseline = baseline_metrics(task, gateway, baseline_outcomes, cfg.tokenizer)

    state = _load_seed_library(cfg.seed_library)
    revisions = [len(state.entries)]
    cluster_results: list[ClusterResult] = []
    final_files: dict[str, str] = {u.id: u.code for u in task.units}
    collision_count = 0

    clusters = list(plan.clusters) if plan else []

    def _run_one(index: int, cluster_ids: tuple[str, ...], current_state: LibraryState):
        units = [clustered_units[uid] for uid in cluster_ids]
        retrieved = retrieve_relevant(current_state, units, cfg.retrieval_top_m, gateway)
        return refactor_cluster(
            task, units, index, current_state, retrieved, cfg, gateway, backend, baseline
        )

    if cfg.mode == "parallel":
        with ThreadPoolExecutor(max_workers=max(1, cfg.jobs)) as pool:
            futures = [
                pool.submit(_run_one, i, cluster, state) for i, cluster in enumerate(clusters)
            ]
            cluster_results = [f.result() for f in futures]
        for result in cluster_results:
            state, renames = state.union_with(result.delta, result.index)
            collision_count += len(renames)
            revisions.append(len(state.entries))
            if result.selection_digest is not None:
                winner = result.samples[result.selected_sample_index]
                for uid in result.unit_ids:
                    final_files[uid] = _apply_renames(winner.candidate.rewritten[uid], renames)
    else:  # incremental: strictly sequential, library carried forward
        for i, cluster in enumerate(clusters):
            result = _run_one(i, cluster, state)
            cluster_results.append(result)
            state, renames = state.union_with(result.delta, result.index)
            collision_count += len(renames)
            revisions.append(len(state.entries))
            if result.selection_digest is not None:
                winner = result.samples[result.selected_sample_index]
                for uid in result.unit_ids:
                    final_files[uid] = _apply_renames(winner.candidate.rewritten[uid], renames)

    library_text = state.text()
    final_outcomes = {
        u.id: run_suite(
            u.id, final_files[u.id], library_text, task.test_registry[u.test_ref], backend
        )
        for u in task.units
    }
    final_metrics = _final_metrics(task, final_files, library_text, gateway, cfg.tokenizer)

    result = RunResult(
        task=task,
        plan=plan,
        passthrough_ids=passthrough_ids,
        baseline=baseline,
        cluster_results=cluster_results,
        library=state,
        revisions=revisions,
        final_files=final_files,
        final_outcomes=final_outcomes,
        final_metrics=final_metrics,
        collision_count=collision_count,
        run_dir=run_dir,
    )
    _write_run_dir(result, cfg, gateway, backend, descriptions, config_echo or {})
    return result


def _write_run_dir(
    result: RunResult,
    cfg: RunConfig,
    gateway: LMGateway,
    backend: RunnerBackend,
    descriptions: Mapping[str, str],
    config_echo: Mapping,
) -> None:
    from . import __version__
    from .stats import build_report, write_report_files

    run_dir = result.run_dir

    run_info = {
        "task": result.task.name,
        "version": __version__,
        "config": dict(config_echo),
        "run_config": cfg.to_dict(),
        "gateway_config": gateway.cfg.to_dict(),
        "backend": backend.to_dict(),
    }
    (run_dir / "run.json").write_text(dump_json(run_info), encoding="utf-8")

    clusters_dir = run_dir / "clusters"
    clusters_dir.mkdir(exist_ok=True)
    plan_payload = {
        "plan": result.plan.to_dict() if result.plan else None,
        "passthrough": sorted(result.passthrough_ids),
        "descriptions": dict(sorted(descriptions.items())),
        "tags": {uid: sorted(v) for uid, v in sorted((result.task.tags or {}).items())},
    }
    (clusters_dir / "plan.json").write_text(dump_json(plan_payload), encoding="utf-8")

    for cresult in result.cluster_results:
        cdir = clusters_dir / str(cresult.index)
        (cdir / "samples").mkdir(parents=True, exist_ok=True)
        (cdir / "prompt.txt").write_text(cresult.prompt, encoding="utf-8")
        for record in cresult.samples:
            sdir = cdir / "samples" / str(record.index)
            sdir.mkdir(parents=True, exist_ok=True)
            (sdir / "completion.txt").write_text(record.completion, encoding="utf-8")
            if record.candidate is not None:
                (sdir / "candidate.json").write_text(
                    dump_json(record.candidate.to_dict()), encoding="utf-8"
                )
            payload = {"status": record.status, "detail": record.detail}
            if record.scorecard is not None:
                payload["scorecard"] = record.scorecard.to_dict()
                payload["scored_digest"] = record.scored_digest
            if record.outcomes is not None:
                payload["outcomes"] = {
                    uid: o.to_dict() for uid, o in sorted(record.outcomes.items())
                }
            (sdir / "record.json").write_text(dump_json(payload), encoding="utf-8")
        (cdir / "result.json").write_text(
            dump_json(
                {
                    "index": cresult.index,
                    "unit_ids": list(cresult.unit_ids),
                    "selection_digest": cresult.selection_digest,
                    "selected_sample_index": cresult.selected_sample_index,
                    "delta_names": [e.name for e in cresult.delta],
                    "counters": cresult.counters,
                    "cluster_baseline": cresult.cluster_baseline,
                }
            ),
            encoding="utf-8",
        )

    lib_dir = run_dir / "library"
    lib_dir.mkdir(exist_ok=True)
    (lib_dir / "codebank.py").write_text(result.library.text(), encoding="utf-8")
    (lib_dir / "entries.json").write_text(
        dump_json(
            {
                "entries": [
                    {"name": e.name, "origin_cluster": e.origin_cluster}
                    for e in result.library.entries
                ],
                "revisions": result.revisions,
                "collisions": result.collision_count,
            }
        ),
        encoding="utf-8",
    )

    rw_dir = run_dir / "rewritten"
    rw_dir.mkdir(exist_ok=True)
    index: dict[str, str] = {}
    used: set[str] = set()
    for uid in sorted(result.final_files):
        base = default_rewritten_filename(uid)
        filename = base
        counter = 1
        while filename in used:
            filename = f"{base[: -len('.py')]}_{counter}.py"
            counter += 1
        used.add(filename)
        index[uid] = filename
        (rw_dir / filename).write_text(result.final_files[uid], encoding="utf-8")
    (rw_dir / "index.json").write_text(dump_json(index), encoding="utf-8")

    (run_dir / "baseline.json").write_text(
        dump_json(result.baseline.to_dict()), encoding="utf-8"
    )
    (run_dir / "outcomes.json").write_text(
        dump_json({uid: o.to_dict() for uid, o in sorted(result.final_outcomes.items())}),
        encoding="utf-8",
    )
    (run_dir / "final_metrics.json").write_text(
        dump_json(result.final_metrics), encoding="utf-8"
    )

    report = build_report(run_dir)
    write_report_files(run_dir, report, scaling=False)
