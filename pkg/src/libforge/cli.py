"""Command-line entry point.

Subcommands: refactor, score, analyze, cluster, validate. Exit codes:
0 success, 2 invalid task, 3 gateway failure, 4 parse error, 5 incomplete
run. Every subcommand accepts --dry-run, which prints the resolved plan
and performs no side effects.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .config import resolve_config
from .errors import (
    BudgetExceeded,
    EndpointUnavailable,
    IncompleteRun,
    InvalidTask,
    ParseError,
)
from .gateway import LMGateway
from .model import Candidate, Provenance, load_task, validate_task
from .pipeline import run_refactor
from .scoring import (
    MetricId,
    baseline_metrics,
    gated_loss,
    score_cc,
    score_mdl,
    score_mi,
    score_tokens,
)

EXIT_INVALID_TASK = 2
EXIT_GATEWAY = 3
EXIT_PARSE = 4
EXIT_INCOMPLETE = 5


def _echo_json(obj) -> None:
    click.echo(json.dumps(obj, sort_keys=True, indent=2))


def _common_options(fn):
    fn = click.option("--config", "config_file", type=click.Path(), default=None,
                      help="Config file (default ./libforge.yaml when present).")(fn)
    fn = click.option("--dry-run", is_flag=True, help="Print resolved plan, do nothing.")(fn)
    return fn


@click.group()
def main() -> None:
    """Refactor related source files into a shared library."""


@main.command()
@click.argument("task_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", type=click.Path(), required=False,
              help="Run directory (default <task>/runs/<mode>-<metric>-k<k>-s<seed>).")
@click.option("--k", type=int, default=None, help="Sample budget per cluster.")
@click.option("--cluster-size", type=int, default=None)
@click.option("--metric", type=click.Choice([m.value for m in MetricId]), default=None)
@click.option("--mode", type=click.Choice(["parallel", "incremental"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=None, help="Worker pool size (default: cores).")
@click.option("--retrieval-top-m", type=int, default=None)
@click.option("--min-sloc", type=int, default=None)
@click.option("--seed-library", type=click.Path(exists=True), default=None,
              help="Library file whose entries pre-populate the accumulated state.")
@click.option("--sampler-endpoint", default=None)
@click.option("--scorer-endpoint", default=None)
@click.option("--embedder-endpoint", default=None)
@click.option("--cache-dir", default=None)
@click.option("--backend", "backend_kind", type=click.Choice(["mock", "subprocess"]), default=None)
@click.option("--runner-cmd", default=None, help="Subprocess backend runner command.")
@click.option("--test-timeout", type=float, default=None, help="Per-test timeout (seconds).")
@_common_options
def refactor(task_dir, out_dir, k, cluster_size, metric, mode, seed, jobs,
             retrieval_top_m, min_sloc, seed_library, sampler_endpoint,
             scorer_endpoint, embedder_endpoint, cache_dir, backend_kind,
             runner_cmd, test_timeout, config_file, dry_run):
    """Run the full refactoring pipeline on a task directory."""
    flags = {
        "run.k": k,
        "run.cluster_size": cluster_size,
        "run.metric": metric,
        "run.mode": mode,
        "run.seed": seed,
        "run.jobs": jobs,
        "run.retrieval_top_m": retrieval_top_m,
        "run.min_sloc": min_sloc,
        "run.seed_library": seed_library,
        "gateway.sampler_endpoint": sampler_endpoint,
        "gateway.scorer_endpoint": scorer_endpoint,
        "gateway.embedder_endpoint": embedder_endpoint,
        "gateway.cache_dir": cache_dir,
        "backend.kind": backend_kind,
        "backend.runner_cmd": runner_cmd,
        "backend.timeout_s": test_timeout,
    }
    resolved = resolve_config(flags, config_file, task_dir=task_dir)
    try:
        task = load_task(task_dir)
    except InvalidTask as exc:
        for violation in exc.violations:
            click.echo(f"invalid task: {violation}", err=True)
        sys.exit(EXIT_INVALID_TASK)

    cfg = resolved.run
    if ("run", "jobs") not in resolved.explicit:  # CLI default: logical cores
        from dataclasses import replace as dc_replace

        cfg = dc_replace(cfg, jobs=os.cpu_count() or 1)
        resolved.effective["run"]["jobs"] = cfg.jobs
    if out_dir is None:
        out_dir = str(
            Path(task_dir) / "runs" / f"{cfg.mode}-{cfg.metric}-k{cfg.k}-s{cfg.seed}"
        )
    if dry_run:
        _echo_json(
            {
                "action": "refactor",
                "task": task.name,
                "units": len(task.units),
                "out": out_dir,
                "effective_config": resolved.effective,
            }
        )
        return
    gateway = LMGateway(resolved.gateway)
    try:
        result = run_refactor(task, cfg, gateway, resolved.backend, out_dir,
                              config_echo=resolved.effective)
    except InvalidTask as exc:
        for violation in exc.violations:
            click.echo(f"invalid task: {violation}", err=True)
        sys.exit(EXIT_INVALID_TASK)
    except (EndpointUnavailable, BudgetExceeded) as exc:
        click.echo(f"gateway failure: {exc}", err=True)
        sys.exit(EXIT_GATEWAY)
    kept = sum(1 for c in result.cluster_results if c.kept_originals)
    click.echo(f"run dir: {result.run_dir}")
    click.echo(
        f"clusters: {len(result.cluster_results)} "
        f"(kept originals: {kept}), library entries: {len(result.library.entries)}"
    )


def _load_candidate_dir(candidate_dir: Path, task) -> Candidate:
    library_file = candidate_dir / "codebank.py"
    library = library_file.read_text(encoding="utf-8") if library_file.is_file() else ""
    index_file = candidate_dir / "index.json"
    index = json.loads(index_file.read_text(encoding="utf-8")) if index_file.is_file() else {}
    rewritten = {}
    from .pipeline import default_rewritten_filename

    for unit in task.units:
        filename = index.get(unit.id, default_rewritten_filename(unit.id))
        path = candidate_dir / filename
        if not path.is_file():
            raise FileNotFoundError(f"missing rewritten file for unit {unit.id}: {path}")
        rewritten[unit.id] = path.read_text(encoding="utf-8")
    return Candidate.create(
        library=library,
        rewritten=rewritten,
        provenance=Provenance(model="external", temperature=0.0, sample_index=0,
                              prompt_sha256=""),
    )


@main.command()
@click.argument("candidate_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("task_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--metric", type=click.Choice([m.value for m in MetricId]), default="mdl")
@click.option("--baseline", "with_baseline", is_flag=True, help="Also print metric ratios.")
@click.option("--scorer-endpoint", default=None)
@click.option("--cache-dir", default=None)
@click.option("--backend", "backend_kind", type=click.Choice(["mock", "subprocess"]), default=None)
@_common_options
def score(candidate_dir, task_dir, metric, with_baseline, scorer_endpoint,
          cache_dir, backend_kind, config_file, dry_run):
    """Score one externally produced candidate against a task."""
    flags = {
        "gateway.scorer_endpoint": scorer_endpoint,
        "gateway.cache_dir": cache_dir,
        "backend.kind": backend_kind,
    }
    resolved = resolve_config(flags, config_file, task_dir=task_dir)
    if dry_run:
        _echo_json(
            {
                "action": "score",
                "candidate_dir": str(candidate_dir),
                "task_dir": str(task_dir),
                "metric": metric,
                "effective_config": resolved.effective,
            }
        )
        return
    try:
        task = load_task(task_dir)
    except InvalidTask as exc:
        for violation in exc.violations:
            click.echo(f"invalid task: {violation}", err=True)
        sys.exit(EXIT_INVALID_TASK)
    gateway = LMGateway(resolved.gateway)
    try:
        candidate = _load_candidate_dir(Path(candidate_dir), task)
        from .harness import run_suite

        outcomes = {
            u.id: run_suite(u.id, candidate.rewritten[u.id], candidate.library,
                            task.test_registry[u.test_ref], resolved.backend)
            for u in task.units
        }
        baseline_outcomes = {
            u.id: run_suite(u.id, u.code, "", task.test_registry[u.test_ref],
                            resolved.backend)
            for u in task.units
        }
        base = baseline_metrics(task, gateway, baseline_outcomes, resolved.run.tokenizer)
        card = {
            "tokens": score_tokens(candidate, resolved.run.tokenizer),
            "mdl_nats": score_mdl(candidate, gateway),
            "cc": score_cc(candidate),
            "mi_neg": score_mi(candidate),
        }
        loss = gated_loss(candidate, base, outcomes, MetricId(metric), gateway,
                          resolved.run.tokenizer)
        card["loss"] = loss.to_dict()
        if with_baseline:
            card["ratios"] = {
                "tokens": card["tokens"] / base.tokens if base.tokens else 1.0,
                "mdl": card["mdl_nats"] / base.mdl_nats if base.mdl_nats else 1.0,
                "cc": card["cc"] / base.cc if base.cc else 1.0,
            }
    except (ParseError, FileNotFoundError) as exc:
        click.echo(f"parse error: {exc}", err=True)
        sys.exit(EXIT_PARSE)
    except (EndpointUnavailable, BudgetExceeded) as exc:
        click.echo(f"gateway failure: {exc}", err=True)
        sys.exit(EXIT_GATEWAY)
    _echo_json(card)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("what", type=click.Choice(["report", "scaling", "coherence", "all"]),
                default="all", required=False)
@_common_options
def analyze(run_dir, what, config_file, dry_run):
    """Aggregate a completed run into report.json / scaling.csv / coherence.csv."""
    if dry_run:
        _echo_json({"action": "analyze", "run_dir": str(run_dir), "what": what})
        return
    from .stats import build_report, coherence_rows, scaling_rows, write_report_files

    try:
        if what in ("report", "all"):
            report = build_report(run_dir)
            write_report_files(run_dir, report, scaling=(what == "all"))
            _echo_json(report.to_json_dict())
        if what == "scaling":
            rows = scaling_rows(run_dir)
            for metric, k, theta in rows:
                click.echo(f"{metric},{k},{theta}")
        if what == "coherence":
            for idx, h_n, h in coherence_rows(run_dir):
                click.echo(f"{idx},{h_n},{h}")
    except IncompleteRun as exc:
        click.echo(f"incomplete run: {exc}", err=True)
        sys.exit(EXIT_INCOMPLETE)


@main.command()
@click.argument("task_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--cluster-size", type=int, default=None)
@click.option("--min-sloc", type=int, default=None)
@_common_options
def cluster(task_dir, cluster_size, min_sloc, config_file, dry_run):
    """Summarize, embed, and cluster a task's units; print the plan."""
    flags = {"run.cluster_size": cluster_size, "run.min_sloc": min_sloc}
    resolved = resolve_config(flags, config_file, task_dir=task_dir)
    if dry_run:
        _echo_json(
            {
                "action": "cluster",
                "task_dir": str(task_dir),
                "effective_config": resolved.effective,
            }
        )
        return
    try:
        task = load_task(task_dir)
    except InvalidTask as exc:
        for violation in exc.violations:
            click.echo(f"invalid task: {violation}", err=True)
        sys.exit(EXIT_INVALID_TASK)
    from dataclasses import replace

    from .clustering import cluster_fixed_size, filter_refactorable, summarize

    gateway = LMGateway(resolved.gateway)
    eligible, passthrough = filter_refactorable(task.units, resolved.run.min_sloc)
    if len(eligible) < resolved.run.cluster_size:
        _echo_json({"plan": None, "passthrough": sorted(u.id for u in task.units)})
        return
    try:
        described = [replace(u, description=summarize(u, gateway)) for u in eligible]
        ordered = sorted(described, key=lambda u: u.id)
        vecs = gateway.embed([u.description or "" for u in ordered])
        plan = cluster_fixed_size({u.id: v for u, v in zip(ordered, vecs)},
                                  resolved.run.cluster_size)
    except (EndpointUnavailable, BudgetExceeded) as exc:
        click.echo(f"gateway failure: {exc}", err=True)
        sys.exit(EXIT_GATEWAY)
    _echo_json({"plan": plan.to_dict(), "passthrough": sorted(u.id for u in passthrough)})


@main.command()
@click.argument("task_dir", type=click.Path(exists=True, file_okay=False))
@_common_options
def validate(task_dir, config_file, dry_run):
    """Check a task manifest; exit 2 and list violations when invalid."""
    if dry_run:
        _echo_json({"action": "validate", "task_dir": str(task_dir)})
        return
    try:
        task = load_task(task_dir)
    except InvalidTask as exc:
        for violation in exc.violations:
            click.echo(violation, err=True)
        sys.exit(EXIT_INVALID_TASK)
    violations = validate_task(task)
    if violations:
        for violation in violations:
            click.echo(violation, err=True)
        sys.exit(EXIT_INVALID_TASK)
    click.echo(f"ok: {task.name} ({len(task.units)} units)")


if __name__ == "__main__":
    main()
