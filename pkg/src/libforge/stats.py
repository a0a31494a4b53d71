"""Statistics over run artifacts.

best_at_k is the closed-form unbiased estimator of the expected reported
value of the min-score point among k draws: with the n feasible points
sorted ascending by score, point i is the minimum of exactly C(n-i, k-1)
of the C(n, k) subsets, so

    theta_hat_k = sum_i C(n-i, k-1) / C(n, k) * value_(i)

Ties are broken by the fixed permutation-invariant key (score, value, tag)
so the subset kernel stays symmetric. Subset enumeration survives only as
a test oracle.

bradley_terry_fit computes maximum-likelihood pairwise strengths by
minorization updates, with the reference item pinned to strength 1.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DisconnectedGraph, IncompleteRun, InsufficientSamples
from .metrics import usage_stats
from .model import TestOutcome, dump_json

METRIC_ORDER = ("tokens", "mdl", "cc", "mi")

REPORT_FIELDS = (
    "Pass Rate",
    "Pass Rate Improvement",
    "MDL Ratio",
    "Token Ratio",
    "Library Functions",
    "Avg Calls per Function",
    "% Single Use Functions",
)


@dataclass(frozen=True)
class SamplePoint:
    """One sampled candidate: reranking score, reported value, feasibility."""

    score: float
    value: float
    feasible: bool
    tag: str = ""


def best_at_k(samples: Sequence[SamplePoint], k: int) -> float:
    """Unbiased estimate of the expected value of the min-score point among
    k draws; infeasible points are excluded before estimation."""
    feasible = sorted(
        (p for p in samples if p.feasible), key=lambda p: (p.score, p.value, p.tag)
    )
    n = len(feasible)
    if k < 1 or k > n:
        raise InsufficientSamples(f"k={k} outside [1, {n}]")
    denom = math.comb(n, k)
    total = 0.0
    for i, point in enumerate(feasible[: n - k + 1], start=1):
        total += math.comb(n - i, k - 1) / denom * point.value
    return total


def consensus_filter(
    comparisons: Sequence[tuple[str, str]], threshold: float = 0.75
) -> list[tuple[str, str]]:
    """Drop minority judgments on pairs where one side holds at least
    `threshold` of the votes; low-consensus pairs are kept whole."""
    tally: Counter = Counter(comparisons)
    out = []
    for winner, loser in comparisons:
        wins = tally[(winner, loser)]
        losses = tally[(loser, winner)]
        total = wins + losses
        majority = max(wins, losses) / total
        if majority >= threshold and wins != losses:
            if wins > losses:
                out.append((winner, loser))
        else:
            out.append((winner, loser))
    return out


def _check_connected(items: list[str], pairs: Iterable[tuple[str, str]]) -> None:
    parent = {i: i for i in items}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    roots = {find(i) for i in items}
    if len(roots) > 1:
        raise DisconnectedGraph(f"{len(roots)} components in comparison graph")


def bt_win_probability(strengths: Mapping[str, float], a: str, b: str) -> float:
    """Model probability that `a` beats `b` under fitted strengths."""
    pa, pb = strengths[a], strengths[b]
    if pa + pb == 0:
        return 0.5
    return pa / (pa + pb)


def bt_log_likelihood(
    strengths: Mapping[str, float], comparisons: Sequence[tuple[str, str]]
) -> float:
    ll = 0.0
    for winner, loser in comparisons:
        pw = max(strengths[winner], 1e-300)
        pl = max(strengths[loser], 1e-300)
        ll += math.log(pw) - math.log(pw + pl)
    return ll


def bradley_terry_fit(
    comparisons: Sequence[tuple[str, str]],
    reference: str | None = None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    consensus_threshold: float | None = None,
    history: list[float] | None = None,
) -> dict[str, float]:
    """Maximum-likelihood strengths from (winner, loser) pairs.

    `consensus_threshold` (e.g. 0.75) applies consensus_filter first.
    `history`, when given, collects the log-likelihood after every update.
    """
    if not comparisons:
        raise ValueError("no comparisons")
    if consensus_threshold is not None:
        comparisons = consensus_filter(comparisons, consensus_threshold)
    items = sorted({x for pair in comparisons for x in pair})
    _check_connected(items, comparisons)
    if reference is None:
        reference = items[0]
    if reference not in items:
        raise ValueError(f"reference {reference!r} not among compared items")

    wins: Counter = Counter(comparisons)
    games: Counter = Counter()
    for a, b in comparisons:
        games[(a, b)] += 1
        games[(b, a)] += 1
    total_wins = Counter(w for w, _ in comparisons)

    pi = {i: 1.0 for i in items}
    for _ in range(max_iter):
        new = {}
        for i in items:
            denom = 0.0
            for j in items:
                if i == j or games[(i, j)] == 0:
                    continue
                denom += games[(i, j)] / (pi[i] + pi[j])
            new[i] = total_wins[i] / denom if denom > 0 else 0.0
        scale = new[reference]
        if scale <= 0:
            scale = max(new.values()) or 1.0
        new = {i: v / scale for i, v in new.items()}
        if history is not None:
            history.append(bt_log_likelihood(new, comparisons))
        delta = max(abs(new[i] - pi[i]) / max(pi[i], 1e-12) for i in items)
        pi = new
        if delta < tol:
            break
    return pi


# ---------------------------------------------------------------------------
# run-directory reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    """Task-level report; json field names mirror the standard table rows."""

    task: str
    pass_rate: float  # percent
    pass_rate_improvement: float  # percentage points
    mdl_ratio: float
    token_ratio: float
    library_functions: int
    avg_calls_per_function: float
    single_use_percent: float
    per_cluster: tuple[dict, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "task": self.task,
            "Pass Rate": self.pass_rate,
            "Pass Rate Improvement": self.pass_rate_improvement,
            "MDL Ratio": self.mdl_ratio,
            "Token Ratio": self.token_ratio,
            "Library Functions": self.library_functions,
            "Avg Calls per Function": self.avg_calls_per_function,
            "% Single Use Functions": self.single_use_percent,
            "per_cluster": list(self.per_cluster),
        }


def _pass_rate(outcomes: Mapping[str, TestOutcome]) -> float:
    passed = sum(len(o.passed) for o in outcomes.values())
    total = sum(o.total for o in outcomes.values())
    return 100.0 * passed / total if total else 100.0


def _read_json(path: Path):
    if not path.is_file():
        raise IncompleteRun(f"missing artifact: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def _load_outcomes(path: Path) -> dict[str, TestOutcome]:
    return {uid: TestOutcome.from_dict(o) for uid, o in _read_json(path).items()}


def _cluster_dirs(run_dir: Path) -> list[Path]:
    clusters = run_dir / "clusters"
    if not clusters.is_dir():
        raise IncompleteRun(f"missing artifact: {clusters}")
    return sorted(
        (d for d in clusters.iterdir() if d.is_dir() and d.name.isdigit()),
        key=lambda d: int(d.name),
    )


def build_report(run_dir: str | Path) -> MetricReport:
    """Aggregate a completed run directory into a MetricReport."""
    run_dir = Path(run_dir)
    run_info = _read_json(run_dir / "run.json")
    baseline = _read_json(run_dir / "baseline.json")
    final_metrics = _read_json(run_dir / "final_metrics.json")
    final_outcomes = _load_outcomes(run_dir / "outcomes.json")
    baseline_outcomes = {
        uid: TestOutcome.from_dict(o) for uid, o in baseline["outcomes"].items()
    }
    library_text = (run_dir / "library" / "codebank.py").read_text(encoding="utf-8")
    rewritten_dir = run_dir / "rewritten"
    index = _read_json(rewritten_dir / "index.json")
    finals = [
        (rewritten_dir / filename).read_text(encoding="utf-8") for filename in index.values()
    ]

    usage = usage_stats(library_text, finals)

    per_cluster = []
    for cdir in _cluster_dirs(run_dir):
        cres = _read_json(cdir / "result.json")
        cards = []
        for sdir in sorted(
            (d for d in (cdir / "samples").iterdir() if d.is_dir()), key=lambda d: int(d.name)
        ):
            record = _read_json(sdir / "record.json")
            if "scorecard" in record:
                cards.append(
                    {
                        "sample": int(sdir.name),
                        "scorecard": record["scorecard"],
                        "scored_digest": record.get("scored_digest"),
                    }
                )
        per_cluster.append(
            {
                "index": cres["index"],
                "unit_ids": cres["unit_ids"],
                "selection_digest": cres["selection_digest"],
                "counters": cres["counters"],
                "cluster_baseline": cres["cluster_baseline"],
                "scorecards": cards,
            }
        )

    base_pass = _pass_rate(baseline_outcomes)
    final_pass = _pass_rate(final_outcomes)

    def _ratio(final: float, base: float) -> float:
        return final / base if base else 1.0

    return MetricReport(
        task=run_info["task"],
        pass_rate=final_pass,
        pass_rate_improvement=final_pass - base_pass,
        mdl_ratio=_ratio(final_metrics["mdl"], baseline["mdl_nats"]),
        token_ratio=_ratio(final_metrics["tokens"], baseline["tokens"]),
        library_functions=usage.num_definitions,
        avg_calls_per_function=usage.avg_calls,
        single_use_percent=100.0 * usage.single_use_fraction,
        per_cluster=tuple(per_cluster),
    )


def scaling_rows(run_dir: str | Path) -> list[tuple[str, int, float]]:
    """Best@k curve data: for each metric, theta_hat_k averaged over
    clusters having at least k feasible samples. Values are ratios against
    the per-cluster identity baseline where that baseline is nonzero."""
    run_dir = Path(run_dir)
    run_info = _read_json(run_dir / "run.json")
    run_metric = run_info["run_config"]["metric"]

    cluster_samples: dict[str, list[list[SamplePoint]]] = {m: [] for m in METRIC_ORDER}
    for cdir in _cluster_dirs(run_dir):
        cres = _read_json(cdir / "result.json")
        cluster_base = cres["cluster_baseline"]
        per_metric: dict[str, list[SamplePoint]] = {m: [] for m in METRIC_ORDER}
        for sdir in sorted(
            (d for d in (cdir / "samples").iterdir() if d.is_dir()), key=lambda d: int(d.name)
        ):
            record = _read_json(sdir / "record.json")
            card = record.get("scorecard")
            if card is None:
                continue
            feasible = card["loss"]["value"] is not None
            metric_values = {
                "tokens": float(card["tokens"]),
                "mdl": card["mdl_nats"],
                "cc": float(card["cc"]),
                "mi": card["mi_neg"],
            }
            score = metric_values[run_metric]
            for m in METRIC_ORDER:
                base = cluster_base[m]
                value = metric_values[m] / base if base else metric_values[m]
                per_metric[m].append(
                    SamplePoint(
                        score=score,
                        value=value,
                        feasible=feasible,
                        tag=record.get("scored_digest", ""),
                    )
                )
        for m in METRIC_ORDER:
            if per_metric[m]:
                cluster_samples[m].append(per_metric[m])

    rows: list[tuple[str, int, float]] = []
    for m in METRIC_ORDER:
        populations = cluster_samples[m]
        max_k = max((sum(p.feasible for p in pop) for pop in populations), default=0)
        for k in range(1, max_k + 1):
            estimates = [
                best_at_k(pop, k)
                for pop in populations
                if sum(p.feasible for p in pop) >= k
            ]
            if estimates:
                rows.append((m, k, sum(estimates) / len(estimates)))
    return rows


def coherence_rows(run_dir: str | Path) -> list[tuple[int, float, float]]:
    """(cluster index, normalized tag entropy, HHI) per cluster, from the
    tags recorded in the cluster plan."""
    from .clustering import ClusterPlan, TagProfile, hhi, tag_entropy

    run_dir = Path(run_dir)
    payload = _read_json(run_dir / "clusters" / "plan.json")
    if not payload.get("plan"):
        return []
    plan = ClusterPlan.from_dict(payload["plan"])
    tags = {uid: frozenset(v) for uid, v in (payload.get("tags") or {}).items()}
    profile = TagProfile.from_tags(tags, plan)
    return [
        (i, tag_entropy(profile, i), hhi(profile, i)) for i in range(len(plan.clusters))
    ]


def write_report_files(
    run_dir: str | Path, report: MetricReport, scaling: bool = True
) -> None:
    run_dir = Path(run_dir)
    (run_dir / "report.json").write_text(dump_json(report.to_json_dict()), encoding="utf-8")
    if not scaling:
        return
    with (run_dir / "scaling.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "k", "theta_k"])
        for metric, k, theta in scaling_rows(run_dir):
            writer.writerow([metric, k, repr(theta)])
    with (run_dir / "coherence.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "tag_entropy", "hhi"])
        for idx, h_n, h in coherence_rows(run_dir):
            writer.writerow([idx, repr(h_n), repr(h)])
