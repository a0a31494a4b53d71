"""Candidate-level metrics, the test-gated loss, and argmin selection.

Every metric is oriented so that lower is better (maintainability index is
negated at scoring time), which keeps one comparator everywhere. The gate:
a candidate's loss is finite only when every rewritten unit passes at
least the tests its original passed; otherwise the loss is Infeasible and
the candidate can never be selected.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

from . import metrics, tokens
from .errors import ContextOverflow, ParseError
from .gateway import LMGateway
from .model import Candidate, Loss, ScoreCard, Task, TestOutcome

# Fixed conditional-scoring prompt format: library, blank line, file header.
FILE_HEADER_TEMPLATE = "\n\n# file: {unit_id}\n"


class MetricId(str, Enum):
    TOKENS = "tokens"
    MDL = "mdl"
    CC = "cc"
    MI = "mi"

    def __str__(self) -> str:  # round-trips with MetricId(str(m))
        return self.value


class KeepOriginals:
    """Sentinel selection: no feasible candidate, keep the original files."""

    def __repr__(self) -> str:
        return "KeepOriginals"

    def __eq__(self, other) -> bool:
        return isinstance(other, KeepOriginals)

    def __hash__(self) -> int:
        return hash("KeepOriginals")


KEEP_ORIGINALS = KeepOriginals()


@dataclass(frozen=True)
class Baseline:
    """Original-file outcomes and metric values (identity, empty library)."""

    outcomes: Mapping[str, TestOutcome]
    tokens: int
    mdl_nats: float
    cc: int
    mi_neg: float

    def metric_value(self, metric: MetricId) -> float:
        return {
            MetricId.TOKENS: float(self.tokens),
            MetricId.MDL: self.mdl_nats,
            MetricId.CC: float(self.cc),
            MetricId.MI: self.mi_neg,
        }[metric]

    def to_dict(self) -> dict:
        return {
            "outcomes": {k: v.to_dict() for k, v in sorted(self.outcomes.items())},
            "tokens": self.tokens,
            "mdl_nats": self.mdl_nats,
            "cc": self.cc,
            "mi_neg": self.mi_neg,
        }


def _library_is_empty(library: str) -> bool:
    return not library.strip()


def score_tokens(candidate: Candidate, tokenizer: str = tokens.REF_MODEL) -> int:
    """Tokens of the library plus all rewritten sources."""
    total = tokens.count_tokens(candidate.library, tokenizer)
    for source in candidate.rewritten.values():
        total += tokens.count_tokens(source, tokenizer)
    return total


def score_mdl(candidate: Candidate, gateway: LMGateway) -> float:
    """Description length in nats: -log p(library) plus the sum over units
    of -log p(rewritten | library), each conditional scored with the library
    and a file header as prompt prefix. An empty library contributes zero
    and the units are scored unconditionally (the identity case equals the
    baseline exactly)."""
    total = 0.0
    if _library_is_empty(candidate.library):
        prefix_for = lambda unit_id: ""  # noqa: E731
    else:
        total -= gateway.score_suffix("", candidate.library).suffix_logprob
        prefix_for = lambda unit_id: candidate.library + FILE_HEADER_TEMPLATE.format(  # noqa: E731
            unit_id=unit_id
        )
    for unit_id in sorted(candidate.rewritten):
        scored = gateway.score_suffix(prefix_for(unit_id), candidate.rewritten[unit_id])
        total -= scored.suffix_logprob
    return total


def score_cc(candidate: Candidate) -> int:
    """Summed cyclomatic complexity of library and rewritten sources."""
    total = metrics.cyclomatic_complexity(candidate.library)
    for source in candidate.rewritten.values():
        total += metrics.cyclomatic_complexity(source)
    return total


def score_mi(candidate: Candidate) -> float:
    """Negated maintainability index summed over files (lower is better).

    An empty library is skipped rather than scored as a perfectly
    maintainable file, mirroring how the other metrics treat it as absent.
    """
    total = 0.0
    if not _library_is_empty(candidate.library):
        total -= metrics.maintainability_index(candidate.library)
    for source in candidate.rewritten.values():
        total -= metrics.maintainability_index(source)
    return total


def compute_metric(
    candidate: Candidate,
    metric: MetricId,
    gateway: LMGateway,
    tokenizer: str = tokens.REF_MODEL,
) -> float:
    if metric == MetricId.TOKENS:
        return float(score_tokens(candidate, tokenizer))
    if metric == MetricId.MDL:
        return score_mdl(candidate, gateway)
    if metric == MetricId.CC:
        return float(score_cc(candidate))
    return score_mi(candidate)


def passes_gate(
    baseline_outcomes: Mapping[str, TestOutcome],
    candidate_outcomes: Mapping[str, TestOutcome],
    unit_ids,
) -> bool:
    for unit_id in unit_ids:
        original = baseline_outcomes[unit_id]
        rewritten = candidate_outcomes[unit_id]
        if not original.passed <= rewritten.passed:
            return False
    return True


def gated_loss(
    candidate: Candidate,
    baseline: Baseline,
    outcomes: Mapping[str, TestOutcome],
    metric: MetricId,
    gateway: LMGateway,
    tokenizer: str = tokens.REF_MODEL,
) -> Loss:
    """Finite metric value when every unit keeps its original passes, else
    Infeasible. Unscorable candidates (context overflow, unparseable
    source) also map to Infeasible."""
    for unit_id in candidate.rewritten:
        if unit_id not in outcomes:
            raise KeyError(f"missing outcome for unit {unit_id}")
    if not passes_gate(baseline.outcomes, outcomes, candidate.rewritten.keys()):
        return Loss.infeasible("failed_tests")
    try:
        return Loss.finite(compute_metric(candidate, metric, gateway, tokenizer))
    except (ContextOverflow, ParseError):
        return Loss.infeasible("unscorable")


def build_scorecard(
    candidate: Candidate,
    baseline: Baseline,
    outcomes: Mapping[str, TestOutcome],
    metric: MetricId,
    gateway: LMGateway,
    tokenizer: str = tokens.REF_MODEL,
) -> ScoreCard:
    """All four metrics plus the gated loss under the configured metric.

    Raises ContextOverflow/ParseError when the candidate cannot be scored
    at all; callers record such samples as unscorable.
    """
    card_tokens = score_tokens(candidate, tokenizer)
    card_mdl = score_mdl(candidate, gateway)
    card_cc = score_cc(candidate)
    card_mi = score_mi(candidate)
    loss = gated_loss(candidate, baseline, outcomes, metric, gateway, tokenizer)
    return ScoreCard(
        tokens=card_tokens, mdl_nats=card_mdl, cc=card_cc, mi_neg=card_mi, loss=loss
    )


def select_best(cands: list[tuple[Candidate, Loss]]) -> Candidate | KeepOriginals:
    """Feasible argmin of the loss; ties broken by lexicographically
    smallest digest; KeepOriginals when nothing is feasible."""
    if not cands:
        raise ValueError("candidate list must be non-empty")
    best: tuple[float, str] | None = None
    winner: Candidate | None = None
    for candidate, loss in cands:
        if not loss.is_finite:
            continue
        key = (loss.value, candidate.digest)
        if best is None or key < best:
            best = key
            winner = candidate
    return winner if winner is not None else KEEP_ORIGINALS


def identity_candidate(task: Task) -> Candidate:
    """The no-op refactoring: empty library, rewritten = originals."""
    from .model import Provenance

    return Candidate.create(
        library="",
        rewritten={u.id: u.code for u in task.units},
        provenance=Provenance(
            model="identity", temperature=0.0, sample_index=0, prompt_sha256=""
        ),
    )


def baseline_metrics(
    task: Task,
    gateway: LMGateway,
    outcomes: Mapping[str, TestOutcome],
    tokenizer: str = tokens.REF_MODEL,
) -> Baseline:
    """Baseline = the identity candidate scored with an empty library."""
    ident = identity_candidate(task)
    return Baseline(
        outcomes=dict(outcomes),
        tokens=score_tokens(ident, tokenizer),
        mdl_nats=score_mdl(ident, gateway),
        cc=score_cc(ident),
        mi_neg=score_mi(ident),
    )
