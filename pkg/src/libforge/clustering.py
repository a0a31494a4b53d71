"""Group source units into fixed-size clusters and measure tag coherence.

Units are summarized (via the gateway), summaries embedded, and a Ward
dendrogram built on Euclidean distances over the unit-norm vectors. The
dendrogram is cut into ceil(N/S) groups which are then rebalanced into
fixed-size clusters: oversized groups shed their worst-fitting point (by
silhouette) to the nearest undersized group, and undersized groups are
consolidated until at most one remainder cluster is smaller than S. The
whole procedure is deterministic given unit ids and vectors; input map
iteration order never matters because units are sorted by id up front.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, leaves_list, linkage

from .errors import DimensionMismatch
from .gateway import LMGateway
from .model import SourceUnit, Task

DEFAULT_MIN_SLOC = 10

SUMMARY_PROMPT_TEMPLATE = (
    "Summarize the following program in two or three sentences. Emphasize the "
    "reusable components it contains: general-purpose routines, data "
    "structures, and algorithmic building blocks that other programs could "
    "share.\n\n{code}\n"
)


@dataclass(frozen=True)
class ClusterPlan:
    """Ordered fixed-size clusters of unit ids plus the merge trace."""

    clusters: tuple[tuple[str, ...], ...]
    target_size: int
    linkage_trace: tuple[tuple[int, int, float, int], ...]

    def to_dict(self) -> dict:
        return {
            "clusters": [list(c) for c in self.clusters],
            "target_size": self.target_size,
            "linkage_trace": [list(row) for row in self.linkage_trace],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterPlan":
        return cls(
            clusters=tuple(tuple(c) for c in d["clusters"]),
            target_size=d["target_size"],
            linkage_trace=tuple(tuple(row) for row in d["linkage_trace"]),
        )


@dataclass(frozen=True)
class TagProfile:
    """Per-cluster tag-instance counts and per-problem tag presence sets."""

    instance_counts: tuple[Mapping[str, int], ...]
    presence_sets: tuple[tuple[frozenset[str], ...], ...]

    @classmethod
    def from_task(cls, task: Task, plan: ClusterPlan) -> "TagProfile":
        return cls.from_tags(task.tags or {}, plan)

    @classmethod
    def from_tags(
        cls, tags: Mapping[str, frozenset[str]], plan: ClusterPlan
    ) -> "TagProfile":
        counts = []
        presence = []
        for cluster in plan.clusters:
            c_counts: dict[str, int] = {}
            c_presence = []
            for unit_id in cluster:
                unit_tags = frozenset(tags.get(unit_id, frozenset()))
                c_presence.append(unit_tags)
                for tag in unit_tags:
                    c_counts[tag] = c_counts.get(tag, 0) + 1
            counts.append(c_counts)
            presence.append(tuple(c_presence))
        return cls(instance_counts=tuple(counts), presence_sets=tuple(presence))


def summarize(unit: SourceUnit, gateway: LMGateway) -> str:
    """Natural-language summary of a unit; pre-supplied descriptions pass
    through without a gateway call."""
    if unit.description:
        return unit.description
    prompt = SUMMARY_PROMPT_TEMPLATE.format(code=unit.code)
    return gateway.sample(prompt, 1)[0].text.strip()


def filter_refactorable(
    units: Sequence[SourceUnit], min_sloc: int = DEFAULT_MIN_SLOC
) -> tuple[list[SourceUnit], list[SourceUnit]]:
    """Split units into (eligible, passthrough) by the minimum-SLOC gate."""
    from .metrics import parse

    eligible, passthrough = [], []
    for unit in units:
        if parse(unit.code).sloc >= min_sloc:
            eligible.append(unit)
        else:
            passthrough.append(unit)
    return eligible, passthrough


def _silhouettes(X: np.ndarray, groups: list[list[int]], gi: int) -> list[float]:
    """Silhouette coefficient for each member of groups[gi]; 0 when all
    distances vanish."""
    scores = []
    for idx in groups[gi]:
        own = [j for j in groups[gi] if j != idx]
        a = float(np.mean(np.linalg.norm(X[own] - X[idx], axis=1))) if own else 0.0
        b = math.inf
        for gj, other in enumerate(groups):
            if gj == gi or not other:
                continue
            b = min(b, float(np.mean(np.linalg.norm(X[other] - X[idx], axis=1))))
        if not math.isfinite(b):
            b = 0.0
        denom = max(a, b)
        scores.append((b - a) / denom if denom > 0 else 0.0)
    return scores


def _nearest_group(X: np.ndarray, idx: int, groups: list[list[int]], allowed: list[int]) -> int:
    best_key = None
    best = allowed[0]
    for gj in allowed:
        members = groups[gj]
        if members:
            d = float(np.mean(np.linalg.norm(X[members] - X[idx], axis=1)))
        else:
            d = math.inf  # empty groups are last resort
        key = (d, gj)
        if best_key is None or key < best_key:
            best_key = key
            best = gj
    return best


def _shed_point(X: np.ndarray, ids: list[str], groups: list[list[int]], src: int, dests: list[int]):
    scores = _silhouettes(X, groups, src)
    # worst fit leaves first; ties resolved by unit id so reruns agree
    order = sorted(range(len(groups[src])), key=lambda i: (scores[i], ids[groups[src][i]]))
    point = groups[src][order[0]]
    dest = _nearest_group(X, point, groups, dests)
    groups[src].remove(point)
    groups[dest].append(point)


def cluster_fixed_size(vectors: Mapping[str, np.ndarray], S: int) -> ClusterPlan:
    """Ward dendrogram cut and rebalanced into size-S clusters (one
    remainder cluster allowed)."""
    if S < 1:
        raise ValueError("S must be >= 1")
    ids = sorted(vectors)
    if len(ids) < S:
        raise ValueError(f"need at least S={S} units, got {len(ids)}")
    dims = {np.asarray(vectors[i]).shape for i in ids}
    if len(dims) != 1:
        raise DimensionMismatch(f"mixed embedding shapes: {sorted(map(str, dims))}")
    X = np.stack([np.asarray(vectors[i], dtype=float) for i in ids])
    n = len(ids)
    k = math.ceil(n / S)

    if n == 1:
        return ClusterPlan(clusters=((ids[0],),), target_size=S, linkage_trace=())

    Z = linkage(X, method="ward")
    trace = tuple((int(a), int(b), float(h), int(c)) for a, b, h, c in Z)
    leaf_pos = {int(leaf): pos for pos, leaf in enumerate(leaves_list(Z))}

    labels = fcluster(Z, t=k, criterion="maxclust")
    by_label: dict[int, list[int]] = {}
    for idx, lab in enumerate(labels):
        by_label.setdefault(int(lab), []).append(idx)
    # deterministic group order: by first appearance in dendrogram leaf order
    groups = sorted(by_label.values(), key=lambda g: min(leaf_pos[i] for i in g))

    # Phase A: oversized groups shed points into undersized ones
    while True:
        oversized = [gi for gi, g in enumerate(groups) if len(g) > S]
        if not oversized:
            break
        undersized = [gi for gi, g in enumerate(groups) if len(g) < S and gi != oversized[0]]
        if not undersized:
            groups.append([])
            undersized = [len(groups) - 1]
        _shed_point(X, ids, groups, oversized[0], undersized)

    # Phase B: consolidate so at most one cluster is smaller than S
    while True:
        undersized = [gi for gi, g in enumerate(groups) if 0 < len(g) < S]
        if len(undersized) <= 1:
            break
        donor = undersized[-1]
        dests = [gi for gi in undersized if gi != donor]
        _shed_point(X, ids, groups, donor, dests)

    groups = [g for g in groups if g]
    groups.sort(key=lambda g: min(leaf_pos[i] for i in g))
    clusters = tuple(tuple(sorted(ids[i] for i in g)) for g in groups)
    return ClusterPlan(clusters=clusters, target_size=S, linkage_trace=trace)


def tag_entropy(profile: TagProfile, cluster: int) -> float:
    """Normalized tag-instance entropy in [0, 1]; 0 when at most one
    distinct tag type occurs."""
    counts = profile.instance_counts[cluster]
    distinct = len(counts)
    if distinct <= 1:
        return 0.0
    total = sum(counts.values())
    h = -sum((c / total) * math.log2(c / total) for c in counts.values())
    return h / math.log2(distinct)


def hhi(profile: TagProfile, cluster: int) -> float:
    """Herfindahl-Hirschman index of per-problem tag presence: the sum over
    tags of the squared fraction of problems carrying that tag. Exceeds 1
    when problems carry several tags each."""
    presence = profile.presence_sets[cluster]
    if not presence:
        raise ValueError("cluster has no problems")
    n = len(presence)
    tags = set().union(*presence) if presence else set()
    return sum((sum(1 for p in presence if t in p) / n) ** 2 for t in tags)
