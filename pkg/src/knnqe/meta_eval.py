"""Judging QE metrics without human judgments.

The question answered here: if reference-based metric scores stand in
for human quality judgments, do they rank a set of QE metrics the
same way the human judgments would? Concretely, for QE metrics
indexed by i and a stand-in metric j:

* gold ranking:   MG_i = spearman(QE_i, human scores)
* auto ranking:   MR_ij = spearman(QE_i, RB_j)
* ranking performance of j = spearman over i of (MR_ij, MG_i)
* segment performance of j = spearman(RB_j, human scores)

Every column is oriented before correlating (lower-is-better series
are negated), so a metric's polarity convention cannot masquerade as
disagreement. Constant inputs are an error: a correlation against a
constant is undefined and returning NaN would poison downstream
rank comparisons silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, UsageError
from .interchange import ScoreFragment, ScoreMatrix, align_tables
from .ref_metrics import ReferenceSet, best_reference_score, known_polarity


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(values, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    sx = x[order]
    i = 0
    while i < len(sx):
        j = i
        while j + 1 < len(sx) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation with strict input checking."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise UsageError(f"correlation inputs must be equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise DataError(f"correlation requires at least 2 paired values, got {len(x)}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise DataError("correlation input is constant")
    # Identical (or exactly opposite) series must come out as exactly
    # +/-1.0; the general formula can miss by an ulp through the sqrt.
    if np.array_equal(dx, dy):
        return 1.0
    if np.array_equal(dx, -dy):
        return -1.0
    return float(np.dot(dx, dy) / np.sqrt(sxx * syy))


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman correlation: Pearson over average ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise UsageError(f"correlation inputs must be equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise DataError(f"correlation requires at least 2 paired values, got {len(x)}")
    return pearson(average_ranks(x), average_ranks(y))


def oriented_column(matrix: ScoreMatrix, name: str) -> np.ndarray:
    """A column with lower-is-better series negated."""
    col = matrix.column(name)
    return -col if matrix.polarities.get(name) == "lower" else col


# ---------------------------------------------------------------------------
# reports


@dataclass
class RbReport:
    """How one stand-in metric performs against the gold ranking."""

    name: str
    segment_corr: float
    ranking_corr: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "segment_corr": self.segment_corr,
            "ranking_corr": self.ranking_corr,
        }


@dataclass
class MetaEvalReport:
    group_dimension: str | None
    group_value: str | None
    n_segments: int
    gold: dict[str, float]
    auto: dict[str, dict[str, float]]
    rb_reports: list[RbReport]

    def to_dict(self) -> dict:
        return {
            "group_dimension": self.group_dimension,
            "group_value": self.group_value,
            "n_segments": self.n_segments,
            "gold": self.gold,
            "auto": self.auto,
            "rb_reports": [r.to_dict() for r in self.rb_reports],
        }


@dataclass
class GroupedReports:
    overall: MetaEvalReport
    groups: list[MetaEvalReport] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.to_dict(),
            "groups": [g.to_dict() for g in self.groups],
            "skipped": self.skipped,
        }


def gold_ranking(matrix: ScoreMatrix, qe_names: Sequence[str], h_name: str) -> dict[str, float]:
    """Gold correlation of every QE metric against human scores."""
    h = oriented_column(matrix, h_name)
    return {q: spearman(oriented_column(matrix, q), h) for q in qe_names}


def auto_ranking(matrix: ScoreMatrix, qe_names: Sequence[str], rb_name: str) -> dict[str, float]:
    """Stand-in correlation of every QE metric against one RB metric."""
    rb = oriented_column(matrix, rb_name)
    return {q: spearman(oriented_column(matrix, q), rb) for q in qe_names}


def evaluate(
    matrix: ScoreMatrix,
    qe_names: Sequence[str],
    rb_names: Sequence[str],
    h_name: str,
) -> MetaEvalReport:
    """Full meta-evaluation over one aligned score matrix."""
    if len(qe_names) < 2:
        raise UsageError(
            f"ranking performance needs at least 2 QE metrics, got {len(qe_names)}"
        )
    if not rb_names:
        raise UsageError("at least one reference-based metric is required")
    for name in (*qe_names, *rb_names, h_name):
        matrix.column(name)  # raises on unknown names

    gold = gold_ranking(matrix, qe_names, h_name)
    mg = np.array([gold[q] for q in qe_names])
    auto: dict[str, dict[str, float]] = {}
    reports = []
    h = oriented_column(matrix, h_name)
    for rb in rb_names:
        auto[rb] = auto_ranking(matrix, qe_names, rb)
        mr = np.array([auto[rb][q] for q in qe_names])
        reports.append(
            RbReport(
                name=rb,
                segment_corr=spearman(oriented_column(matrix, rb), h),
                ranking_corr=spearman(mr, mg),
            )
        )
    return MetaEvalReport(
        group_dimension=None,
        group_value=None,
        n_segments=len(matrix.keys),
        gold=gold,
        auto=auto,
        rb_reports=reports,
    )


def grouped_evaluate(
    matrix: ScoreMatrix,
    qe_names: Sequence[str],
    rb_names: Sequence[str],
    h_name: str,
    group_by: str | None = None,
) -> GroupedReports:
    """Meta-evaluation overall and, optionally, per system or domain.

    Groups too small or degenerate to correlate are recorded as
    skipped with the reason instead of failing the whole run; the
    overall report still covers every segment.
    """
    overall = evaluate(matrix, qe_names, rb_names, h_name)
    grouped = GroupedReports(overall=overall)
    if group_by is None:
        return grouped
    for value in matrix.group_values(group_by):
        sub = matrix.restrict(group_by, value)
        try:
            rep = evaluate(sub, qe_names, rb_names, h_name)
        except DataError as exc:
            grouped.skipped.append(
                {"dimension": group_by, "value": value, "reason": str(exc)}
            )
            continue
        rep.group_dimension = group_by
        rep.group_value = value
        grouped.groups.append(rep)
    return grouped


# ---------------------------------------------------------------------------
# reference ablation


@dataclass
class AblationPoint:
    subset: list[int]
    n_refs: int
    segment_corr: float
    ranking_corr: float

    def to_dict(self) -> dict:
        return {
            "subset": self.subset,
            "n_refs": self.n_refs,
            "segment_corr": self.segment_corr,
            "ranking_corr": self.ranking_corr,
        }


def reference_ablation(
    matrix: ScoreMatrix,
    qe_names: Sequence[str],
    h_name: str,
    hypotheses: dict[tuple[str, str, str], str],
    references: ReferenceSet,
    metric: str,
    subsets: Sequence[Sequence[int]],
) -> list[AblationPoint]:
    """Re-run the meta-evaluation with shrinking reference pools.

    For each subset of reference indices, the stand-in metric is
    recomputed from those references alone and measured against the
    gold ranking. This shows how many references (human or synthetic)
    the stand-in actually needs.
    """
    if not subsets:
        raise UsageError("at least one reference subset is required")
    missing = [k for k in matrix.keys if k not in hypotheses]
    if missing:
        raise DataError(f"missing hypotheses for keys: {missing[:5]}")
    polarity = known_polarity(metric) or "higher"

    gold = gold_ranking(matrix, qe_names, h_name)
    mg = np.array([gold[q] for q in qe_names])
    h = oriented_column(matrix, h_name)

    points = []
    for subset in subsets:
        scores = {
            key: best_reference_score(
                metric, hypotheses[key], references.get(key[2]), list(subset)
            )
            for key in matrix.keys
        }
        col = np.array([scores[k] for k in matrix.keys], dtype=np.float64)
        if polarity == "lower":
            col = -col
        mr = np.array(
            [spearman(oriented_column(matrix, q), col) for q in qe_names]
        )
        points.append(
            AblationPoint(
                subset=list(subset),
                n_refs=len(subset),
                segment_corr=spearman(col, h),
                ranking_corr=spearman(mr, mg),
            )
        )
    return points


def fragments_to_matrix(fragments: Sequence[ScoreFragment]) -> ScoreMatrix:
    """Convenience wrapper so callers need only one import."""
    return align_tables(fragments)
