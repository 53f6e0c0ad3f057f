"""Token-level evaluation against binary OK/BAD labels.

Labels follow the usual convention: 1 marks a token judged OK,
0 marks a BAD one. Scores are oriented before use so that higher
always means better, which lets one threshold rule (below the
threshold means BAD) serve every metric.
"""

from __future__ import annotations

import math

from .errors import DataError, UsageError
from .meta_eval import pearson


def _flatten(
    token_scores: dict[str, list[float]],
    labels: dict[str, list[int]],
    polarity: str,
) -> tuple[list[float], list[int]]:
    if polarity not in ("higher", "lower"):
        raise UsageError(f"polarity must be 'higher' or 'lower', got {polarity!r}")
    if not token_scores:
        raise DataError("no token scores given")
    flat_scores: list[float] = []
    flat_labels: list[int] = []
    for seg_id in sorted(token_scores):
        if seg_id not in labels:
            raise DataError(f"segment {seg_id!r} has token scores but no labels")
        seg_scores = token_scores[seg_id]
        seg_labels = labels[seg_id]
        if len(seg_scores) != len(seg_labels):
            raise DataError(
                f"segment {seg_id!r}: {len(seg_scores)} token scores vs "
                f"{len(seg_labels)} labels"
            )
        for v in seg_labels:
            if v not in (0, 1):
                raise DataError(f"segment {seg_id!r}: labels must be 0 or 1, got {v!r}")
        sign = -1.0 if polarity == "lower" else 1.0
        flat_scores.extend(sign * float(s) for s in seg_scores)
        flat_labels.extend(int(v) for v in seg_labels)
    return flat_scores, flat_labels


def token_pearson(
    token_scores: dict[str, list[float]],
    labels: dict[str, list[int]],
    polarity: str = "higher",
) -> float:
    """Pearson correlation of oriented token scores with OK/BAD labels.

    Segments are concatenated in sorted seg_id order; every scored
    segment must have a label sequence of matching length.
    """
    scores, labs = _flatten(token_scores, labels, polarity)
    return pearson(scores, [float(v) for v in labs])


def best_f1(
    token_scores: dict[str, list[float]],
    labels: dict[str, list[int]],
    polarity: str = "higher",
    positive_class: str = "bad",
) -> tuple[float, float]:
    """Best achievable F1 over all thresholds, and the threshold.

    A token is predicted BAD when its oriented score falls below the
    threshold. Candidate thresholds are the midpoints between
    consecutive distinct scores plus open ends on both sides, which
    covers every distinct prediction the scores can induce. Ties on
    F1 resolve to the lowest threshold. Returns (threshold, f1).
    """
    if positive_class not in ("bad", "ok"):
        raise UsageError(f"positive_class must be 'bad' or 'ok', got {positive_class!r}")
    scores, labs = _flatten(token_scores, labels, polarity)
    n_bad = labs.count(0)
    n_ok = labs.count(1)
    if n_bad == 0 or n_ok == 0:
        raise DataError(
            f"both label classes are required for F1; got {n_ok} OK and {n_bad} BAD"
        )

    distinct = sorted(set(scores))
    candidates = [-math.inf]
    candidates.extend((a + b) / 2.0 for a, b in zip(distinct, distinct[1:]))
    candidates.append(math.inf)

    best_t = candidates[0]
    best = -1.0
    for t in candidates:
        tp = fp = fn = 0
        for s, lab in zip(scores, labs):
            pred_bad = s < t
            positive = pred_bad if positive_class == "bad" else not pred_bad
            actual = (lab == 0) if positive_class == "bad" else (lab == 1)
            if positive and actual:
                tp += 1
            elif positive and not actual:
                fp += 1
            elif actual:
                fn += 1
        f1 = 0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn)
        if f1 > best:
            best = f1
            best_t = t
    return best_t, best
