"""Reference-free quality scores from retrieved neighbors.

Each metric scores one generated token from the nearest stored tokens
of its decoder state, then a segment score is the plain mean over the
segment's tokens. Four neighbor metrics and one probability baseline:

* token_distance: mean L2 distance to the neighbors (lower is better),
* sentence_similarity: mean cosine between the output sentence's
  embedding and the training sentences the neighbors came from
  (higher is better),
* distinct_tokens: number of distinct token ids among the neighbors
  (lower is better),
* match_count: how many neighbors carry exactly the generated token
  id (higher is better),
* avg_probability: mean of the model's own token probabilities,
  retrieval-free, the baseline the neighbor metrics are judged
  against.

The ensemble averages z-normalized metric series after flipping the
lower-is-better ones, so every input contributes with the same
orientation and scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import fmean
from typing import Sequence

import numpy as np

from .datastore import Datastore
from .errors import DataError, UsageError, ValidationError
from .interchange import Bundle, ScoreFragment
from .retrieval import IvfIndex, NeighborSet, search_batch


@dataclass(frozen=True)
class MetricDescriptor:
    name: str
    polarity: str  # "higher" | "lower"
    default_k: int | None
    needs_embeddings: bool = False
    needs_probs: bool = False


METRICS: dict[str, MetricDescriptor] = {
    m.name: m
    for m in (
        MetricDescriptor("token_distance", "lower", 1),
        MetricDescriptor("sentence_similarity", "higher", 1, needs_embeddings=True),
        MetricDescriptor("distinct_tokens", "lower", 10),
        MetricDescriptor("match_count", "higher", 10),
        MetricDescriptor("avg_probability", "higher", None, needs_probs=True),
    )
}

ENSEMBLE_NAME = "ensemble"


@dataclass
class QEMetricSeries:
    """Per-segment scores of one metric over one test bundle."""

    metric: str
    polarity: str
    k: int | None
    scores: dict[str, float]
    token_scores: dict[str, list[float]] | None

    def to_fragment(self, system: str, domain: str) -> ScoreFragment:
        return ScoreFragment(
            name=self.metric,
            scores={(system, domain, seg): s for seg, s in self.scores.items()},
            polarity=self.polarity,
        )


# -- token-level metrics ------------------------------------------------------


def token_distance(neighbors: NeighborSet) -> float:
    """Mean distance to the retrieved neighbors."""
    return fmean(n.distance for n in neighbors.neighbors)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a64))
    nb = float(np.linalg.norm(b64))
    if na == 0.0 or nb == 0.0:
        raise DataError("zero-norm sentence embedding")
    # Bitwise-equal embeddings are exactly similarity 1.0; the general
    # formula would wobble in the last ulp.
    if np.array_equal(a, b):
        return 1.0
    return float(np.dot(a64, b64) / (na * nb))


def sentence_similarity(
    neighbors: NeighborSet, store: Datastore, query_embedding: np.ndarray
) -> float:
    """Mean cosine between the output sentence and neighbor sentences.

    Each neighbor contributes once, so training sentences retrieved
    through several neighbors count with that multiplicity.
    """
    return fmean(
        _cosine(query_embedding, store.sentence_embedding(n.sentence_idx))
        for n in neighbors.neighbors
    )


def distinct_tokens(neighbors: NeighborSet) -> float:
    """Number of distinct token ids among the neighbors."""
    return float(len({n.token_id for n in neighbors.neighbors}))


def match_count(neighbors: NeighborSet, token_id: int) -> float:
    """Number of neighbors whose token id equals the generated one."""
    return float(sum(1 for n in neighbors.neighbors if n.token_id == token_id))


def avg_probability(token_probs: Sequence[float]) -> float:
    """Mean model probability of the generated tokens."""
    if len(token_probs) == 0:
        raise DataError("cannot average an empty probability sequence")
    return fmean(token_probs)


def aggregate_segment(token_scores: Sequence[float]) -> float:
    """Segment score: the mean of its token scores."""
    if len(token_scores) == 0:
        raise DataError("cannot aggregate a segment with no token scores")
    return fmean(token_scores)


# -- corpus scoring -----------------------------------------------------------


def score_corpus(
    store: Datastore,
    bundle: Bundle,
    metric: str,
    k: int | None = None,
    *,
    mode: str = "exact",
    index: IvfIndex | None = None,
    probes: int | None = None,
) -> QEMetricSeries:
    """Score every sentence of a test bundle with one metric.

    ``k`` defaults to the metric's own neighborhood size. The bundle
    must be test-side throughout; the probability baseline requires
    token_probs on every sentence, the similarity metric requires
    sentence embeddings on both the bundle and the datastore.
    """
    desc = METRICS.get(metric)
    if desc is None:
        if metric == ENSEMBLE_NAME:
            raise UsageError("the ensemble combines existing series; use ensemble()")
        raise UsageError(f"unknown metric {metric!r}; known: {sorted(METRICS)}")

    bad_side = [s.sentence_id for s in bundle.sentences if s.side != "test"]
    if bad_side:
        raise ValidationError(
            f"scoring requires side=test for every sentence; offending ids: {bad_side[:5]}"
        )
    if not bundle.sentences:
        raise DataError("cannot score an empty bundle")

    if desc.needs_probs:
        missing = [s.sentence_id for s in bundle.sentences if s.token_probs is None]
        if missing:
            raise DataError(
                f"metric {metric!r} requires token_probs; missing for: {missing[:5]}"
            )
        token_scores = {s.sentence_id: list(s.token_probs) for s in bundle.sentences}
        scores = {sid: aggregate_segment(ts) for sid, ts in token_scores.items()}
        return QEMetricSeries(metric, desc.polarity, None, scores, token_scores)

    if desc.needs_embeddings:
        if bundle.embeddings is None:
            raise DataError(f"metric {metric!r} requires sentence embeddings in the bundle")
        if store.embeddings is None:
            raise DataError(f"metric {metric!r} requires a datastore built with embeddings")

    use_k = desc.default_k if k is None else k
    if use_k is None or use_k < 1:
        raise UsageError(f"k must be at least 1, got {use_k}")

    results = search_batch(
        store, np.asarray(bundle.vectors), use_k, mode=mode, index=index, probes=probes
    )

    token_scores = {}
    scores = {}
    for s in bundle.sentences:
        per_token = []
        for j in range(len(s.token_ids)):
            ns = results[s.vec_row_start + j]
            if desc.name == "token_distance":
                val = token_distance(ns)
            elif desc.name == "sentence_similarity":
                val = sentence_similarity(ns, store, bundle.embeddings[s.embedding_row])
            elif desc.name == "distinct_tokens":
                val = distinct_tokens(ns)
            else:
                val = match_count(ns, s.token_ids[j])
            per_token.append(val)
        token_scores[s.sentence_id] = per_token
        scores[s.sentence_id] = aggregate_segment(per_token)
    return QEMetricSeries(desc.name, desc.polarity, use_k, scores, token_scores)


def ensemble(series: Sequence[QEMetricSeries]) -> QEMetricSeries:
    """Combine metric series into one by mean of oriented z-scores.

    Series are z-normalized with the population standard deviation,
    negated when lower is better, and averaged per segment. Requires
    at least two series over the same segments, each with spread.
    """
    if len(series) < 2:
        raise UsageError(f"ensemble requires at least two series, got {len(series)}")
    seg_ids = sorted(series[0].scores)
    for s in series[1:]:
        if sorted(s.scores) != seg_ids:
            a = set(series[0].scores)
            b = set(s.scores)
            diff = sorted(a.symmetric_difference(b))
            raise DataError(
                f"series {series[0].metric!r} and {s.metric!r} cover different "
                f"segments; first differences: {diff[:5]}"
            )

    acc = np.zeros(len(seg_ids), dtype=np.float64)
    for s in series:
        vals = np.array([s.scores[sid] for sid in seg_ids], dtype=np.float64)
        std = float(vals.std())
        if std == 0.0:
            raise DataError(f"series {s.metric!r} is constant and cannot be z-normalized")
        z = (vals - vals.mean()) / std
        acc += -z if s.polarity == "lower" else z
    acc /= len(series)
    return QEMetricSeries(
        metric=ENSEMBLE_NAME,
        polarity="higher",
        k=None,
        scores={sid: float(v) for sid, v in zip(seg_ids, acc)},
        token_scores=None,
    )
