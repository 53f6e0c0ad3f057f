from __future__ import annotations

import math

import numpy as np
import pytest

import knnqe
from knnqe.datastore import from_bundle
from knnqe.errors import DataError, UsageError, ValidationError
from knnqe.qe_metrics import METRICS, QEMetricSeries, ensemble, score_corpus

from corpus import random_bundle, random_sentences


def _sent(sid, side, tokens, start, emb_row, probs=None):
    return knnqe.Sentence(
        sentence_id=sid,
        side=side,
        source_text="src",
        target_text="tgt",
        token_ids=tuple(tokens),
        vec_row_start=start,
        embedding_row=emb_row,
        token_probs=tuple(probs) if probs is not None else None,
    )


@pytest.fixture()
def hand_store():
    """Three train sentences with geometry simple enough to score by hand."""
    sentences = [
        _sent("t0", "train", (10, 11), 0, 0),
        _sent("t1", "train", (10,), 2, 1),
        _sent("t2", "train", (12,), 3, 2),
    ]
    vectors = np.array(
        [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]], dtype=np.float32
    )
    embeddings = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], dtype=np.float32)
    return from_bundle(
        knnqe.Bundle(sentences=sentences, vectors=vectors, embeddings=embeddings)
    )


@pytest.fixture()
def hand_query():
    sentences = [
        _sent("q0", "test", (10, 13), 0, 0, probs=(0.5, 0.9)),
    ]
    vectors = np.array([[0.1, 0.0], [4.9, 5.0]], dtype=np.float32)
    embeddings = np.array([[1.0, 0.0]], dtype=np.float32)
    return knnqe.Bundle(sentences=sentences, vectors=vectors, embeddings=embeddings)


class TestDescriptors:
    def test_table(self):
        assert METRICS["token_distance"].polarity == "lower"
        assert METRICS["token_distance"].default_k == 1
        assert METRICS["sentence_similarity"].polarity == "higher"
        assert METRICS["sentence_similarity"].needs_embeddings
        assert METRICS["distinct_tokens"].polarity == "lower"
        assert METRICS["distinct_tokens"].default_k == 10
        assert METRICS["match_count"].default_k == 10
        assert METRICS["avg_probability"].needs_probs


class TestHandValues:
    def test_token_distance(self, hand_store, hand_query):
        series = score_corpus(hand_store, hand_query, "token_distance")
        # both query tokens sit 0.1 from their nearest stored vector
        assert series.scores["q0"] == pytest.approx(0.1, rel=1e-6)
        assert series.polarity == "lower"
        assert series.k == 1

    def test_match_count_k1(self, hand_store, hand_query):
        series = score_corpus(hand_store, hand_query, "match_count", k=1)
        # token 10 hits token 10; token 13 lands on token 12
        assert series.scores["q0"] == pytest.approx(0.5)

    def test_distinct_tokens_k2(self, hand_store, hand_query):
        series = score_corpus(hand_store, hand_query, "distinct_tokens", k=2)
        # {10, 11} for the first token, {12, 10} for the second
        assert series.scores["q0"] == pytest.approx(2.0)

    def test_sentence_similarity(self, hand_store, hand_query):
        series = score_corpus(hand_store, hand_query, "sentence_similarity", k=1)
        # first token's neighbor sentence embeds at [1,0] (cosine 1 with the
        # query), second token's at [0,1] (cosine 0)
        assert series.scores["q0"] == pytest.approx(0.5)

    def test_avg_probability(self, hand_store, hand_query):
        series = score_corpus(hand_store, hand_query, "avg_probability")
        assert series.scores["q0"] == pytest.approx(0.7)
        assert series.k is None

    def test_token_scores_exposed(self, hand_store, hand_query):
        series = score_corpus(hand_store, hand_query, "match_count", k=1)
        assert series.token_scores["q0"] == [1.0, 0.0]


class TestSelfRetrieval:
    def test_identity_scores(self, tmp_path, rng):
        files = random_bundle(tmp_path, rng, n_sentences=8, dim=6, emb_dim=4)
        store = knnqe.build(files["bundle"], tmp_path / "s")
        bundle = files["bundle"]
        as_test = [
            _sent(s.sentence_id, "test", s.token_ids, s.vec_row_start, s.embedding_row)
            for s in bundle.sentences
        ]
        probe = knnqe.Bundle(
            sentences=as_test, vectors=bundle.vectors, embeddings=bundle.embeddings
        )
        dist = score_corpus(store, probe, "token_distance")
        match = score_corpus(store, probe, "match_count", k=1)
        sim = score_corpus(store, probe, "sentence_similarity")
        for sid in dist.scores:
            assert dist.scores[sid] == 0.0
            assert match.scores[sid] == 1.0
            assert sim.scores[sid] == 1.0


class TestScoreCorpusValidation:
    def test_unknown_metric(self, hand_store, hand_query):
        with pytest.raises(UsageError, match="unknown metric"):
            score_corpus(hand_store, hand_query, "wer")

    def test_rejects_train_side(self, hand_store, tmp_path, rng):
        files = random_bundle(tmp_path, rng, n_sentences=3, dim=2)
        with pytest.raises(ValidationError, match="side=test"):
            score_corpus(hand_store, files["bundle"], "token_distance")

    def test_empty_bundle(self, hand_store):
        empty = knnqe.Bundle(
            sentences=[], vectors=np.zeros((0, 2), dtype=np.float32), embeddings=None
        )
        with pytest.raises(DataError):
            score_corpus(hand_store, empty, "token_distance")

    def test_missing_probs(self, hand_store):
        sent = _sent("q0", "test", (10,), 0, 0)
        bundle = knnqe.Bundle(
            sentences=[sent],
            vectors=np.zeros((1, 2), dtype=np.float32),
            embeddings=np.zeros((1, 2), dtype=np.float32),
        )
        with pytest.raises(DataError, match="q0"):
            score_corpus(hand_store, bundle, "avg_probability")

    def test_similarity_requires_embeddings(self, hand_store):
        sent = _sent("q0", "test", (10,), 0, 0)
        bundle = knnqe.Bundle(
            sentences=[sent], vectors=np.zeros((1, 2), dtype=np.float32), embeddings=None
        )
        with pytest.raises(DataError, match="embedding"):
            score_corpus(hand_store, bundle, "sentence_similarity")

    def test_k_out_of_range(self, hand_store, hand_query):
        with pytest.raises(DataError):
            score_corpus(hand_store, hand_query, "token_distance", k=99)


class TestEnsemble:
    def make(self, name, polarity, scores):
        return QEMetricSeries(
            metric=name, polarity=polarity, k=None, scores=scores, token_scores=None
        )

    def test_hand_value(self):
        lower = self.make("a", "lower", {"x": 1.0, "y": 2.0, "z": 3.0})
        higher = self.make("b", "higher", {"x": 3.0, "y": 2.0, "z": 1.0})
        combined = ensemble([lower, higher])
        # both series agree after orientation; each z-scores to +/- sqrt(3/2)
        root = math.sqrt(1.5)
        assert combined.scores["x"] == pytest.approx(root, rel=1e-12)
        assert combined.scores["y"] == pytest.approx(0.0, abs=1e-12)
        assert combined.scores["z"] == pytest.approx(-root, rel=1e-12)
        assert combined.polarity == "higher"
        assert combined.metric == "ensemble"

    def test_orientation_matters(self):
        a = self.make("a", "higher", {"x": 1.0, "y": 2.0, "z": 3.0})
        b = self.make("b", "higher", {"x": 3.0, "y": 2.0, "z": 1.0})
        combined = ensemble([a, b])
        # the two series cancel
        for v in combined.scores.values():
            assert v == pytest.approx(0.0, abs=1e-12)

    def test_needs_two_series(self):
        only = self.make("a", "higher", {"x": 1.0, "y": 2.0})
        with pytest.raises(UsageError):
            ensemble([only])

    def test_rejects_constant_series(self):
        flat = self.make("a", "higher", {"x": 1.0, "y": 1.0})
        other = self.make("b", "higher", {"x": 0.0, "y": 2.0})
        with pytest.raises(DataError, match="constant"):
            ensemble([flat, other])

    def test_rejects_mismatched_segments(self):
        a = self.make("a", "higher", {"x": 1.0, "y": 2.0})
        b = self.make("b", "higher", {"x": 1.0, "q": 2.0})
        with pytest.raises(DataError, match="q"):
            ensemble([a, b])


class TestFragmentExport:
    def test_to_fragment_keys(self, hand_store, hand_query):
        series = score_corpus(hand_store, hand_query, "token_distance")
        frag = series.to_fragment(system="mt1", domain="news")
        assert frag.name == "token_distance"
        assert frag.polarity == "lower"
        assert frag.scores[("mt1", "news", "q0")] == series.scores["q0"]
