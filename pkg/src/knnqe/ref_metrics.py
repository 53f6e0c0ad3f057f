"""Sentence-level reference-based metrics and external score intake.

BLEU here is the sentence-level variant: n-gram orders 1 to 4 with
add-one smoothing on every order above unigrams, brevity penalty
against the closest reference length, clipped counts taken against
the best reference per n-gram. chrF works on character n-grams of
order 1 to 6 with beta = 2 after stripping all whitespace; orders
where the hypothesis has no n-grams at all contribute an F-score of
zero rather than being dropped, so very short strings cannot reach a
perfect score. Multi-reference chrF is the maximum over references.

Scores from metrics computed elsewhere (neural ones in particular)
enter through ``ingest_external``, which attaches the polarity the
rest of the pipeline needs.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .errors import DataError, UsageError
from .interchange import ScoreFragment

BLEU_ORDER = 4
CHRF_ORDER = 6
CHRF_BETA = 2.0


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace, isolating punctuation.

    Every Unicode punctuation character becomes its own token, so
    "Hello, world!" yields [hello , world !].
    """
    tokens: list[str] = []
    word: list[str] = []

    def flush():
        if word:
            tokens.append("".join(word))
            word.clear()

    for ch in text:
        if unicodedata.category(ch).startswith("P"):
            flush()
            tokens.append(ch)
        elif ch.isspace():
            flush()
        else:
            word.append(ch.lower())
    flush()
    return tokens


def _ngram_counts(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(hypothesis: str, references: Sequence[str]) -> float:
    """Smoothed sentence BLEU over up to 4-gram precisions.

    Unigram precision stays unsmoothed: a hypothesis sharing no
    single token with any reference scores exactly 0. Higher orders
    use add-one smoothing so short sentences are not zeroed out by a
    single missing 4-gram.
    """
    hyp_tokens, ref_token_lists = _checked_tokens(hypothesis, references, tokenize)

    log_sum = 0.0
    for n in range(1, BLEU_ORDER + 1):
        hyp_counts = _ngram_counts(hyp_tokens, n)
        total = max(len(hyp_tokens) - n + 1, 0)
        clipped = 0
        for gram, cnt in hyp_counts.items():
            best = max(_ngram_counts(r, n)[gram] for r in ref_token_lists)
            clipped += min(cnt, best)
        if n == 1:
            if clipped == 0:
                return 0.0
            p = clipped / total
        else:
            p = (clipped + 1) / (total + 1)
        log_sum += math.log(p) / BLEU_ORDER

    hyp_len = len(hyp_tokens)
    ref_len = _closest_length([len(r) for r in ref_token_lists], hyp_len)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_sum)


def _closest_length(ref_lens: Sequence[int], hyp_len: int) -> int:
    """Reference length closest to the hypothesis, shorter on ties."""
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


def _chars(text: str) -> str:
    return "".join(text.split())


def sentence_chrf(hypothesis: str, references: Sequence[str]) -> float:
    """Character F-score, maximum over references."""
    hyp_chars, ref_char_lists = _checked_tokens(hypothesis, references, _chars)
    return max(_chrf_single(hyp_chars, r) for r in ref_char_lists)


def _chrf_single(hyp: str, ref: str) -> float:
    total_f = 0.0
    beta2 = CHRF_BETA * CHRF_BETA
    for n in range(1, CHRF_ORDER + 1):
        hyp_counts = _ngram_counts(hyp, n)
        ref_counts = _ngram_counts(ref, n)
        hyp_total = max(len(hyp) - n + 1, 0)
        ref_total = max(len(ref) - n + 1, 0)
        if hyp_total == 0 or ref_total == 0:
            continue  # contributes 0 to the sum, stays in the divisor
        overlap = sum(min(cnt, ref_counts[g]) for g, cnt in hyp_counts.items())
        prec = overlap / hyp_total
        rec = overlap / ref_total
        if prec + rec == 0.0:
            continue
        total_f += (1 + beta2) * prec * rec / (beta2 * prec + rec)
    return total_f / CHRF_ORDER


def _checked_tokens(hypothesis: str, references: Sequence[str], prep):
    if not references:
        raise UsageError("at least one reference is required")
    prepped = [prep(r) for r in references]
    if any(len(r) == 0 for r in prepped):
        raise DataError("empty reference string")
    hyp = prep(hypothesis)
    if len(hyp) == 0:
        raise DataError("hypothesis is empty after preprocessing")
    return hyp, prepped


# ---------------------------------------------------------------------------
# reference sets and subset scoring


@dataclass
class ReferenceSet:
    """Ordered references per segment, tagged human or synthetic."""

    refs: dict[str, list[str]] = field(default_factory=dict)
    provenance: dict[str, list[str]] = field(default_factory=dict)

    def add(self, seg_id: str, text: str, origin: str = "human") -> None:
        if origin not in ("human", "synthetic"):
            raise UsageError(f"reference origin must be human or synthetic, got {origin!r}")
        self.refs.setdefault(seg_id, []).append(text)
        self.provenance.setdefault(seg_id, []).append(origin)

    def get(self, seg_id: str) -> list[str]:
        if seg_id not in self.refs:
            raise UsageError(f"no references for segment {seg_id!r}")
        return self.refs[seg_id]


_METRIC_FUNCS = {"bleu": sentence_bleu, "chrf": sentence_chrf}


def best_reference_score(
    metric: str, hypothesis: str, references: Sequence[str], subset: Sequence[int] | None = None
) -> float:
    """Score a hypothesis against a chosen subset of its references."""
    func = _METRIC_FUNCS.get(metric)
    if func is None:
        raise UsageError(f"unknown reference metric {metric!r}; known: {sorted(_METRIC_FUNCS)}")
    if subset is not None:
        if len(subset) == 0:
            raise UsageError("reference subset must not be empty")
        picked = []
        for i in subset:
            if not 0 <= i < len(references):
                raise IndexError(f"reference index {i} out of range [0, {len(references)})")
            picked.append(references[i])
        references = picked
    return func(hypothesis, references)


# ---------------------------------------------------------------------------
# external metric intake

# Longest stems first so cometkiwi and xcomet do not fall through to
# comet. Stems are matched against lowercased names with separators
# removed.
_POLARITY_STEMS: list[tuple[str, str]] = [
    ("cometkiwi", "higher"),
    ("xcomet", "higher"),
    ("metricx", "higher"),
    ("bertscore", "higher"),
    ("bleurt", "higher"),
    ("unite", "higher"),
    ("comet", "higher"),
    ("chrf", "higher"),
    ("bleu", "higher"),
    ("ter", "lower"),
    ("tokendistance", "lower"),
    ("sentencesimilarity", "higher"),
    ("distincttokens", "lower"),
    ("matchcount", "higher"),
    ("avgprobability", "higher"),
    ("ensemble", "higher"),
]


def known_polarity(name: str) -> str | None:
    """Polarity for a recognizable metric name, else None."""
    squashed = "".join(ch for ch in name.lower() if ch.isalnum())
    for stem, polarity in _POLARITY_STEMS:
        if squashed.startswith(stem):
            return polarity
    return None


def ingest_external(
    name: str, fragment: ScoreFragment, polarity: str | None = None
) -> ScoreFragment:
    """Adopt an externally computed score table under a given name.

    The polarity must either be stated or derivable from the name;
    guessing the direction of an unknown metric would silently flip
    every downstream correlation.
    """
    if polarity is None:
        polarity = known_polarity(name)
        if polarity is None:
            raise UsageError(
                f"metric {name!r} is not recognized; pass an explicit polarity"
            )
    if polarity not in ("higher", "lower"):
        raise UsageError(f"polarity must be 'higher' or 'lower', got {polarity!r}")
    return ScoreFragment(name=name, scores=dict(fragment.scores), polarity=polarity)
