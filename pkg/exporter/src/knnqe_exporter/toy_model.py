"""A miniature sequence-to-sequence model for exercising the export path.

This is not a translation model worth the name: one tanh layer encodes
the source as a bag of embeddings, one recurrent tanh layer decodes,
and the output projection is the tied embedding matrix. What it shares
with a real system is everything the exporter cares about: a subword
vocabulary with <bos>/<eos>/<unk>, a decoder whose hidden state at step
t is the representation used to predict token t, forced decoding over a
reference, greedy decoding with per-token softmax probabilities, and
full determinism for a fixed seed.

Training is a non-goal; the weights are random. The export contract is
about shapes, alignment, and bookkeeping, none of which depend on the
model being any good.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ExportError, UsageError

BOS, EOS, UNK = 0, 1, 2
SPECIALS = ("<bos>", "<eos>", "<unk>")

_PARAM_NAMES = ("emb", "w_enc", "b_enc", "w_h", "w_y", "w_c", "b_h", "b_out")


@dataclass
class ToyModel:
    vocab: list[str]
    emb: np.ndarray
    w_enc: np.ndarray
    b_enc: np.ndarray
    w_h: np.ndarray
    w_y: np.ndarray
    w_c: np.ndarray
    b_h: np.ndarray
    b_out: np.ndarray
    max_len: int

    def __post_init__(self):
        self._index = {w: i for i, w in enumerate(self.vocab)}

    @property
    def dim(self) -> int:
        return int(self.emb.shape[1])

    def token_id(self, word: str, strict: bool) -> int:
        """Map a word to its id; OOV is <unk> unless strict.

        Forced decoding needs an exact id for every reference token,
        so the train side asks for strict lookup and fails loudly on a
        vocabulary mismatch instead of silently decoding garbage.
        """
        idx = self._index.get(word)
        if idx is None:
            if strict:
                raise ExportError(
                    f"tokenization mismatch: word {word!r} is not in the model vocabulary"
                )
            return UNK
        return idx

    def tokenize(self, text: str, strict: bool = False) -> list[int]:
        words = text.split()
        return [self.token_id(w, strict) for w in words]

    def encode(self, source_ids: list[int]) -> np.ndarray:
        if not source_ids:
            raise ExportError("cannot encode an empty source sentence")
        pooled = self.emb[np.asarray(source_ids)].mean(axis=0)
        return np.tanh(pooled @ self.w_enc + self.b_enc)

    def step(self, h: np.ndarray, prev_id: int, context: np.ndarray) -> np.ndarray:
        """One decoder step: the state that predicts the next token."""
        return np.tanh(self.emb[prev_id] @ self.w_y + h @ self.w_h + context @ self.w_c + self.b_h)

    def token_probs(self, h: np.ndarray) -> np.ndarray:
        logits = (self.emb @ h + self.b_out).astype(np.float64)
        logits -= logits.max()
        e = np.exp(logits)
        return e / e.sum()

    def forced_states(self, reference_ids: list[int], context: np.ndarray) -> np.ndarray:
        """Hidden states under forced decoding of a reference.

        Row t is the state used to predict token t of the sequence
        reference + <eos>, with the true previous token fed back at
        every step. The returned matrix therefore has one row per
        reference token plus a final row for the end-of-sentence
        prediction.
        """
        seq_in = [BOS] + list(reference_ids)
        states = np.empty((len(seq_in), self.dim), dtype=np.float32)
        h = np.zeros(self.dim, dtype=np.float32)
        for t, prev in enumerate(seq_in):
            h = self.step(h, prev, context)
            states[t] = h
        return states

    def greedy(self, context: np.ndarray) -> tuple[np.ndarray, list[int], list[float]]:
        """Greedy decoding: states, emitted ids, and their probabilities.

        Decoding stops after emitting <eos> or after max_len tokens.
        The <eos> entry itself is kept; its state and probability are
        as much model output as any word's.
        """
        states: list[np.ndarray] = []
        ids: list[int] = []
        probs: list[float] = []
        h = np.zeros(self.dim, dtype=np.float32)
        prev = BOS
        for _ in range(self.max_len):
            h = self.step(h, prev, context)
            p = self.token_probs(h)
            emitted = int(np.argmax(p))
            states.append(h)
            ids.append(emitted)
            probs.append(float(p[emitted]))
            if emitted == EOS:
                break
            prev = emitted
        return np.stack(states), ids, probs

    def words(self, ids: list[int]) -> list[str]:
        return [self.vocab[i] for i in ids]

    def save(self, path) -> None:
        arrays = {name: getattr(self, name) for name in _PARAM_NAMES}
        np.savez(
            path,
            vocab=np.frombuffer(json.dumps(self.vocab).encode("utf-8"), dtype=np.uint8),
            max_len=np.int64(self.max_len),
            **arrays,
        )

    @classmethod
    def load(cls, path) -> "ToyModel":
        with np.load(path) as data:
            vocab = json.loads(bytes(data["vocab"]).decode("utf-8"))
            params = {name: np.ascontiguousarray(data[name]) for name in _PARAM_NAMES}
            max_len = int(data["max_len"])
        return cls(vocab=vocab, max_len=max_len, **params)


def new_toy_model(words: list[str], dim: int = 32, seed: int = 0, max_len: int = 32) -> ToyModel:
    """Build a randomly initialized model over the given vocabulary."""
    if dim <= 0:
        raise UsageError(f"model dim must be positive, got {dim}")
    if max_len <= 0:
        raise UsageError(f"max_len must be positive, got {max_len}")
    vocab = list(SPECIALS) + sorted(set(words) - set(SPECIALS))
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim)

    def mat(rows, cols):
        return (rng.standard_normal((rows, cols)) * scale).astype(np.float32)

    return ToyModel(
        vocab=vocab,
        emb=mat(len(vocab), dim),
        w_enc=mat(dim, dim),
        b_enc=np.zeros(dim, dtype=np.float32),
        w_h=mat(dim, dim),
        w_y=mat(dim, dim),
        w_c=mat(dim, dim),
        b_h=np.zeros(dim, dtype=np.float32),
        b_out=np.zeros(len(vocab), dtype=np.float32),
        max_len=max_len,
    )
