"""Sentence embeddings from hashed character n-grams.

The similarity metric downstream only needs embeddings that are
deterministic, nonzero, and identical for identical sentences. Hashing
character n-grams into a fixed-width signed bag gives all three with no
model weights at all: each n-gram flips one coordinate up or down, the
result is L2-normalized. Orders 1 through 5 are used so even one-word
sentences land on several coordinates.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ExportError, UsageError

NGRAM_ORDERS = range(1, 6)


class HashEmbedder:
    def __init__(self, dim: int):
        if dim <= 0:
            raise UsageError(f"embedding dim must be positive, got {dim}")
        self.dim = int(dim)

    def embed(self, text: str) -> np.ndarray:
        """Embed one sentence as a unit-norm float32 vector."""
        stripped = " ".join(text.split())
        if not stripped:
            raise ExportError("cannot embed an empty sentence")
        acc = np.zeros(self.dim, dtype=np.float64)
        for n in NGRAM_ORDERS:
            for i in range(len(stripped) - n + 1):
                digest = hashlib.blake2b(
                    stripped[i : i + n].encode("utf-8"), digest_size=8
                ).digest()
                idx = int.from_bytes(digest[:4], "little") % self.dim
                acc[idx] += 1.0 if digest[4] & 1 else -1.0
        norm = float(np.linalg.norm(acc))
        if norm == 0.0:
            raise ExportError(f"embedding collapsed to zero for {text!r}")
        return (acc / norm).astype(np.float32)

    def embed_all(self, texts: list[str]) -> np.ndarray:
        return np.stack([self.embed(t) for t in texts])


def parse_embedder(spec: str) -> HashEmbedder:
    """Parse an embedding model reference such as ``hash:64``."""
    scheme, _, arg = spec.partition(":")
    if scheme != "hash" or not arg:
        raise UsageError(f"unknown embedding model {spec!r}; expected hash:<dim>")
    try:
        dim = int(arg)
    except ValueError:
        raise UsageError(f"embedding dim {arg!r} is not an integer")
    return HashEmbedder(dim)
