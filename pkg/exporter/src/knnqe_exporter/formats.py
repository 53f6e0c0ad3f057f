"""Writers for the toolkit's interchange formats.

The quality-estimation toolkit consumes two file kinds: packed float32
tensor files (19 byte header, little-endian, row-major) and JSONL
sentence manifests whose row spans tile the tensor exactly. This module
produces both, byte-for-byte deterministic, so the exporter needs no
code from the toolkit itself; the files are the contract.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ExportError, UsageError

TENSOR_MAGIC = b"KQE1"
TENSOR_VERSION = 1
TENSOR_DTYPE_F32 = 1

_HEADER = struct.Struct("<4sHBIQ")


def write_tensor(path, array: np.ndarray) -> None:
    """Write a 2-D float array as a tensor file.

    NaN and infinity are refused here, before anything touches disk,
    because the reading side refuses them too and a half-written
    export helps nobody.
    """
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 2:
        raise UsageError(f"tensor payload must be 2-D, got shape {arr.shape}")
    count, dim = arr.shape
    if dim <= 0:
        raise ExportError(f"tensor dim must be positive, got {dim}")
    if not np.isfinite(arr).all():
        raise ExportError("tensor payload contains NaN or infinite values")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, TENSOR_DTYPE_F32, dim, count))
        fh.write(arr.tobytes())


@dataclass(frozen=True)
class SentenceRecord:
    """One manifest line tying a sentence to its span of tensor rows."""

    sentence_id: str
    side: str
    source_text: str
    target_text: str
    token_ids: tuple[int, ...]
    vec_row_start: int
    embedding_row: int
    token_probs: tuple[float, ...] | None = None

    def check(self) -> None:
        if self.side not in ("train", "test"):
            raise ExportError(f"side must be train or test, got {self.side!r}")
        if not self.token_ids:
            raise ExportError(f"sentence {self.sentence_id!r} has no tokens")
        if any(t < 0 or t >= 2**32 for t in self.token_ids):
            raise ExportError(f"sentence {self.sentence_id!r} has out-of-range token ids")
        if self.token_probs is not None:
            if self.side == "train":
                raise ExportError("token probabilities belong to the test side only")
            if len(self.token_probs) != len(self.token_ids):
                raise ExportError(
                    f"sentence {self.sentence_id!r}: {len(self.token_probs)} probabilities "
                    f"for {len(self.token_ids)} tokens"
                )
            if any(not math.isfinite(p) or not 0.0 <= p <= 1.0 for p in self.token_probs):
                raise ExportError(f"sentence {self.sentence_id!r} has probabilities outside [0, 1]")


def write_manifest(path, records: Iterable[SentenceRecord]) -> None:
    """Write sentence records as JSONL, checking the span tiling.

    The toolkit validates that consecutive row spans tile the vector
    file with no gaps; emitting a manifest that fails that check would
    be an exporter bug, so it is asserted here at write time.
    """
    cursor = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            rec.check()
            if rec.vec_row_start != cursor:
                raise ExportError(
                    f"sentence {rec.sentence_id!r}: row span starts at {rec.vec_row_start}, "
                    f"expected {cursor}"
                )
            cursor += len(rec.token_ids)
            obj = {
                "sentence_id": rec.sentence_id,
                "side": rec.side,
                "source_text": rec.source_text,
                "target_text": rec.target_text,
                "token_ids": list(rec.token_ids),
                "vec_row_start": rec.vec_row_start,
                "embedding_row": rec.embedding_row,
            }
            if rec.token_probs is not None:
                obj["token_probs"] = list(rec.token_probs)
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
