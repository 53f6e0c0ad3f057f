"""Token-level datastore built from forced-decoding output.

A datastore maps every target token of a training-side bundle to the
decoder hidden state that produced it. On disk it is a directory:

* ``vectors.kqe``: tensor file of hidden states, one row per token,
* ``entries.kqe``: packed records aligning rows to tokens,
* ``sentences.jsonl``: sentence ids, target texts, embedding rows,
* ``embeddings.kqe``: optional tensor file of sentence embeddings,
* ``meta.json``: dimensions, counts, sampling provenance.

Builds are deterministic: the same bundle produces byte-identical
directories, so meta.json carries no timestamps.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DataError, UsageError, ValidationError
from .interchange import (
    Bundle,
    read_tensor,
    resolve_path,
    write_tensor,
)

FORMAT_VERSION = 1

# Packed little-endian entry record, 24 bytes each.
ENTRY_DTYPE = np.dtype(
    [
        ("vec_row", "<u8"),
        ("token_id", "<u4"),
        ("sentence_idx", "<u8"),
        ("position", "<u4"),
    ]
)

VECTORS_FILE = "vectors.kqe"
ENTRIES_FILE = "entries.kqe"
SENTENCES_FILE = "sentences.jsonl"
EMBEDDINGS_FILE = "embeddings.kqe"
META_FILE = "meta.json"


@dataclass(frozen=True)
class StoredSentence:
    sentence_id: str
    target_text: str
    embedding_row: int


class TokenEntry(NamedTuple):
    vector: np.ndarray
    token_id: int
    sentence_idx: int
    position: int


class Datastore:
    """An immutable collection of (hidden state, token) records.

    ``vectors`` holds the hidden states of the root store; ``entries``
    reference rows of it through their ``vec_row`` field. A sampled
    store shares the root's vector storage and only narrows the entry
    and sentence lists, which keeps sampling cheap. ``save`` compacts.
    """

    def __init__(
        self,
        vectors: np.ndarray,
        entries: np.ndarray,
        sentences: list[StoredSentence],
        embeddings: np.ndarray | None,
        meta: dict,
    ):
        self._vectors = vectors
        self.entries = entries
        self.sentences = sentences
        self.embeddings = embeddings
        self.meta = meta
        self._entry_vectors: np.ndarray | None = None

    # -- basic accessors ----------------------------------------------------

    @property
    def dim(self) -> int:
        return int(self._vectors.shape[1])

    @property
    def token_count(self) -> int:
        return int(len(self.entries))

    @property
    def sentence_count(self) -> int:
        return len(self.sentences)

    def get_token(self, entry_idx: int) -> TokenEntry:
        if not 0 <= entry_idx < len(self.entries):
            raise IndexError(f"entry index {entry_idx} out of range [0, {len(self.entries)})")
        rec = self.entries[entry_idx]
        return TokenEntry(
            vector=self._vectors[int(rec["vec_row"])],
            token_id=int(rec["token_id"]),
            sentence_idx=int(rec["sentence_idx"]),
            position=int(rec["position"]),
        )

    def get_sentence(self, sentence_idx: int) -> StoredSentence:
        if not 0 <= sentence_idx < len(self.sentences):
            raise IndexError(
                f"sentence index {sentence_idx} out of range [0, {len(self.sentences)})"
            )
        return self.sentences[sentence_idx]

    def sentence_embedding(self, sentence_idx: int) -> np.ndarray:
        if self.embeddings is None:
            raise DataError("datastore was built without sentence embeddings")
        return self.embeddings[self.sentences[sentence_idx].embedding_row]

    def entry_vectors(self) -> np.ndarray:
        """Hidden states aligned to entry order, as one (N, dim) array.

        For a freshly built store this is the vector file itself; for
        a sampled store the referenced rows are gathered once and
        cached.
        """
        if self._entry_vectors is None:
            rows = self.entries["vec_row"]
            if len(rows) == self._vectors.shape[0] and np.array_equal(
                rows, np.arange(len(rows), dtype=np.uint64)
            ):
                self._entry_vectors = self._vectors
            else:
                self._entry_vectors = np.ascontiguousarray(self._vectors[rows.astype(np.int64)])
        return self._entry_vectors

    # -- sampling -----------------------------------------------------------

    def sample(self, fraction: float, seed: int) -> "Datastore":
        """Take a deterministic sentence-level subsample.

        The sampling unit is the sentence: all tokens of a selected
        sentence stay together. Selection draws the first
        ``round(fraction * sentence_count)`` (at least one) positions
        of a seeded permutation, so smaller fractions at the same seed
        are strict subsets of larger ones.
        """
        if not 0.0 < fraction <= 1.0:
            raise UsageError(f"sample fraction must be in (0, 1], got {fraction}")
        n = self.sentence_count
        if n == 0:
            raise DataError("cannot sample an empty datastore")
        size = max(1, int(np.floor(n * fraction + 0.5)))
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.permutation(n)[:size])

        keep = np.zeros(n, dtype=bool)
        keep[chosen] = True
        remap = np.full(n, -1, dtype=np.int64)
        remap[chosen] = np.arange(size)

        sel = keep[self.entries["sentence_idx"].astype(np.int64)]
        entries = self.entries[sel].copy()
        entries["sentence_idx"] = remap[entries["sentence_idx"].astype(np.int64)].astype(np.uint64)

        meta = dict(self.meta)
        chain = list(meta.get("sampling_chain", []))
        chain.append({"fraction": fraction, "seed": seed, "parent_sentences": n})
        meta["sampling_chain"] = chain
        meta["sentence_count"] = size
        meta["token_count"] = int(len(entries))

        return Datastore(
            vectors=self._vectors,
            entries=entries,
            sentences=[self.sentences[i] for i in chosen.tolist()],
            embeddings=self.embeddings,
            meta=meta,
        )

    # -- persistence ----------------------------------------------------------

    def save(self, out_dir: str | os.PathLike) -> None:
        """Write the store to a directory, compacting shared storage."""
        vectors = self.entry_vectors()
        entries = self.entries.copy()
        entries["vec_row"] = np.arange(len(entries), dtype=np.uint64)

        embeddings = None
        sentences = self.sentences
        if self.embeddings is not None:
            emb_rows = np.array([s.embedding_row for s in self.sentences], dtype=np.int64)
            embeddings = np.ascontiguousarray(self.embeddings[emb_rows])
            sentences = [
                StoredSentence(s.sentence_id, s.target_text, i)
                for i, s in enumerate(self.sentences)
            ]

        meta = dict(self.meta)
        meta["dim"] = self.dim
        meta["token_count"] = int(len(entries))
        meta["sentence_count"] = len(sentences)
        meta["has_embeddings"] = embeddings is not None
        meta["embedding_dim"] = int(embeddings.shape[1]) if embeddings is not None else None
        _write_store_dir(resolve_path(out_dir), vectors, entries, sentences, embeddings, meta)


def _write_store_dir(
    out: Path,
    vectors: np.ndarray,
    entries: np.ndarray,
    sentences: list[StoredSentence],
    embeddings: np.ndarray | None,
    meta: dict,
) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / VECTORS_FILE, vectors)
    entries.astype(ENTRY_DTYPE, copy=False).tofile(out / ENTRIES_FILE)
    with open(out / SENTENCES_FILE, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(
                json.dumps(
                    {
                        "sentence_id": s.sentence_id,
                        "target_text": s.target_text,
                        "embedding_row": s.embedding_row,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
    if embeddings is not None:
        write_tensor(out / EMBEDDINGS_FILE, embeddings)
    with open(out / META_FILE, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def from_bundle(bundle: Bundle) -> Datastore:
    """Construct an in-memory datastore from a training-side bundle.

    Every sentence must carry side="train": the hidden states of a
    datastore come from forced decoding of known translations, not
    from model output. An empty bundle is refused.
    """
    bad_side = [s.sentence_id for s in bundle.sentences if s.side != "train"]
    if bad_side:
        raise ValidationError(
            "datastore build requires side=train for every sentence; "
            f"offending ids: {bad_side[:5]}"
        )
    if not bundle.sentences or bundle.token_count == 0:
        raise DataError("empty datastore refused: bundle holds no tokens")

    entries = np.zeros(bundle.token_count, dtype=ENTRY_DTYPE)
    cursor = 0
    for s_idx, s in enumerate(bundle.sentences):
        t = len(s.token_ids)
        sl = slice(cursor, cursor + t)
        entries["vec_row"][sl] = np.arange(s.vec_row_start, s.vec_row_start + t, dtype=np.uint64)
        entries["token_id"][sl] = np.asarray(s.token_ids, dtype=np.uint32)
        entries["sentence_idx"][sl] = s_idx
        entries["position"][sl] = np.arange(t, dtype=np.uint32)
        cursor += t

    sentences = [
        StoredSentence(s.sentence_id, s.target_text, s.embedding_row) for s in bundle.sentences
    ]
    meta = {
        "format_version": FORMAT_VERSION,
        "dim": bundle.dim,
        "token_count": bundle.token_count,
        "sentence_count": len(sentences),
        "has_embeddings": bundle.embeddings is not None,
        "embedding_dim": int(bundle.embeddings.shape[1]) if bundle.embeddings is not None else None,
        "sampling_chain": [],
    }
    return Datastore(np.asarray(bundle.vectors), entries, sentences, bundle.embeddings, meta)


def build(bundle: Bundle, out_dir: str | os.PathLike) -> Datastore:
    """Build a datastore from a training-side bundle and write it out."""
    out = resolve_path(out_dir)
    from_bundle(bundle).save(out)
    return open_store(out)


def open_store(path: str | os.PathLike) -> Datastore:
    """Open a datastore directory, checking internal consistency."""
    root = resolve_path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"datastore directory not found: {root}")
    meta_path = root / META_FILE
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"{meta_path}: unsupported datastore format_version {meta.get('format_version')!r}"
        )

    vectors = read_tensor(root / VECTORS_FILE)
    entries_path = root / ENTRIES_FILE
    size = os.path.getsize(entries_path)
    if size % ENTRY_DTYPE.itemsize:
        raise ValidationError(
            f"{entries_path}: size {size} is not a multiple of {ENTRY_DTYPE.itemsize}"
        )
    entries = np.fromfile(entries_path, dtype=ENTRY_DTYPE)

    sentences: list[StoredSentence] = []
    with open(root / SENTENCES_FILE, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sentences.append(
                    StoredSentence(
                        sentence_id=obj["sentence_id"],
                        target_text=obj["target_text"],
                        embedding_row=int(obj["embedding_row"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{root / SENTENCES_FILE} line {lineno}: {exc}")

    embeddings = None
    emb_path = root / EMBEDDINGS_FILE
    if emb_path.exists():
        embeddings = read_tensor(emb_path)

    violations: list[str] = []
    if meta.get("dim") != vectors.shape[1]:
        violations.append(
            f"meta dim {meta.get('dim')} does not match vector file dim {vectors.shape[1]}"
        )
    if meta.get("token_count") != len(entries):
        violations.append(
            f"meta token_count {meta.get('token_count')} does not match entry count {len(entries)}"
        )
    if meta.get("sentence_count") != len(sentences):
        violations.append(
            f"meta sentence_count {meta.get('sentence_count')} does not match "
            f"sentence file ({len(sentences)} records)"
        )
    if bool(meta.get("has_embeddings")) != (embeddings is not None):
        violations.append("meta has_embeddings does not match presence of embeddings file")
    if len(entries) and entries["vec_row"].max() >= vectors.shape[0]:
        violations.append("entry vec_row exceeds vector file row count")
    if len(entries) and len(sentences) and entries["sentence_idx"].max() >= len(sentences):
        violations.append("entry sentence_idx exceeds sentence count")
    if embeddings is not None:
        for s in sentences:
            if s.embedding_row >= embeddings.shape[0]:
                violations.append(
                    f"sentence {s.sentence_id!r}: embedding_row {s.embedding_row} out of range"
                )
                break
    if violations:
        raise ValidationError(f"{root}: inconsistent datastore", violations)

    return Datastore(vectors, entries, sentences, embeddings, meta)
