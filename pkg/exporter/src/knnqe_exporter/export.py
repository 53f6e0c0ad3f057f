"""Bundle export: decoder states, token probabilities, embeddings.

The two sides of an export differ in where tokens come from. The train
side force-decodes the reference translation, so every reference token
contributes the hidden state that predicted it, with the end-of-sentence
prediction kept as a final entry. The test side decodes greedily and
records, per emitted token, the state, the token id, and the model's
probability for it. Both sides attach one sentence embedding row per
sentence and write the same three files: manifest, vectors, embeddings.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedder import HashEmbedder, parse_embedder
from .errors import ExportError, UsageError
from .formats import SentenceRecord, write_manifest, write_tensor
from .toy_model import EOS, ToyModel

SIDES = ("train", "test")


@dataclass(frozen=True)
class ExportJob:
    """Everything one export run needs, mirrored by the CLI flags."""

    model_path: str
    source_path: str
    side: str
    out_dir: str
    target_path: str | None = None
    batch_size: int = 16
    device: str = "cpu"
    embedding_model: str = "hash:64"

    def check(self) -> None:
        if self.side not in SIDES:
            raise UsageError(f"side must be one of {SIDES}, got {self.side!r}")
        if self.batch_size < 1:
            raise UsageError(f"batch size must be at least 1, got {self.batch_size}")
        if self.device != "cpu":
            raise UsageError(f"only device=cpu is supported, got {self.device!r}")
        if self.side == "train" and self.target_path is None:
            raise UsageError("the train side needs reference translations (target file)")


@dataclass
class ExportResult:
    manifest: Path
    vectors: Path
    embeddings: Path
    sentence_count: int
    entry_count: int
    skipped: list[str] = field(default_factory=list)


def _read_lines(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def export_embeddings(texts: list[str], embedder: HashEmbedder, out_path=None) -> np.ndarray:
    """Embed sentences, one row each, optionally writing a tensor file."""
    rows = embedder.embed_all(texts)
    if out_path is not None:
        write_tensor(out_path, rows)
    return rows


def _write_bundle(
    out_dir: Path,
    side: str,
    records: list[SentenceRecord],
    vectors: np.ndarray,
    embeddings: np.ndarray,
    skipped: list[str],
) -> ExportResult:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / f"{side}.jsonl"
    vec_path = out_dir / f"{side}.kqe"
    emb_path = out_dir / f"{side}_emb.kqe"
    write_tensor(vec_path, vectors)
    write_tensor(emb_path, embeddings)
    write_manifest(manifest, records)
    return ExportResult(
        manifest=manifest,
        vectors=vec_path,
        embeddings=emb_path,
        sentence_count=len(records),
        entry_count=int(vectors.shape[0]),
        skipped=skipped,
    )


def _batches(n: int, size: int):
    for lo in range(0, n, size):
        yield range(lo, min(lo + size, n))


def export_train_side(job: ExportJob) -> ExportResult:
    """Force-decode references and export one entry per predicted token.

    Entry count is fully determined by the data: one row per reference
    token plus one end-of-sentence row per sentence.
    """
    job.check()
    if job.side != "train":
        raise UsageError(f"export_train_side called with side={job.side!r}")
    model = ToyModel.load(job.model_path)
    embedder = parse_embedder(job.embedding_model)
    sources = _read_lines(job.source_path)
    targets = _read_lines(job.target_path)
    if len(sources) != len(targets):
        raise ExportError(
            f"source and target are not parallel: {len(sources)} vs {len(targets)} lines"
        )

    records: list[SentenceRecord] = []
    state_blocks: list[np.ndarray] = []
    texts: list[str] = []
    cursor = 0
    for batch in _batches(len(sources), job.batch_size):
        for i in batch:
            sid = f"tr{i}"
            source_ids = model.tokenize(sources[i])
            if not source_ids:
                raise ExportError(f"sentence {sid}: empty source line")
            reference_ids = model.tokenize(targets[i], strict=True)
            if not reference_ids:
                raise ExportError(f"sentence {sid}: empty reference line")
            context = model.encode(source_ids)
            states = model.forced_states(reference_ids, context)
            token_ids = tuple(reference_ids) + (EOS,)
            records.append(
                SentenceRecord(
                    sentence_id=sid,
                    side="train",
                    source_text=sources[i],
                    target_text=targets[i],
                    token_ids=token_ids,
                    vec_row_start=cursor,
                    embedding_row=len(texts),
                )
            )
            state_blocks.append(states)
            texts.append(targets[i])
            cursor += len(token_ids)

    vectors = np.concatenate(state_blocks, axis=0)
    embeddings = export_embeddings(texts, embedder)
    return _write_bundle(Path(job.out_dir), "train", records, vectors, embeddings, [])


def export_test_side(job: ExportJob) -> ExportResult:
    """Decode greedily and export states, ids, and probabilities.

    A sentence whose decoding produces nothing but <eos> has no
    translation to evaluate; such segments are skipped with a warning
    rather than written as hollow records.
    """
    job.check()
    if job.side != "test":
        raise UsageError(f"export_test_side called with side={job.side!r}")
    model = ToyModel.load(job.model_path)
    embedder = parse_embedder(job.embedding_model)
    sources = _read_lines(job.source_path)

    records: list[SentenceRecord] = []
    state_blocks: list[np.ndarray] = []
    texts: list[str] = []
    skipped: list[str] = []
    cursor = 0
    for batch in _batches(len(sources), job.batch_size):
        for i in batch:
            sid = f"te{i}"
            source_ids = model.tokenize(sources[i])
            if not source_ids:
                raise ExportError(f"sentence {sid}: empty source line")
            context = model.encode(source_ids)
            states, ids, probs = model.greedy(context)
            content_ids = [t for t in ids if t != EOS]
            if not content_ids:
                warnings.warn(f"sentence {sid}: empty generation, segment skipped")
                skipped.append(sid)
                continue
            target_text = " ".join(model.words(content_ids))
            records.append(
                SentenceRecord(
                    sentence_id=sid,
                    side="test",
                    source_text=sources[i],
                    target_text=target_text,
                    token_ids=tuple(ids),
                    vec_row_start=cursor,
                    embedding_row=len(texts),
                    token_probs=tuple(probs),
                )
            )
            state_blocks.append(states)
            texts.append(target_text)
            cursor += len(ids)

    if not records:
        raise ExportError("every segment produced an empty generation; nothing to export")
    vectors = np.concatenate(state_blocks, axis=0)
    embeddings = export_embeddings(texts, embedder)
    return _write_bundle(Path(job.out_dir), "test", records, vectors, embeddings, skipped)


def run_export(job: ExportJob) -> ExportResult:
    job.check()
    if job.side == "train":
        return export_train_side(job)
    return export_test_side(job)
