"""File formats shared by every stage of the pipeline.

Three formats live here:

* tensor files: packed float32 matrices with a fixed 19 byte header,
  used for decoder states and sentence embeddings,
* sentence manifests: JSONL, one sentence per line, tying token ids to
  rows of a tensor file,
* score tables: TSV keyed by (system, domain, seg_id).

Everything is little-endian and deterministic: writing the same data
twice produces byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, UsageError, ValidationError

TENSOR_MAGIC = b"KQE1"
TENSOR_VERSION = 1
TENSOR_DTYPE_F32 = 1

_HEADER = struct.Struct("<4sHBIQ")
TENSOR_HEADER_SIZE = _HEADER.size  # 19 bytes

Key = tuple[str, str, str]  # (system, domain, seg_id)

SIDES = ("train", "test")


def resolve_path(path: str | os.PathLike) -> Path:
    """Resolve a path against KNNQE_DATA_DIR when it is relative."""
    p = Path(path)
    base = os.environ.get("KNNQE_DATA_DIR")
    if base and not p.is_absolute():
        return Path(base) / p
    return p


# ---------------------------------------------------------------------------
# tensor files


def pack_tensor_header(count: int, dim: int) -> bytes:
    """Pack a tensor header for embedding in composite files."""
    return _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, TENSOR_DTYPE_F32, dim, count)


def unpack_tensor_header(raw: bytes, where: str) -> tuple[int, int]:
    """Unpack and check a tensor header, returning (count, dim)."""
    if len(raw) < TENSOR_HEADER_SIZE:
        raise ValidationError(f"{where}: truncated tensor header ({len(raw)} bytes)")
    magic, version, dtype, dim, count = _HEADER.unpack(raw[:TENSOR_HEADER_SIZE])
    if magic != TENSOR_MAGIC:
        raise ValidationError(f"{where}: bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if version != TENSOR_VERSION:
        raise ValidationError(f"{where}: unsupported tensor version {version}")
    if dtype != TENSOR_DTYPE_F32:
        raise ValidationError(f"{where}: unsupported dtype code {dtype}")
    if dim == 0:
        raise ValidationError(f"{where}: tensor dim must be positive")
    return count, dim


def write_tensor(path: str | os.PathLike, array: np.ndarray) -> None:
    """Write a 2-D float array as a tensor file.

    The payload is stored row-major as little-endian float32. Arrays
    containing NaN or infinity are refused, as are empty dimensions.
    """
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 2:
        raise UsageError(f"tensor payload must be 2-D, got shape {arr.shape}")
    count, dim = arr.shape
    if dim <= 0:
        raise ValidationError(f"tensor dim must be positive, got {dim}")
    if not np.isfinite(arr).all():
        raise ValidationError("tensor payload contains NaN or infinite values")
    p = resolve_path(path)
    with open(p, "wb") as fh:
        fh.write(_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, TENSOR_DTYPE_F32, dim, count))
        fh.write(arr.tobytes())


def read_tensor_header(path: str | os.PathLike) -> tuple[int, int]:
    """Return (count, dim) from a tensor file header, validating it."""
    p = resolve_path(path)
    with open(p, "rb") as fh:
        raw = fh.read(TENSOR_HEADER_SIZE)
    count, dim = unpack_tensor_header(raw, str(p))
    expected = TENSOR_HEADER_SIZE + count * dim * 4
    actual = os.path.getsize(p)
    if actual != expected:
        raise ValidationError(
            f"{p}: file size {actual} does not match header "
            f"(count={count}, dim={dim}, expected {expected})"
        )
    return count, dim


def read_tensor(path: str | os.PathLike, *, mmap: bool = True) -> np.ndarray:
    """Read a tensor file as a read-only (count, dim) float32 array.

    The payload is scanned for NaN and infinity; files that fail the
    scan are refused outright rather than warned about. With ``mmap``
    the data stays on disk and is paged in on demand.
    """
    p = resolve_path(path)
    count, dim = read_tensor_header(p)
    if mmap and count > 0:
        arr: np.ndarray = np.memmap(p, dtype="<f4", mode="r", offset=TENSOR_HEADER_SIZE, shape=(count, dim))
    else:
        with open(p, "rb") as fh:
            fh.seek(TENSOR_HEADER_SIZE)
            arr = np.fromfile(fh, dtype="<f4", count=count * dim).reshape(count, dim)
        arr.flags.writeable = False
    # Chunked scan keeps peak memory flat for large mapped files.
    step = max(1, (1 << 26) // max(dim * 4, 1))
    for lo in range(0, count, step):
        if not np.isfinite(arr[lo : lo + step]).all():
            raise ValidationError(f"{p}: tensor payload contains NaN or infinite values")
    return arr


# ---------------------------------------------------------------------------
# sentence manifests


@dataclass(frozen=True)
class Sentence:
    """One manifest line: a sentence and its span of tensor rows."""

    sentence_id: str
    side: str
    source_text: str
    target_text: str
    token_ids: tuple[int, ...]
    vec_row_start: int
    embedding_row: int
    token_probs: tuple[float, ...] | None = None

    @property
    def token_count(self) -> int:
        return len(self.token_ids)

    def rows(self) -> slice:
        return slice(self.vec_row_start, self.vec_row_start + len(self.token_ids))


def _check_sentence_obj(obj: object, where: str) -> tuple[Sentence | None, list[str]]:
    """Parse one manifest record, returning (sentence, violations)."""
    problems: list[str] = []
    if not isinstance(obj, dict):
        return None, [f"{where}: record is not a JSON object"]

    def need(name: str, kind: type | tuple[type, ...]):
        if name not in obj:
            problems.append(f"{where}: missing field {name!r}")
            return None
        val = obj[name]
        if kind is int and isinstance(val, bool):
            problems.append(f"{where}: field {name!r} has wrong type")
            return None
        if not isinstance(val, kind):
            problems.append(f"{where}: field {name!r} has wrong type")
            return None
        return val

    sid = need("sentence_id", str)
    side = need("side", str)
    source = need("source_text", str)
    target = need("target_text", str)
    token_ids = need("token_ids", list)
    start = need("vec_row_start", int)
    emb_row = need("embedding_row", int)

    if side is not None and side not in SIDES:
        problems.append(f"{where}: side must be one of {SIDES}, got {side!r}")
    if token_ids is not None:
        if len(token_ids) == 0:
            problems.append(f"{where}: token_ids must not be empty")
        for t in token_ids:
            if isinstance(t, bool) or not isinstance(t, int) or t < 0 or t >= 2**32:
                problems.append(f"{where}: token_ids entries must be non-negative integers")
                break
    if start is not None and start < 0:
        problems.append(f"{where}: vec_row_start must be non-negative")
    if emb_row is not None and emb_row < 0:
        problems.append(f"{where}: embedding_row must be non-negative")

    probs = None
    if "token_probs" in obj and obj["token_probs"] is not None:
        raw = obj["token_probs"]
        if not isinstance(raw, list):
            problems.append(f"{where}: token_probs has wrong type")
        else:
            if side == "train":
                problems.append(f"{where}: token_probs only allowed on the test side")
            if token_ids is not None and len(raw) != len(token_ids):
                problems.append(
                    f"{where}: token_probs length {len(raw)} does not match "
                    f"token_ids length {len(token_ids)}"
                )
            bad = [v for v in raw if not isinstance(v, (int, float)) or isinstance(v, bool)
                   or not math.isfinite(v) or not 0.0 <= v <= 1.0]
            if bad:
                problems.append(f"{where}: token_probs values must lie in [0, 1]")
            else:
                probs = tuple(float(v) for v in raw)

    if problems:
        return None, problems
    return (
        Sentence(
            sentence_id=sid,
            side=side,
            source_text=source,
            target_text=target,
            token_ids=tuple(token_ids),
            vec_row_start=start,
            embedding_row=emb_row,
            token_probs=probs,
        ),
        [],
    )


def _parse_manifest(path: Path) -> tuple[list[Sentence], list[str]]:
    sentences: list[Sentence] = []
    violations: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path.name} line {lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                violations.append(f"{where}: invalid JSON ({exc.msg})")
                continue
            sent, problems = _check_sentence_obj(obj, where)
            violations.extend(problems)
            if sent is not None:
                sentences.append(sent)
    return sentences, violations


def read_manifest(path: str | os.PathLike) -> list[Sentence]:
    """Read a sentence manifest, raising on the first malformed record."""
    p = resolve_path(path)
    sentences, violations = _parse_manifest(p)
    if violations:
        raise ValidationError(f"{p}: malformed manifest", violations)
    return sentences


def write_manifest(path: str | os.PathLike, sentences: Iterable[Sentence]) -> None:
    p = resolve_path(path)
    with open(p, "w", encoding="utf-8") as fh:
        for s in sentences:
            obj = {
                "sentence_id": s.sentence_id,
                "side": s.side,
                "source_text": s.source_text,
                "target_text": s.target_text,
                "token_ids": list(s.token_ids),
                "vec_row_start": s.vec_row_start,
                "embedding_row": s.embedding_row,
            }
            if s.token_probs is not None:
                obj["token_probs"] = list(s.token_probs)
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# bundle = manifest + tensors


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    sentence_count: int = 0
    token_count: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_failed(self, context: str) -> None:
        if self.violations:
            raise ValidationError(f"{context}: bundle validation failed", self.violations)


@dataclass
class Bundle:
    """A validated manifest plus the tensor payloads it points into."""

    sentences: list[Sentence]
    vectors: np.ndarray
    embeddings: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def token_count(self) -> int:
        return int(self.vectors.shape[0])

    def sentence_vectors(self, i: int) -> np.ndarray:
        return self.vectors[self.sentences[i].rows()]


def validate_bundle(
    manifest_path: str | os.PathLike,
    vectors_path: str | os.PathLike,
    embeddings_path: str | os.PathLike | None = None,
) -> ValidationReport:
    """Check a manifest and its tensor files against the format contract.

    Returns a report carrying every violation found rather than
    stopping at the first. I/O failures (missing files, permissions)
    raise OSError and are not treated as validation results.
    """
    report = ValidationReport()
    manifest_p = resolve_path(manifest_path)
    vectors_p = resolve_path(vectors_path)

    sentences, violations = _parse_manifest(manifest_p)
    report.violations.extend(violations)
    report.sentence_count = len(sentences)

    vec_count: int | None = None
    try:
        vectors = read_tensor(vectors_p)
        vec_count = int(vectors.shape[0])
        report.token_count = vec_count
    except ValidationError as exc:
        report.violations.append(str(exc))

    emb_count: int | None = None
    if embeddings_path is not None:
        try:
            embeddings = read_tensor(resolve_path(embeddings_path))
            emb_count = int(embeddings.shape[0])
        except ValidationError as exc:
            report.violations.append(str(exc))

    seen_ids: set[str] = set()
    for s in sentences:
        if s.sentence_id in seen_ids:
            report.violations.append(f"duplicate sentence_id {s.sentence_id!r}")
        seen_ids.add(s.sentence_id)
        if emb_count is not None and s.embedding_row >= emb_count:
            report.violations.append(
                f"sentence {s.sentence_id!r}: embedding_row {s.embedding_row} "
                f"out of range for embeddings file ({emb_count} rows)"
            )

    # Row accounting: spans must tile the vector file exactly.
    for i, s in enumerate(sentences):
        if i == 0 and s.vec_row_start != 0:
            report.violations.append(
                f"sentence {s.sentence_id!r}: first vec_row_start must be 0, got {s.vec_row_start}"
            )
        end = s.vec_row_start + len(s.token_ids)
        if i + 1 < len(sentences):
            nxt = sentences[i + 1]
            if nxt.vec_row_start <= s.vec_row_start:
                report.violations.append(
                    f"sentence {nxt.sentence_id!r}: vec_row_start not strictly increasing"
                )
            elif end != nxt.vec_row_start:
                report.violations.append(
                    f"sentence {s.sentence_id!r}: token span ends at row {end} but next "
                    f"sentence starts at {nxt.vec_row_start}"
                )
        elif vec_count is not None and end != vec_count:
            report.violations.append(
                f"sentence {s.sentence_id!r}: final token span ends at row {end} "
                f"but the vector file holds {vec_count} rows"
            )
    if not sentences and vec_count:
        report.violations.append(
            f"manifest lists no sentences but the vector file holds {vec_count} rows"
        )
    return report


def load_bundle(
    manifest_path: str | os.PathLike,
    vectors_path: str | os.PathLike,
    embeddings_path: str | os.PathLike | None = None,
) -> Bundle:
    """Validate and load a bundle in one step."""
    report = validate_bundle(manifest_path, vectors_path, embeddings_path)
    report.raise_if_failed(str(resolve_path(manifest_path)))
    vectors = read_tensor(vectors_path)
    embeddings = read_tensor(embeddings_path) if embeddings_path is not None else None
    return Bundle(sentences=read_manifest(manifest_path), vectors=vectors, embeddings=embeddings)


# ---------------------------------------------------------------------------
# score tables

SCORE_COLUMNS = ("system", "domain", "seg_id", "score")


@dataclass
class ScoreFragment:
    """One metric's scores, keyed by (system, domain, seg_id)."""

    name: str
    scores: dict[Key, float]
    polarity: str = "higher"

    def keys(self) -> set[Key]:
        return set(self.scores)


def read_score_table(
    path: str | os.PathLike,
    name: str | None = None,
    polarity: str = "higher",
) -> ScoreFragment:
    """Read a TSV score table.

    The metric name defaults to the file stem. Missing segments are
    simply absent rows; NaN placeholder values are a format violation.
    """
    p = resolve_path(path)
    violations: list[str] = []
    scores: dict[Key, float] = {}
    with open(p, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{p}: empty score table (missing header)")
        try:
            cols = [header.index(c) for c in SCORE_COLUMNS]
        except ValueError:
            raise ValidationError(
                f"{p}: header must contain columns {', '.join(SCORE_COLUMNS)}; got {header}"
            )
        for rowno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < len(header):
                violations.append(f"row {rowno}: expected {len(header)} fields, got {len(row)}")
                continue
            system, domain, seg_id, raw = (row[c] for c in cols)
            try:
                score = float(raw)
            except ValueError:
                violations.append(f"row {rowno}: score {raw!r} is not a number")
                continue
            if not math.isfinite(score):
                violations.append(f"row {rowno}: score must be finite, got {raw!r}")
                continue
            key = (system, domain, seg_id)
            if key in scores:
                violations.append(f"row {rowno}: duplicate key {key!r}")
                continue
            scores[key] = score
    if violations:
        raise ValidationError(f"{p}: malformed score table", violations)
    return ScoreFragment(name=name or p.stem, scores=scores, polarity=polarity)


def write_score_table(path: str | os.PathLike, fragment: ScoreFragment) -> None:
    p = resolve_path(path)
    for key, score in fragment.scores.items():
        if any(c in part for part in key for c in "\t\n\r"):
            raise ValidationError(f"score key {key!r} contains tab or newline characters")
        if not math.isfinite(score):
            raise ValidationError(f"score for key {key!r} must be finite, got {score!r}")
    with open(p, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(SCORE_COLUMNS)
        for key in sorted(fragment.scores):
            writer.writerow([*key, repr(fragment.scores[key])])


@dataclass
class ScoreMatrix:
    """Several score tables aligned on their common keys."""

    keys: list[Key]
    columns: dict[str, np.ndarray]
    polarities: dict[str, str]
    dropped: dict[str, list[Key]]

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise UsageError(f"no score column named {name!r}; have {sorted(self.columns)}")
        return self.columns[name]

    def group_values(self, dimension: str) -> list[str]:
        idx = {"system": 0, "domain": 1}.get(dimension)
        if idx is None:
            raise UsageError(f"grouping dimension must be 'system' or 'domain', got {dimension!r}")
        return sorted({k[idx] for k in self.keys})

    def restrict(self, dimension: str, value: str) -> "ScoreMatrix":
        idx = {"system": 0, "domain": 1}[dimension]
        mask = np.array([k[idx] == value for k in self.keys], dtype=bool)
        keys = [k for k, m in zip(self.keys, mask) if m]
        return ScoreMatrix(
            keys=keys,
            columns={n: c[mask] for n, c in self.columns.items()},
            polarities=dict(self.polarities),
            dropped={n: [] for n in self.columns},
        )


def align_tables(fragments: Sequence[ScoreFragment]) -> ScoreMatrix:
    """Inner-join score fragments on their keys.

    Keys missing from any fragment are dropped and reported per
    fragment. An empty intersection is an error: correlating nothing
    is meaningless and silently returning an empty matrix would let
    that propagate.
    """
    if len(fragments) < 2:
        raise UsageError("aligning score tables requires at least two fragments")
    names = [f.name for f in fragments]
    if len(set(names)) != len(names):
        raise UsageError(f"score fragments must have distinct names, got {names}")
    common = set(fragments[0].scores)
    for f in fragments[1:]:
        common &= set(f.scores)
    if not common:
        raise DataError("score tables share no (system, domain, seg_id) keys")
    keys = sorted(common)
    columns = {
        f.name: np.array([f.scores[k] for k in keys], dtype=np.float64) for f in fragments
    }
    dropped = {f.name: sorted(set(f.scores) - common) for f in fragments}
    return ScoreMatrix(
        keys=keys,
        columns=columns,
        polarities={f.name: f.polarity for f in fragments},
        dropped=dropped,
    )
