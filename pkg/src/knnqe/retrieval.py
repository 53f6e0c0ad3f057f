"""Nearest-neighbor search over datastore hidden states.

Distances are unnormalized Euclidean. Both search modes share the
same contract: neighbors come back sorted by (distance, entry index),
so equal distances resolve toward the lower entry index and results
are deterministic.

The exact path scans every entry. It ranks candidates with a single
float32 matrix product using the expansion

    ||q - x||^2 = ||q||^2 - 2 q.x + ||x||^2

where the query norm is constant per row and can be dropped for
ranking. A padded candidate set is then re-measured in float64
directly from the raw vectors, which absorbs float32 rounding and
makes reported distances independent of the scan strategy. The IVF
path restricts the scan to the clusters nearest the query and is
exhaustive within them, so with probe_count = n_clusters it returns
bit-identical results.

Vector magnitudes around 1e15 or above overflow the float32 ranking
products; hidden states are nowhere near that.
"""

from __future__ import annotations

import os
import weakref
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from ._select import fold_rows, topk_smallest
from .datastore import Datastore
from .errors import DataError, UsageError, ValidationError
from .interchange import (
    TENSOR_HEADER_SIZE,
    pack_tensor_header,
    resolve_path,
    unpack_tensor_header,
)

# Candidates refined beyond k. Float32 ranking error would have to
# reorder a true neighbor past this many closer-ranked entries to
# affect results.
_PAD = 32

# Rough element budget for one scan block's distance matrix.
_BLOCK_ELEMS = 160_000_000

IVF_FILE = "ivf.kqe"


class Neighbor(NamedTuple):
    entry_idx: int
    distance: float
    token_id: int
    sentence_idx: int


@dataclass
class NeighborSet:
    query_token_index: int
    neighbors: list[Neighbor]

    def __len__(self) -> int:
        return len(self.neighbors)


_aug_cache: "weakref.WeakKeyDictionary[Datastore, np.ndarray]" = weakref.WeakKeyDictionary()


def _augmented(store: Datastore) -> np.ndarray:
    """Per-entry rows [-2x | ||x||^2], cached per datastore."""
    aug = _aug_cache.get(store)
    if aug is None:
        X = store.entry_vectors()
        n, d = X.shape
        aug = np.empty((n, d + 1), dtype=np.float32)
        np.multiply(X, np.float32(-2.0), out=aug[:, :d])
        np.einsum("ij,ij->i", X, X, out=aug[:, d])
        _aug_cache[store] = aug
    return aug


def _augment_queries(Q: np.ndarray) -> np.ndarray:
    b, d = Q.shape
    qa = np.empty((b, d + 1), dtype=np.float32)
    qa[:, :d] = Q
    qa[:, d] = 1.0
    return qa


def _as_query_matrix(queries, dim: int) -> np.ndarray:
    """Normalize query input to a contiguous float32 (B, dim) matrix."""
    if isinstance(queries, np.ndarray) and queries.ndim == 2:
        if queries.shape[1] != dim:
            raise UsageError(
                f"query dim {queries.shape[1]} does not match datastore dim {dim}"
            )
        Q = np.ascontiguousarray(queries, dtype=np.float32)
    else:
        rows = []
        for i, q in enumerate(queries):
            arr = np.asarray(q, dtype=np.float32)
            if arr.ndim != 1 or arr.shape[0] != dim:
                raise UsageError(
                    f"query {i}: shape {arr.shape} does not match datastore dim {dim}"
                )
            rows.append(arr)
        if not rows:
            return np.empty((0, dim), dtype=np.float32)
        Q = np.ascontiguousarray(np.stack(rows))
    if not np.isfinite(Q).all():
        raise UsageError("queries contain NaN or infinite values")
    return Q


def _refine(
    V: np.ndarray,
    Q64: np.ndarray,
    cand: np.ndarray,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Re-measure candidate rows in float64 and keep the k best.

    ``cand`` is (B, m) with -1 marking padding. Returns (idx, dist)
    of shape (B, k), sorted by (distance, entry index). Distances are
    computed straight from the stored vectors, so a query equal to a
    stored vector comes back at exactly 0.0.
    """
    b, m = cand.shape
    flat = cand.ravel()
    valid = flat >= 0
    gathered = np.empty((b * m, V.shape[1]), dtype=np.float32)
    gathered[valid] = V[flat[valid]]
    gathered[~valid] = 0.0
    diff = gathered.reshape(b, m, -1) - Q64[:, None, :]
    d2 = np.einsum("bmd,bmd->bm", diff, diff)
    d2[~valid.reshape(b, m)] = np.inf

    order = np.lexsort((cand, d2), axis=1)[:, :k]
    idx = np.take_along_axis(cand, order, axis=1)
    dist = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return idx, dist


def _check_k(store: Datastore, k: int) -> None:
    if k < 1:
        raise UsageError(f"k must be at least 1, got {k}")
    if k > store.token_count:
        raise DataError(
            f"k={k} exceeds the datastore token count ({store.token_count})"
        )


def exact_batch_raw(store: Datastore, Q: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact search over a (B, dim) query matrix.

    Returns (idx, dist) arrays of shape (B, k). The scan runs in
    query blocks sized to keep the distance matrix in memory.
    """
    _check_k(store, k)
    n = store.token_count
    V = store.entry_vectors()
    aug = _augmented(store)
    kpad = min(n, k + _PAD)

    b_total = Q.shape[0]
    out_idx = np.empty((b_total, k), dtype=np.int64)
    out_dist = np.empty((b_total, k), dtype=np.float64)
    block = max(8, min(512, _BLOCK_ELEMS // max(n, 1)))
    G = np.empty((min(block, max(b_total, 1)), n), dtype=np.float32)
    sel_idx = np.empty((G.shape[0], kpad), dtype=np.int64)
    sel_val = np.empty((G.shape[0], kpad), dtype=np.float32)

    for lo in range(0, b_total, block):
        hi = min(lo + block, b_total)
        nb = hi - lo
        qa = _augment_queries(Q[lo:hi])
        np.matmul(qa, aug.T, out=G[:nb])
        topk_smallest(G[:nb], kpad, sel_idx[:nb], sel_val[:nb])
        idx, dist = _refine(V, Q[lo:hi].astype(np.float64), sel_idx[:nb], k)
        out_idx[lo:hi] = idx
        out_dist[lo:hi] = dist
    return out_idx, out_dist


def _assemble(store: Datastore, idx: np.ndarray, dist: np.ndarray) -> list[NeighborSet]:
    token_ids = store.entries["token_id"]
    sent_idx = store.entries["sentence_idx"]
    out = []
    for qi in range(idx.shape[0]):
        neighbors = [
            Neighbor(
                entry_idx=int(e),
                distance=float(d),
                token_id=int(token_ids[e]),
                sentence_idx=int(sent_idx[e]),
            )
            for e, d in zip(idx[qi], dist[qi])
        ]
        out.append(NeighborSet(query_token_index=qi, neighbors=neighbors))
    return out


def search_exact(store: Datastore, query: np.ndarray, k: int) -> NeighborSet:
    """Find the k nearest stored tokens to one query vector."""
    Q = _as_query_matrix([query], store.dim)
    idx, dist = exact_batch_raw(store, Q, k)
    return _assemble(store, idx, dist)[0]


def search_batch(
    store: Datastore,
    queries,
    k: int,
    mode: str = "exact",
    index: "IvfIndex | None" = None,
    probes: int | None = None,
) -> list[NeighborSet]:
    """Search many queries at once.

    ``mode`` selects the scan strategy: "exact" or "ivf". IVF mode
    requires a built or loaded index and a probe count.
    """
    Q = _as_query_matrix(queries, store.dim)
    if Q.shape[0] == 0:
        return []
    if mode == "exact":
        idx, dist = exact_batch_raw(store, Q, k)
    elif mode == "ivf":
        if index is None:
            raise UsageError("mode='ivf' requires an IvfIndex")
        if probes is None:
            raise UsageError("mode='ivf' requires a probe count")
        idx, dist = ivf_batch_raw(store, index, Q, k, probes)
    else:
        raise UsageError(f"unknown search mode {mode!r}; expected 'exact' or 'ivf'")
    return _assemble(store, idx, dist)


# ---------------------------------------------------------------------------
# IVF index


@dataclass
class IvfIndex:
    """Cluster assignment of every datastore entry plus the centroids.

    ``order``/``offsets`` regroup entry indices so each cluster's
    members form one contiguous range; the search arrays derived from
    a specific datastore are cached after the first use.
    """

    centroids: np.ndarray  # (C, dim) float32
    assignments: np.ndarray  # (N,) uint32
    order: np.ndarray = field(init=False)
    offsets: np.ndarray = field(init=False)
    _ordered_aug: np.ndarray | None = field(default=None, init=False, repr=False)
    _cent_aug: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        c = self.n_clusters
        if len(self.assignments) and int(self.assignments.max()) >= c:
            raise ValidationError("IVF assignment references a cluster beyond the centroid count")
        self.order = np.argsort(self.assignments, kind="stable").astype(np.int64)
        counts = np.bincount(self.assignments, minlength=c)
        self.offsets = np.zeros(c + 1, dtype=np.int64)
        np.cumsum(counts, out=self.offsets[1:])

    @property
    def n_clusters(self) -> int:
        return int(self.centroids.shape[0])

    def cluster_sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def _search_arrays(self, store: Datastore) -> tuple[np.ndarray, np.ndarray]:
        if len(self.assignments) != store.token_count:
            raise UsageError(
                f"IVF index covers {len(self.assignments)} entries but the datastore "
                f"holds {store.token_count}"
            )
        if self._ordered_aug is None:
            aug = _augmented(store)
            self._ordered_aug = np.ascontiguousarray(aug[self.order])
            c, d = self.centroids.shape
            ca = np.empty((c, d + 1), dtype=np.float32)
            np.multiply(self.centroids, np.float32(-2.0), out=ca[:, :d])
            np.einsum("ij,ij->i", self.centroids, self.centroids, out=ca[:, d])
            self._cent_aug = ca
        return self._ordered_aug, self._cent_aug


def _surrogate_assign(X: np.ndarray, cent: np.ndarray, block: int = 65536) -> np.ndarray:
    """Nearest centroid per row, ties toward the lower cluster id."""
    c, d = cent.shape
    ca = np.empty((c, d + 1), dtype=np.float32)
    np.multiply(cent, np.float32(-2.0), out=ca[:, :d])
    np.einsum("ij,ij->i", cent, cent, out=ca[:, d])
    out = np.empty(len(X), dtype=np.int64)
    for lo in range(0, len(X), block):
        hi = min(lo + block, len(X))
        qa = _augment_queries(np.ascontiguousarray(X[lo:hi], dtype=np.float32))
        g = qa @ ca.T
        out[lo:hi] = np.argmin(g, axis=1)
    return out


def _dsq_seed(X: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """Pick initial centroids by squared-distance-weighted sampling.

    Uniform seeding on clumped data tends to leave clumps unseeded;
    those merge into oversized clusters whose centroids sit between
    clumps and therefore rank near every query, which ruins probed
    search. Weighting each candidate by its squared distance to the
    nearest seed so far spreads seeds across the clumps and keeps
    cluster sizes commensurate. Seeds are drawn from a bounded pool
    of rows so the init stays cheap on large training sets.
    """
    n = len(X)
    pool_size = min(n, 16 * n_clusters)
    pool = np.ascontiguousarray(X[np.sort(rng.choice(n, size=pool_size, replace=False))])
    pa = _augment_queries(pool)
    x2 = np.einsum("ij,ij->i", pool.astype(np.float64), pool.astype(np.float64))

    chosen = np.empty(n_clusters, dtype=np.int64)
    chosen[0] = rng.integers(pool_size)
    best = np.full(pool_size, np.inf)
    d = pool.shape[1]
    s_aug = np.empty(d + 1, dtype=np.float32)
    for i in range(1, n_clusters):
        s = pool[chosen[i - 1]]
        np.multiply(s, np.float32(-2.0), out=s_aug[:d])
        s_aug[d] = s @ s
        d2 = np.maximum(pa @ s_aug + x2, 0.0)
        np.minimum(best, d2, out=best)
        best[chosen[:i]] = 0.0
        total = best.sum()
        if total <= 0.0:
            leftover = np.setdiff1d(np.arange(pool_size), chosen[:i])
            chosen[i:] = rng.choice(leftover, size=n_clusters - i, replace=False)
            break
        j = int(np.searchsorted(np.cumsum(best), rng.random() * total))
        chosen[i] = min(j, pool_size - 1)
    return pool[chosen].astype(np.float64)


def _kmeans(X: np.ndarray, n_clusters: int, rng: np.random.Generator, max_iters: int):
    """Lloyd iterations with deterministic empty-cluster repair."""
    if max_iters < 1:
        raise UsageError(f"max_iters must be at least 1, got {max_iters}")
    n = len(X)
    cent = _dsq_seed(np.asarray(X, dtype=np.float32), n_clusters, rng)
    assign = None
    for _ in range(max_iters):
        new_assign = _surrogate_assign(X, cent.astype(np.float32))
        counts = np.bincount(new_assign, minlength=n_clusters)
        for empty in np.flatnonzero(counts == 0):
            donor = int(np.argmax(counts))
            members = np.flatnonzero(new_assign == donor)
            d2 = ((X[members].astype(np.float64) - cent[donor]) ** 2).sum(axis=1)
            new_assign[members[int(np.argmax(d2))]] = empty
            counts[donor] -= 1
            counts[empty] += 1
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
        order = np.argsort(assign, kind="stable")
        starts = np.zeros(n_clusters, dtype=np.int64)
        starts[1:] = np.cumsum(counts)[:-1]
        sums = np.add.reduceat(X[order].astype(np.float64), starts, axis=0)
        cent = sums / counts[:, None]
    return cent.astype(np.float32), assign


def build_ivf(
    store: Datastore,
    n_clusters: int,
    seed: int,
    train_size: int | None = None,
    max_iters: int = 25,
) -> IvfIndex:
    """Cluster the datastore's hidden states for probed search.

    Centroids come from k-means over all entries, or over a seeded
    subsample of ``train_size`` entries when the full set is larger
    than needed for stable centroids. Every entry is then assigned to
    its nearest centroid. Deterministic for a fixed seed.
    """
    if n_clusters < 1:
        raise UsageError(f"n_clusters must be at least 1, got {n_clusters}")
    n = store.token_count
    if n_clusters > n:
        raise DataError(f"cannot form {n_clusters} clusters from {n} stored tokens")
    V = store.entry_vectors()
    rng = np.random.default_rng(seed)
    if train_size is not None and train_size < n:
        if train_size < n_clusters:
            raise UsageError(
                f"train_size {train_size} is smaller than n_clusters {n_clusters}"
            )
        sub = np.sort(rng.choice(n, size=train_size, replace=False))
        train = np.ascontiguousarray(V[sub])
    else:
        train = V
    centroids, _ = _kmeans(np.asarray(train, dtype=np.float32), n_clusters, rng, max_iters)
    assignments = _surrogate_assign(np.asarray(V, dtype=np.float32), centroids).astype(np.uint32)
    return IvfIndex(centroids=centroids, assignments=assignments)


def save_ivf(index: IvfIndex, store_dir: str | os.PathLike) -> None:
    """Persist an IVF index into a datastore directory.

    Layout: a tensor-format centroid block, then the entry count as
    u64, then one u32 cluster id per entry.
    """
    path = _ivf_path(store_dir)
    c, d = index.centroids.shape
    with open(path, "wb") as fh:
        fh.write(pack_tensor_header(c, d))
        fh.write(np.ascontiguousarray(index.centroids, dtype="<f4").tobytes())
        fh.write(np.uint64(len(index.assignments)).tobytes())
        fh.write(np.ascontiguousarray(index.assignments, dtype="<u4").tobytes())


def load_ivf(store_dir: str | os.PathLike, store: Datastore) -> IvfIndex:
    """Load an IVF index and check it matches the datastore."""
    path = _ivf_path(store_dir)
    with open(path, "rb") as fh:
        raw = fh.read()
    count, dim = unpack_tensor_header(raw, str(path))
    if dim != store.dim:
        raise ValidationError(
            f"{path}: centroid dim {dim} does not match datastore dim {store.dim}"
        )
    pos = TENSOR_HEADER_SIZE
    cent_bytes = count * dim * 4
    if len(raw) < pos + cent_bytes + 8:
        raise ValidationError(f"{path}: truncated IVF file")
    centroids = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=pos).reshape(count, dim)
    pos += cent_bytes
    (n_entries,) = np.frombuffer(raw, dtype="<u8", count=1, offset=pos)
    pos += 8
    expected = pos + int(n_entries) * 4
    if len(raw) != expected:
        raise ValidationError(
            f"{path}: file size {len(raw)} does not match assignment count {n_entries}"
        )
    if int(n_entries) != store.token_count:
        raise ValidationError(
            f"{path}: index covers {n_entries} entries but the datastore holds "
            f"{store.token_count}"
        )
    assignments = np.frombuffer(raw, dtype="<u4", count=int(n_entries), offset=pos)
    return IvfIndex(centroids=centroids.copy(), assignments=assignments.copy())


def _ivf_path(store_dir: str | os.PathLike) -> Path:
    p = resolve_path(store_dir)
    return p / IVF_FILE if p.is_dir() or not p.suffix else p


def ivf_batch_raw(
    store: Datastore,
    index: IvfIndex,
    Q: np.ndarray,
    k: int,
    probes: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Probed search over a (B, dim) query matrix.

    Scans the ``probes`` clusters whose centroids are nearest each
    query, exhaustively within each. Raises if the probed clusters
    cannot supply k entries; raising beats silently padding with
    bogus neighbors, and the fix (more probes) is in the message.
    """
    _check_k(store, k)
    c = index.n_clusters
    if not 1 <= probes <= c:
        raise UsageError(f"probe count must be in [1, {c}], got {probes}")
    V = store.entry_vectors()
    ordered_aug, cent_aug = index._search_arrays(store)
    sizes = index.cluster_sizes()
    kpad = min(store.token_count, k + _PAD)

    b_total = Q.shape[0]
    out_idx = np.empty((b_total, k), dtype=np.int64)
    out_dist = np.empty((b_total, k), dtype=np.float64)
    # Wide blocks keep the per-cluster products tall enough for the
    # BLAS kernel to run near peak; refinement re-chunks below.
    block = 16384

    for lo in range(0, b_total, block):
        hi = min(lo + block, b_total)
        nb = hi - lo
        qa = _augment_queries(Q[lo:hi])

        gc = qa @ cent_aug.T
        probe_idx = np.empty((nb, probes), dtype=np.int64)
        probe_val = np.empty((nb, probes), dtype=np.float32)
        topk_smallest(gc, probes, probe_idx, probe_val)
        probe_idx.sort(axis=1)

        totals = sizes[probe_idx].sum(axis=1)
        if totals.min() < k:
            qbad = int(np.argmin(totals)) + lo
            raise DataError(
                f"query {qbad}: probed clusters hold {int(totals.min())} entries, "
                f"fewer than k={k}; increase the probe count"
            )

        # Group (query, cluster) pairs by cluster so each cluster's
        # members are scanned once per block with a single product,
        # folding the resulting rows straight into per-query candidate
        # heaps instead of materializing every probed distance.
        flat_c = probe_idx.ravel()
        flat_q = np.repeat(np.arange(nb), probes)
        by_c = np.argsort(flat_c, kind="stable")
        flat_c = flat_c[by_c]
        flat_q = flat_q[by_c]
        run_starts = np.flatnonzero(np.r_[True, flat_c[1:] != flat_c[:-1]])
        run_ends = np.r_[run_starts[1:], len(flat_c)]

        heap_val = np.full((nb, kpad), np.inf, dtype=np.float32)
        heap_pos = np.full((nb, kpad), -1, dtype=np.int64)

        for rs, re in zip(run_starts, run_ends):
            cid = int(flat_c[rs])
            m = int(sizes[cid])
            if m == 0:
                continue
            qs = flat_q[rs:re]
            base = int(index.offsets[cid])
            sub = ordered_aug[base : base + m]
            # Cap the scratch product at ~64MB for very large clusters.
            step = max(1, (16 << 20) // max(m, 1))
            for qlo in range(0, len(qs), step):
                part = qs[qlo : qlo + step]
                g = qa[part] @ sub.T
                fold_rows(g, part, base, heap_val, heap_pos)

        cand = np.where(heap_pos >= 0, index.order[np.maximum(heap_pos, 0)], -1)

        for rlo in range(0, nb, 2048):
            rhi = min(rlo + 2048, nb)
            idx, dist = _refine(V, Q[lo + rlo : lo + rhi].astype(np.float64), cand[rlo:rhi], k)
            out_idx[lo + rlo : lo + rhi] = idx
            out_dist[lo + rlo : lo + rhi] = dist
    return out_idx, out_dist


def search_ivf(
    store: Datastore,
    index: IvfIndex,
    query: np.ndarray,
    k: int,
    probes: int,
) -> NeighborSet:
    """Find the k nearest stored tokens within the probed clusters."""
    Q = _as_query_matrix([query], store.dim)
    idx, dist = ivf_batch_raw(store, index, Q, k, probes)
    return _assemble(store, idx, dist)[0]
