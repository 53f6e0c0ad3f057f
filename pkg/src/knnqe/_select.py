"""Compiled per-row top-k selection.

numpy's argpartition walks each row several times and was measured an
order of magnitude too slow for full-corpus scans, so the hot loop
lives here. The kernel keeps the k smallest values seen so far in a
binary max-heap, so displacing the current worst costs O(log k)
rather than a rescan of all k slots. That matters for narrow rows
where admissions are a large fraction of the row.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _sift_down(vals, idxs, start, size):
    """Restore the max-heap property below ``start``.

    The heap orders by (value, column) so that among equal values the
    latest column sits nearest the root and is evicted first.
    """
    pos = start
    v = vals[pos]
    i = idxs[pos]
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        right = child + 1
        if right < size and (
            vals[right] > vals[child]
            or (vals[right] == vals[child] and idxs[right] > idxs[child])
        ):
            child = right
        if vals[child] > v or (vals[child] == v and idxs[child] > i):
            vals[pos] = vals[child]
            idxs[pos] = idxs[child]
            pos = child
        else:
            break
    vals[pos] = v
    idxs[pos] = i


@njit(cache=True)
def topk_smallest(values, k, out_idx, out_val):
    """Select the k smallest entries of each row of ``values``.

    Writes column indices to ``out_idx`` and the values themselves to
    ``out_val``; slots are in no particular order. Ties on the
    admission boundary keep the earlier column, so with columns in
    entry order the lower entry index survives. ``k`` must be at
    least 1 and no larger than the row length.
    """
    n_rows, n_cols = values.shape
    for r in range(n_rows):
        vals = out_val[r]
        idxs = out_idx[r]
        for j in range(k):
            vals[j] = values[r, j]
            idxs[j] = j
        for start in range((k - 2) // 2, -1, -1):
            _sift_down(vals, idxs, start, k)
        root = vals[0]
        for j in range(k, n_cols):
            v = values[r, j]
            if v < root:
                vals[0] = v
                idxs[0] = j
                _sift_down(vals, idxs, 0, k)
                root = vals[0]


@njit(cache=True)
def fold_rows(g, qs, base, heap_val, heap_pos):
    """Fold one batch of distance rows into persistent per-query heaps.

    ``g`` holds values for ``len(qs)`` queries against one contiguous
    slab of entries whose positions start at ``base``; row ``t``
    belongs to query ``qs[t]``. Each element is offered once to that
    query's max-heap of current best values, so a value worse than the
    heap root costs a single compare. Ties keep the earlier position.
    Heaps must be primed with +inf values and -1 positions; slots
    still holding -1 afterwards mean the query saw fewer elements
    than the heap has room for.
    """
    n_rows, m = g.shape
    size = heap_val.shape[1]
    for t in range(n_rows):
        hv = heap_val[qs[t]]
        hp = heap_pos[qs[t]]
        root = hv[0]
        # Most rows admit nothing once the heap tightens, so a cheap
        # minimum scan decides whether the heap pass is needed at all.
        mn = g[t, 0]
        for c in range(1, m):
            if g[t, c] < mn:
                mn = g[t, c]
        if mn >= root:
            continue
        for c in range(m):
            v = g[t, c]
            if v < root:
                hv[0] = v
                hp[0] = base + c
                _sift_down(hv, hp, 0, size)
                root = hv[0]
