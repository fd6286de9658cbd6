"""Exact pairwise Euclidean distances and nearest-neighbor queries.

All distances come from the expanded form

    d(x, c) = sqrt(|x|^2 + |c|^2 - 2 x.c)

evaluated with 64-bit accumulation and returned as float32. The subtraction
magnifies rounding for near-duplicate points at high D, so squared values
below the accumulation noise floor (including negatives) are clamped to
zero; duplicated points therefore give exactly 0. Rows of X are processed
in blocks to bound working memory. Tie-breaking is lowest-index everywhere
so results are reproducible.
"""

from __future__ import annotations

import numpy as np

from .validation import as_float_matrix, as_float_vector, check_same_dim

DEFAULT_BLOCK_ROWS = 1024


def _sq_norms(A64: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", A64, A64)


def pairwise_distances(X, C, block_rows: int = DEFAULT_BLOCK_ROWS) -> np.ndarray:
    """Euclidean distance matrix between rows of X (n x D) and C (m x D).

    Returns a float32 (n, m) array, every entry finite and >= 0, matching the
    naive per-pair computation within 1e-4 absolute.
    """
    X = as_float_matrix(X, "X")
    C = as_float_matrix(C, "C")
    check_same_dim(X, C)
    C64 = C.astype(np.float64)
    c_norms = _sq_norms(C64)
    n = X.shape[0]
    out = np.empty((n, C.shape[0]), dtype=np.float32)
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        X64 = X[start:stop].astype(np.float64)
        add = _sq_norms(X64)[:, None] + c_norms[None, :]
        sq = add - 2.0 * (X64 @ C64.T)
        # Anything below the accumulation noise floor of the expansion is
        # indistinguishable from zero, so snap it there. This also covers
        # the small negatives the subtraction can produce and makes the
        # distance between bit-identical rows exactly 0.
        sq[sq < 1e-12 * add] = 0.0
        out[start:stop] = np.sqrt(sq, out=sq)
    return out


def nearest(X, C, block_rows: int = DEFAULT_BLOCK_ROWS) -> tuple[np.ndarray, np.ndarray]:
    """Per row of X, the smallest distance to C and the lowest index achieving it.

    Returns (distances float32 (n,), indices int64 (n,)).
    """
    X = as_float_matrix(X, "X")
    C = as_float_matrix(C, "C")
    check_same_dim(X, C)
    n = X.shape[0]
    dists = np.empty(n, dtype=np.float32)
    idx = np.empty(n, dtype=np.int64)
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        block = pairwise_distances(X[start:stop], C, block_rows=block_rows)
        j = np.argmin(block, axis=1)  # first occurrence = lowest index
        idx[start:stop] = j
        dists[start:stop] = block[np.arange(stop - start), j]
    return dists, idx


def k_nearest(x, C, b: int) -> tuple[np.ndarray, np.ndarray]:
    """The b nearest elements of C to vector x, ascending by distance.

    Ties break toward the lower index. Returns (distances, indices) of
    length min(b, m).
    """
    if b < 1:
        raise ValueError(f"b must be >= 1, got {b}")
    x = as_float_vector(x, "x")
    C = as_float_matrix(C, "C")
    if x.shape[0] != C.shape[1]:
        raise ValueError(f"dimension mismatch: x has D={x.shape[0]}, C has D={C.shape[1]}")
    dists = pairwise_distances(x.reshape(1, -1), C)[0]
    k = min(b, C.shape[0])
    order = np.argsort(dists, kind="stable")[:k]
    return dists[order], order


def min_pair(C, block_rows: int = DEFAULT_BLOCK_ROWS) -> tuple[float, int, int]:
    """Closest distinct pair of rows in C: (distance, i, j) with i < j.

    The diagonal is excluded; ties break lexicographically on (i, j).
    """
    C = as_float_matrix(C, "C")
    m = C.shape[0]
    if m < 2:
        raise ValueError(f"min_pair needs at least two elements, got {m}")
    best = np.inf
    best_i, best_j = -1, -1
    for start in range(0, m, block_rows):
        stop = min(start + block_rows, m)
        block = pairwise_distances(C[start:stop], C, block_rows=block_rows)
        rows = np.arange(start, stop)
        block[np.arange(stop - start), rows] = np.inf  # exclude self-pairs
        flat = np.argmin(block)
        r, c = divmod(int(flat), m)
        d = float(block[r, c])
        if d > best:
            continue
        # normalize to i < j, then keep the lexicographically first pair on ties
        cand = np.argwhere(block == d)
        for rr, cc in cand:
            i, j = sorted((int(rr) + start, int(cc)))
            if d < best or (i, j) < (best_i, best_j):
                best, best_i, best_j = d, i, j
    return best, best_i, best_j
