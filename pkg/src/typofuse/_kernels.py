"""Hot numeric kernels: exact score scans, grid pooling, random projection.

Each kernel has a numba ``@njit`` implementation and a pure-numpy twin.
``TYPOFUSE_NUMBA=0`` (or numba being unimportable) selects the numpy path.
Both paths accumulate in float64 in the same element order, so they produce
bit-identical results; ``benchmarks/bench_kernels.py`` compares their speed.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_requested() -> bool:
    return os.environ.get("TYPOFUSE_NUMBA", "1") != "0"


USING_NUMBA = False
if _numba_requested():
    try:
        from numba import njit, prange

        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay importable
        USING_NUMBA = False


def using_numba() -> bool:
    """True when the compiled kernel path is active."""
    return USING_NUMBA


# ---------------------------------------------------------------------------
# numpy twins
#
# The j-loops below mirror the compiled kernels' accumulation order exactly:
# one f64 multiply then one f64 add per element, j ascending. Do not replace
# them with BLAS dot products; that changes rounding.
# ---------------------------------------------------------------------------


def _dot_scores_np(vectors: np.ndarray, query: np.ndarray) -> np.ndarray:
    scores = np.zeros(vectors.shape[0], dtype=np.float64)
    q = query.astype(np.float64)
    for j in range(vectors.shape[1]):
        scores += vectors[:, j].astype(np.float64) * q[j]
    return scores


def _dot_scores_batch_np(vectors: np.ndarray, queries: np.ndarray) -> np.ndarray:
    scores = np.zeros((queries.shape[0], vectors.shape[0]), dtype=np.float64)
    q64 = queries.astype(np.float64)
    for j in range(vectors.shape[1]):
        col = vectors[:, j].astype(np.float64)
        scores += q64[:, j : j + 1] * col[np.newaxis, :]
    return scores


def _pool_grid_np(gray: np.ndarray, grid: int) -> tuple[np.ndarray, np.ndarray]:
    h, w = gray.shape
    # 2-D integer prefix sums make every cell total exact and order-free.
    pref = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(gray, axis=0, dtype=np.int64), axis=1, out=pref[1:, 1:])
    rb = np.array([r * h // grid for r in range(grid + 1)], dtype=np.int64)
    cb = np.array([c * w // grid for c in range(grid + 1)], dtype=np.int64)
    sums = (
        pref[rb[1:, None], cb[None, 1:]]
        - pref[rb[:-1, None], cb[None, 1:]]
        - pref[rb[1:, None], cb[None, :-1]]
        + pref[rb[:-1, None], cb[None, :-1]]
    )
    counts = (rb[1:, None] - rb[:-1, None]) * (cb[None, 1:] - cb[None, :-1])
    return sums, counts


def _project_np(pooled: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    out = np.zeros(matrix.shape[1], dtype=np.float64)
    for i in range(pooled.shape[0]):
        out += pooled[i] * matrix[i]
    return out


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

if USING_NUMBA:

    @njit(parallel=True, cache=True)
    def _dot_scores_nb(vectors, query):  # pragma: no cover - compiled
        n, d = vectors.shape
        q = query.astype(np.float64)
        scores = np.empty(n, dtype=np.float64)
        for i in prange(n):
            acc = 0.0
            for j in range(d):
                acc += np.float64(vectors[i, j]) * q[j]
            scores[i] = acc
        return scores

    @njit(parallel=True, cache=True)
    def _dot_scores_batch_nb(vectors, queries):  # pragma: no cover - compiled
        n, d = vectors.shape
        nq = queries.shape[0]
        q64 = queries.astype(np.float64)
        scores = np.empty((nq, n), dtype=np.float64)
        for i in prange(n):
            for qi in range(nq):
                acc = 0.0
                for j in range(d):
                    acc += np.float64(vectors[i, j]) * q64[qi, j]
                scores[qi, i] = acc
        return scores

    @njit(cache=True)
    def _pool_grid_nb(gray, grid):  # pragma: no cover - compiled
        h, w = gray.shape
        sums = np.zeros((grid, grid), dtype=np.int64)
        counts = np.zeros((grid, grid), dtype=np.int64)
        for r in range(grid):
            r0 = r * h // grid
            r1 = (r + 1) * h // grid
            for c in range(grid):
                c0 = c * w // grid
                c1 = (c + 1) * w // grid
                acc = np.int64(0)
                for y in range(r0, r1):
                    for x in range(c0, c1):
                        acc += gray[y, x]
                sums[r, c] = acc
                counts[r, c] = (r1 - r0) * (c1 - c0)
        return sums, counts

    @njit(cache=True)
    def _project_nb(pooled, matrix):  # pragma: no cover - compiled
        m, d = matrix.shape
        out = np.zeros(d, dtype=np.float64)
        for i in range(m):
            v = pooled[i]
            for j in range(d):
                out[j] += v * matrix[i, j]
        return out


def dot_scores(vectors: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Per-row dot products of an (N, D) f32 matrix with a length-D query.

    Accumulates each row in float64, j ascending, so results are independent
    of thread count and identical across the numba and numpy paths.
    """
    if USING_NUMBA:
        return _dot_scores_nb(vectors, query)
    return _dot_scores_np(vectors, query)


def dot_scores_batch(vectors: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Score matrix (Q, N) for a batch of queries against the same vectors."""
    if USING_NUMBA:
        return _dot_scores_batch_nb(vectors, queries)
    return _dot_scores_batch_np(vectors, queries)


def pool_grid(gray: np.ndarray, grid: int) -> tuple[np.ndarray, np.ndarray]:
    """Sum an (H, W) int64 image over a grid x grid partition.

    Returns (sums, counts), both int64 and exact, with cell (r, c) covering
    rows [r*H//grid, (r+1)*H//grid) and the analogous column span. Cells are
    empty (count 0) when the image has fewer rows or columns than the grid.
    """
    if USING_NUMBA:
        return _pool_grid_nb(gray, grid)
    return _pool_grid_np(gray, grid)


def project(pooled: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Multiply a length-M f64 vector through an (M, D) f64 matrix, row order."""
    if USING_NUMBA:
        return _project_nb(pooled, matrix)
    return _project_np(pooled, matrix)
