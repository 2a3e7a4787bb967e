"""BEV voxel pooling: scatter-accumulation of point features into a grid.

Two variants share the same contract (out-of-bounds points are skipped,
never wrapped):

* ``pool_v1`` - the reference baseline: one sequential pass, accumulating
  in point-index order.
* ``pool_v2`` - a block-staged, tile-local variant. Points are processed
  in blocks of 128; each block's coordinates are flattened once into a
  small staging buffer (the CPU-cache analog of staging into shared
  memory) before the block's features are swept channel-contiguously into
  the accumulator. Two accumulation modes exist because concurrent float
  accumulation reorders additions:

  - ``deterministic``: workers own disjoint interleaved stripes of grid
    cells and every worker scans all blocks, so each cell receives its
    additions in point-index order regardless of worker count - the result
    is bit-identical to pool_v1.
  - ``atomic``: workers split the blocks round-robin and accumulate into
    per-worker partial grids that are reduced in fixed worker order - the
    CPU analog of concurrent atomic adds, equal to pool_v1 only up to
    float reordering.

The grid is exclusively owned while pooling runs; callers must not read it
until the call returns. Kernels are compiled with the GIL released, so
worker threads genuinely run in parallel.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

BLOCK_SIZE = 128


@dataclass
class PointFeatureBatch:
    """N points with integer grid coordinates and C-dim features."""

    ix: np.ndarray  # (N,) int64, may be out of bounds
    iy: np.ndarray  # (N,) int64
    features: np.ndarray  # (N, C) float32
    grid_x: int
    grid_y: int

    def __post_init__(self):
        self.ix = np.ascontiguousarray(self.ix, dtype=np.int64)
        self.iy = np.ascontiguousarray(self.iy, dtype=np.int64)
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.ix.shape != self.iy.shape or self.ix.ndim != 1:
            raise ValueError("ix and iy must be equal-length 1-D arrays")
        if self.features.shape[0] != self.ix.shape[0]:
            raise ValueError("features must have one row per point")
        if self.grid_x <= 0 or self.grid_y <= 0:
            raise ValueError("grid dims must be positive")


@dataclass
class BevGrid:
    """(X, Y, C) accumulator of pooled features."""

    values: np.ndarray

    @property
    def dims(self):
        return self.values.shape


@njit(cache=True, nogil=True)
def _scatter_sequential(ix, iy, feats, grid2d, x_dim, y_dim):
    skipped = 0
    for p in range(ix.shape[0]):
        x = ix[p]
        y = iy[p]
        if 0 <= x < x_dim and 0 <= y < y_dim:
            row = x * y_dim + y
            for c in range(feats.shape[1]):
                grid2d[row, c] += feats[p, c]
        else:
            skipped += 1
    return skipped


@njit(cache=True, nogil=True)
def _scatter_stripe(ix, iy, feats, grid2d, x_dim, y_dim, stripe, n_stripes):
    # Deterministic-mode worker: owns rows with row % n_stripes == stripe,
    # scans every block so owned cells accumulate in point order.
    staged = np.empty(BLOCK_SIZE, dtype=np.int64)
    n = ix.shape[0]
    n_ch = feats.shape[1]
    for b0 in range(0, n, BLOCK_SIZE):
        count = min(BLOCK_SIZE, n - b0)
        for j in range(count):
            x = ix[b0 + j]
            y = iy[b0 + j]
            staged[j] = x * y_dim + y if (0 <= x < x_dim and 0 <= y < y_dim) else -1
        for j in range(count):
            row = staged[j]
            if row >= 0 and row % n_stripes == stripe:
                for c in range(n_ch):
                    grid2d[row, c] += feats[b0 + j, c]


@njit(cache=True, nogil=True)
def _scatter_blocks(ix, iy, feats, grid2d, x_dim, y_dim, worker, n_workers):
    # Atomic-mode worker: takes blocks round-robin into its own partial grid.
    staged = np.empty(BLOCK_SIZE, dtype=np.int64)
    n = ix.shape[0]
    n_ch = feats.shape[1]
    n_blocks = (n + BLOCK_SIZE - 1) // BLOCK_SIZE
    for b in range(worker, n_blocks, n_workers):
        b0 = b * BLOCK_SIZE
        count = min(BLOCK_SIZE, n - b0)
        for j in range(count):
            x = ix[b0 + j]
            y = iy[b0 + j]
            staged[j] = x * y_dim + y if (0 <= x < x_dim and 0 <= y < y_dim) else -1
        for j in range(count):
            row = staged[j]
            if row >= 0:
                for c in range(n_ch):
                    grid2d[row, c] += feats[b0 + j, c]


def _skip_count(batch: PointFeatureBatch) -> int:
    oob = (batch.ix < 0) | (batch.ix >= batch.grid_x) | (batch.iy < 0) | (batch.iy >= batch.grid_y)
    return int(np.count_nonzero(oob))


def pool_v1(batch: PointFeatureBatch):
    """Baseline pooling. Returns (BevGrid, skipped_count)."""
    c = batch.features.shape[1]
    grid2d = np.zeros((batch.grid_x * batch.grid_y, c), dtype=np.float64)
    skipped = _scatter_sequential(batch.ix, batch.iy, batch.features, grid2d,
                                  batch.grid_x, batch.grid_y)
    return BevGrid(grid2d.reshape(batch.grid_x, batch.grid_y, c)), int(skipped)


def pool_v2(batch: PointFeatureBatch, workers: int = 1, mode: str = "deterministic"):
    """Block-staged pooling. Returns (BevGrid, skipped_count).

    mode="deterministic" is bit-identical to pool_v1 for any worker count;
    mode="atomic" matches it up to float reordering (used for benchmarks).
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if mode not in ("deterministic", "atomic"):
        raise ValueError(f"unknown mode: {mode!r}")
    c = batch.features.shape[1]
    n_rows = batch.grid_x * batch.grid_y
    skipped = _skip_count(batch)

    if mode == "deterministic":
        grid2d = np.zeros((n_rows, c), dtype=np.float64)
        if workers == 1:
            _scatter_stripe(batch.ix, batch.iy, batch.features, grid2d,
                            batch.grid_x, batch.grid_y, 0, 1)
        else:
            # Stripes write disjoint rows, so a single shared grid is safe.
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(_scatter_stripe, batch.ix, batch.iy, batch.features,
                                grid2d, batch.grid_x, batch.grid_y, s, workers)
                    for s in range(workers)
                ]
                for f in futures:
                    f.result()
    else:
        partials = [np.zeros((n_rows, c), dtype=np.float64) for _ in range(workers)]
        if workers == 1:
            _scatter_blocks(batch.ix, batch.iy, batch.features, partials[0],
                            batch.grid_x, batch.grid_y, 0, 1)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(_scatter_blocks, batch.ix, batch.iy, batch.features,
                                partials[w], batch.grid_x, batch.grid_y, w, workers)
                    for w in range(workers)
                ]
                for f in futures:
                    f.result()
        grid2d = partials[0]
        for part in partials[1:]:  # fixed reduction order keeps runs reproducible
            grid2d += part

    return BevGrid(grid2d.reshape(batch.grid_x, batch.grid_y, c)), skipped


def make_batch(n: int, x_dim: int, y_dim: int, c: int, seed: int = 0,
               oob_frac: float = 0.0) -> PointFeatureBatch:
    """Seeded random batch; oob_frac of the points land outside the grid."""
    rng = np.random.default_rng(seed)
    ix = rng.integers(0, x_dim, size=n)
    iy = rng.integers(0, y_dim, size=n)
    if oob_frac > 0:
        oob = rng.random(n) < oob_frac
        ix = np.where(oob, x_dim + rng.integers(0, 5, size=n), ix)
    feats = rng.standard_normal((n, c), dtype=np.float32)
    return PointFeatureBatch(ix=ix, iy=iy, features=feats, grid_x=x_dim, grid_y=y_dim)


def bench_pool(n: int, x_dim: int, y_dim: int, c: int, workers: int = 1,
               repeats: int = 3, seed: int = 0) -> dict:
    """Time pool_v1 against pool_v2 (atomic mode) on one seeded batch.

    Returns a report with one row per variant carrying the median latency
    in ms, plus the v1/v2 speedup ratio on the v2 row.
    """
    if min(n, x_dim, y_dim, c, repeats) <= 0:
        raise ValueError("all benchmark sizes must be positive")
    batch = make_batch(n, x_dim, y_dim, c, seed=seed)

    def timed(fn):
        fn()  # warmup (also triggers JIT compilation)
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            samples.append((time.perf_counter() - t0) * 1000.0)
        return float(np.median(samples))

    v1_ms = timed(lambda: pool_v1(batch))
    v2_ms = timed(lambda: pool_v2(batch, workers=workers, mode="atomic"))
    speedup = v1_ms / v2_ms if v2_ms > 0 else float("inf")
    base = {"N": n, "X": x_dim, "Y": y_dim, "C": c, "workers": workers}
    return {
        "rows": [
            {"variant": "v1", **base, "median_ms": v1_ms, "speedup": 1.0},
            {"variant": "v2_atomic", **base, "median_ms": v2_ms, "speedup": speedup},
        ],
        "speedup": speedup,
    }
