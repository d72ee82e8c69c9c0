"""In-process chunked map-reduce, caching and seeded sampling.

Chunks of an immutable table are mapped on a thread pool; the per-chunk
accumulators are then folded by the caller thread in ascending chunk order,
so the result never depends on scheduling.

Sums of probabilities go through the fixed-point helpers, which accumulate
scores in [0, 1] as exact integers (four 26-bit limbs, i.e. a 2**-104 grid). Integer
addition is associative, so chunk size and worker count cannot change a
single bit of any aggregate, and the final float is the correctly rounded
exact sum.
"""
from __future__ import annotations

import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

import numpy as np

from .dataset_io import JoinedView
from .errors import OutOfMemoryBudget

log = logging.getLogger(__name__)

A = TypeVar("A")

DEFAULT_CHUNK_ROWS = 262_144

LIMB_BITS = 26
N_LIMBS = 4
SCALE_BITS = LIMB_BITS * N_LIMBS


# --- exact accumulation -------------------------------------------------------

def fixed_point_limbs(values: np.ndarray) -> list[np.ndarray]:
    """Split values in [0, 1] into integer-valued float limbs, most significant first.

    Every step (scaling by a power of two, floor, subtraction of the floor)
    is exact in binary floating point. Bits below 2**-104 are truncated.
    """
    t = np.asarray(values, dtype=np.float64)
    parts = []
    for _ in range(N_LIMBS):
        t = np.ldexp(t, LIMB_BITS)
        hi = np.floor(t)
        parts.append(hi)
        t = t - hi
    return parts


def grouped_fixed_sums(values: np.ndarray, keys: np.ndarray, n_keys: int) -> np.ndarray:
    """Per-key exact sums of `values` as an int64 array of shape (n_keys, N_LIMBS)."""
    out = np.empty((n_keys, N_LIMBS), dtype=np.int64)
    for j, limb in enumerate(fixed_point_limbs(values)):
        # limbs are < 2**27 and chunks far below 2**26 rows: float sums stay exact
        out[:, j] = np.bincount(keys, weights=limb, minlength=n_keys).astype(np.int64)
    return out


def limbs_to_int(limbs) -> int:
    """Exact integer numerator (denominator 2**104) of a limb vector."""
    total = 0
    for v in limbs:
        total = (total << LIMB_BITS) + int(v)
    return total


def fixed_to_float(numerator: int) -> float:
    return numerator / (1 << SCALE_BITS)


# --- chunk planning -------------------------------------------------------------

@dataclass(frozen=True)
class ChunkPlan:
    chunk_bounds: tuple[tuple[int, int], ...]
    worker_count: int = 1

    @property
    def chunk_count(self) -> int:
        return len(self.chunk_bounds)

    @property
    def row_count(self) -> int:
        return self.chunk_bounds[-1][1] if self.chunk_bounds else 0


def plan_chunks(row_count: int, worker_count: int = 1,
                target_chunk_rows: int = DEFAULT_CHUNK_ROWS) -> ChunkPlan:
    if row_count < 0:
        raise ValueError("row_count must be >= 0")
    if worker_count < 1 or target_chunk_rows < 1:
        raise ValueError("worker_count and target_chunk_rows must be >= 1")
    bounds = tuple((s, min(s + target_chunk_rows, row_count))
                   for s in range(0, row_count, target_chunk_rows))
    return ChunkPlan(bounds, worker_count)


def map_reduce(table, plan: ChunkPlan, map_fn: Callable[[object], A],
               combine_fn: Callable[[A, A], A], identity: A) -> A:
    """Fold ``map_fn(chunk)`` over the plan's chunks with `combine_fn`.

    `table` needs a ``slice(start, stop)`` method (ColumnarTable, JoinedView).
    The fold always runs left to right in chunk order starting from
    `identity`; if several chunks fail, the lowest-index failure is raised.
    """
    chunks = [table.slice(s, e) for s, e in plan.chunk_bounds]
    if plan.worker_count == 1 or len(chunks) <= 1:
        parts = [map_fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=min(plan.worker_count, len(chunks))) as pool:
            futures = [pool.submit(map_fn, c) for c in chunks]
            parts = [f.result() for f in futures]
    acc = identity
    for part in parts:
        acc = combine_fn(acc, part)
    return acc


# --- caching -------------------------------------------------------------------

class CachedHandle:
    """Holds one materialized view; reloads only after `invalidate()`."""

    def __init__(self, loader: Callable[[], JoinedView], budget_bytes: int | None = None):
        self._loader = loader
        self._budget = budget_bytes
        self._view = None
        self._lock = threading.Lock()
        self.load_count = 0

    def get(self) -> JoinedView:
        with self._lock:
            if self._view is None:
                view = self._loader()
                if self._budget is not None and view.nbytes > self._budget:
                    raise OutOfMemoryBudget(
                        f"view needs {view.nbytes} bytes, cache budget is {self._budget}")
                self._view = view
                self.load_count += 1
                log.debug("cached view: %d rows, %d bytes", view.row_count, view.nbytes)
            return self._view

    def invalidate(self) -> None:
        with self._lock:
            self._view = None

    @property
    def is_loaded(self) -> bool:
        return self._view is not None


# --- sampling ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SampledRows:
    """A single-system sample of (label, score, group) rows."""

    labels: np.ndarray | None
    scores: np.ndarray | None
    group_codes: np.ndarray
    groups: Sequence[tuple]
    indices: np.ndarray
    seed: int
    requested: int

    @property
    def actual(self) -> int:
        return len(self.indices)

    def __len__(self) -> int:
        return self.actual

    def __iter__(self):
        labels = self.labels if self.labels is not None else [None] * self.actual
        scores = self.scores if self.scores is not None else [None] * self.actual
        for y, s, g in zip(labels, scores, self.group_codes):
            yield (None if y is None else int(y), None if s is None else float(s),
                   self.groups[g])

    def restrict(self, keep: np.ndarray) -> "SampledRows":
        return SampledRows(
            None if self.labels is None else self.labels[keep],
            None if self.scores is None else self.scores[keep],
            self.group_codes[keep], self.groups, self.indices[keep], self.seed, self.requested)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFF_FFFF_FFFF_FFFF))


def sample_indices(row_count: int, n: int, seed: int) -> np.ndarray:
    """Sorted row indices of a uniform size-`n` subset (all rows if n >= row_count).

    Each row gets a uniform random key from a PCG64 stream seeded with `seed`;
    the `n` smallest keys win. Returned in original row order.
    """
    if n < 1:
        raise ValueError("sample size must be >= 1")
    if n >= row_count:
        return np.arange(row_count)
    keys = _rng(seed).random(row_count)
    return np.sort(np.argpartition(keys, n - 1)[:n])


def sample(view: JoinedView, n: int, seed: int, group_fields: Sequence[str] | None = None,
           rows: np.ndarray | None = None) -> SampledRows:
    """Seeded sample of `n` rows of `view` (or of the row subset `rows`)."""
    idx = sample_indices(view.row_count if rows is None else len(rows), n, seed)
    if rows is not None:
        idx = np.asarray(rows)[idx]
    codes, groups = view.group_index(group_fields)
    labels = view.labels[idx] if view.label_field else None
    scores = view.scores[idx] if view.score_field else None
    return SampledRows(labels, scores, codes[idx], groups, idx, seed, n)


# --- engine facade -------------------------------------------------------------

class Engine:
    """Bundles worker count, chunk size, cache budget and base seed."""

    def __init__(self, workers: int | None = None, chunk_rows: int = DEFAULT_CHUNK_ROWS,
                 cache_budget_bytes: int | None = None, seed: int = 0):
        self.workers = workers or os.cpu_count() or 1
        self.chunk_rows = chunk_rows
        self.cache_budget_bytes = cache_budget_bytes
        self.seed = seed

    def __repr__(self):
        return (f"Engine(workers={self.workers}, chunk_rows={self.chunk_rows}, "
                f"cache_budget_bytes={self.cache_budget_bytes}, seed={self.seed})")

    def plan(self, row_count: int) -> ChunkPlan:
        return plan_chunks(row_count, self.workers, self.chunk_rows)

    def map_reduce(self, table, map_fn, combine_fn, identity):
        return map_reduce(table, self.plan(table.row_count), map_fn, combine_fn, identity)

    def cache(self, source) -> CachedHandle:
        """Cache a view, or a zero-argument loader producing one.

        The view is materialized immediately so budget violations surface here.
        """
        loader = source if callable(source) else (lambda: source)
        handle = CachedHandle(loader, self.cache_budget_bytes)
        handle.get()
        return handle

    def sample(self, view: JoinedView, n: int, seed: int | None = None,
               group_fields=None, rows=None) -> SampledRows:
        return sample(view, n, self.seed if seed is None else seed, group_fields, rows)
