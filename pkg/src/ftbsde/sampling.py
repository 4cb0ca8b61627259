"""Brownian path batches on a dyadic grid, reproducible per path."""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from . import rng
from .grid import DyadicGrid

# rows per generation task; fixed so chunking never depends on the thread count
CHUNK = 4096


@dataclass(frozen=True, eq=False)
class PathBatch:
    """``S`` Brownian paths sampled at the times of ``grid``.

    The path values ``w(t_l)`` are the primary data; increments are their differences.
    Acts as an evaluation source: problem data written against ``w``/``xi`` evaluate to
    arrays over paths.
    """

    grid: DyadicGrid
    values: np.ndarray  # S x (2**N + 1), values[:, 0] == 0
    seed: int
    enlargement_values: np.ndarray | None = None
    _increments: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def enlargement(self) -> bool:
        return self.enlargement_values is not None

    @cached_property
    def increments(self) -> np.ndarray:
        if self._increments is not None:
            return self._increments
        return np.diff(self.values, axis=1)

    @cached_property
    def normalized_coords(self) -> np.ndarray:
        return self.increments / np.sqrt(self.grid.block_width)

    # -- source protocol -----------------------------------------------------------------
    def w(self, t: float) -> np.ndarray:
        return self.values[:, self.grid.index_of(t)]

    @property
    def xi(self) -> np.ndarray:
        if self.enlargement_values is None:
            raise ValueError("path batch was sampled without the enlargement variable")
        return self.enlargement_values

    def coords(self, grid: DyadicGrid, enlargement: bool) -> list[np.ndarray]:
        """Normalized coordinates at the (coarser or equal) level of ``grid``, slot order."""
        if not self.grid.contains(grid):
            raise ValueError(f"batch at level {self.grid.level} cannot resolve level {grid.level}")
        cached = self._coords_cache.get(grid.level)
        if cached is None:
            r = 2 ** (self.grid.level - grid.level)
            coarse = np.diff(self.values[:, ::r], axis=1) / np.sqrt(grid.block_width)
            cached = [coarse[:, j] for j in range(coarse.shape[1])]
            self._coords_cache[grid.level] = cached
        if enlargement:
            return [self.xi, *cached]
        return list(cached)

    @cached_property
    def _coords_cache(self) -> dict:
        return {}

    @cached_property
    def basis_cache(self) -> dict:
        """Pathwise basis matrices keyed by level and index set (filled by the MC engine)."""
        return {}

    def lift(self, value) -> np.ndarray:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            return np.full(self.count, float(arr))
        if arr.shape != (self.count,):
            raise ValueError(f"pathwise value has shape {arr.shape}, expected ({self.count},)")
        return arr

    def subset(self, paths) -> "PathBatch":
        paths = np.asarray(paths)
        enl = None if self.enlargement_values is None else self.enlargement_values[paths]
        return PathBatch(self.grid, self.values[paths], self.seed, enl)


def _generate(grid: DyadicGrid, paths: np.ndarray, seed: int, enlargement: bool):
    z = rng.gaussian_block(seed, rng.STREAM_INCREMENTS, paths, grid.num_blocks)
    inc = z * np.sqrt(grid.block_width)
    xi = rng.gaussian_block(seed, rng.STREAM_ENLARGEMENT, paths, 1)[:, 0] if enlargement else None
    return inc, xi


def sample_paths(
    grid: DyadicGrid, count: int, seed: int, enlargement: bool = False, threads: int = 1
) -> PathBatch:
    """Sample ``count`` paths; path ``p`` depends only on ``(seed, p)``."""
    if count < 1:
        raise ValueError("path count must be at least 1")
    inc = np.empty((count, grid.num_blocks))
    xi = np.empty(count) if enlargement else None

    def fill(start: int) -> None:
        stop = min(start + CHUNK, count)
        a, b = _generate(grid, np.arange(start, stop), seed, enlargement)
        inc[start:stop] = a
        if xi is not None:
            xi[start:stop] = b

    starts = range(0, count, CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, starts))
    else:
        for s in starts:
            fill(s)
    values = np.zeros((count, grid.num_blocks + 1))
    np.cumsum(inc, axis=1, out=values[:, 1:])
    return PathBatch(grid, values, int(seed), xi, inc)


def brownian_value(batch: PathBatch, path: int, t: float) -> float:
    return float(batch.values[path, batch.grid.index_of(t)])


def coarsen(batch: PathBatch, level: int) -> PathBatch:
    """The same paths seen on the level-``level`` grid; shared path values are kept exactly."""
    if level > batch.grid.level:
        raise ValueError(f"cannot coarsen level {batch.grid.level} to finer level {level}")
    if level < 0:
        raise ValueError("level must be nonnegative")
    if level == batch.grid.level:
        return batch
    r = 2 ** (batch.grid.level - level)
    return PathBatch(
        DyadicGrid(level, batch.grid.horizon),
        np.ascontiguousarray(batch.values[:, ::r]),
        batch.seed,
        batch.enlargement_values,
    )


def continue_paths(
    grid: DyadicGrid,
    prefix: np.ndarray,
    count: int,
    seed: int,
    xi: float | None = None,
) -> PathBatch:
    """``count`` paths sharing the given first increments, with fresh Gaussian continuations."""
    prefix = np.asarray(prefix, dtype=float)
    ell = prefix.size
    if ell > grid.num_blocks:
        raise ValueError("prefix longer than the grid")
    if count < 1:
        raise ValueError("path count must be at least 1")
    rest = grid.num_blocks - ell
    inc = np.empty((count, grid.num_blocks))
    inc[:, :ell] = prefix
    if rest:
        z = rng.gaussian_block(seed, rng.STREAM_NESTED, np.arange(count), rest)
        inc[:, ell:] = z * np.sqrt(grid.block_width)
    values = np.zeros((count, grid.num_blocks + 1))
    np.cumsum(inc, axis=1, out=values[:, 1:])
    enl = None if xi is None else np.full(count, float(xi))
    return PathBatch(grid, values, int(seed), enl, inc)


# -- path functionals ---------------------------------------------------------------------

@dataclass(frozen=True)
class PathFunctional:
    """A random variable (``arity`` 1: ``fn(src)``) or an adapted process (``arity`` 2: ``fn(src, t)``).

    ``measurable_at`` is the time whose sigma-field the value is measurable for (``None``
    for processes, which are adapted by construction).
    """

    fn: Callable
    measurable_at: float | None = None
    description: str = ""

    def __call__(self, src, *args):
        return self.fn(src, *args)


# -- debug dump ---------------------------------------------------------------------------

def dump_increments(batch: PathBatch, path: str | Path) -> None:
    """Header ``(level, count)`` as two little-endian uint32, then row-major float64 increments."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", batch.grid.level, batch.count))
        fh.write(np.ascontiguousarray(batch.increments, dtype="<f8").tobytes())


def load_increments(path: str | Path, horizon: float, seed: int = 0) -> PathBatch:
    raw = Path(path).read_bytes()
    level, count = struct.unpack("<II", raw[:8])
    grid = DyadicGrid(level, horizon)
    inc = np.frombuffer(raw[8:], dtype="<f8").reshape(count, grid.num_blocks).copy()
    values = np.zeros((count, grid.num_blocks + 1))
    np.cumsum(inc, axis=1, out=values[:, 1:])
    return PathBatch(grid, values, seed, None, inc)
