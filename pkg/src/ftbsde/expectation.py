"""Expectation engines: Monte Carlo over a path batch and exact Gaussian-moment algebra.

Both engines expose the same surface (``source``, ``expect``, ``project``, ``gram_rows``) so
every formula of the solver is written once and evaluated by either engine. Values handed
to the Monte Carlo engine are arrays over paths; values handed to the exact engine are
``GaussianPolynomial`` objects.
"""

from __future__ import annotations

import math
from collections import defaultdict
from functools import lru_cache
from itertools import product
from typing import Iterator, Sequence

import numpy as np

from .basis import ChaosBasisFunction, hermite_values
from .grid import DyadicGrid
from .polynomial import BRIDGE, XI, GaussianPolynomial, hermite_coefficients, hermite_poly
from .sampling import PathBatch


class UnsupportedDataError(TypeError):
    """The exact engine was handed data that is not a Gaussian polynomial."""


class NonFiniteSampleError(ValueError):
    pass


# -- exact Gaussian moment algebra ----------------------------------------------------------

@lru_cache(maxsize=None)
def gaussian_moment(n: int) -> float:
    """``E[x**n]`` for a standard Gaussian: ``(n-1)!!`` for even ``n``, 0 for odd."""
    if n % 2:
        return 0.0
    return float(math.prod(range(n - 1, 0, -2)))


def _mono_moment(mono) -> float:
    out = 1.0
    for _, p in mono:
        if p % 2:
            return 0.0
        out *= gaussian_moment(p)
    return out


def exact_expect(p: GaussianPolynomial) -> float:
    """Exact expectation; coordinates are independent so each monomial factorizes."""
    if not isinstance(p, GaussianPolynomial):
        raise UnsupportedDataError(f"exact engine needs a GaussianPolynomial, got {type(p).__name__}")
    return math.fsum(c * _mono_moment(m) for m, c in p.terms.items())


def _odd_signature(mono) -> tuple[int, ...]:
    return tuple(v for v, p in mono if p % 2)


def expect_product(p: GaussianPolynomial, q: GaussianPolynomial) -> float:
    """``E[p q]`` without forming the product.

    A pair of monomials contributes only when the product has every power even, i.e. when
    both have the same set of odd-power variables; grouping by that set keeps it sparse.
    """
    for x in (p, q):
        if not isinstance(x, GaussianPolynomial):
            raise UnsupportedDataError(f"exact engine needs a GaussianPolynomial, got {type(x).__name__}")
    groups: dict[tuple, list] = defaultdict(list)
    for m, c in q.terms.items():
        groups[_odd_signature(m)].append((dict(m), c))
    acc = []
    for ma, ca in p.terms.items():
        da = dict(ma)
        for mb, cb in groups.get(_odd_signature(ma), ()):
            mom = 1.0
            for v in da.keys() | mb.keys():
                mom *= gaussian_moment(da.get(v, 0) + mb.get(v, 0))
            acc.append(ca * cb * mom)
    return math.fsum(acc)


@lru_cache(maxsize=None)
def hermite_moment(m: int, n: int) -> float:
    """``E[He_m(x) x**n]`` from the monomial expansion of ``He_m``."""
    return float(sum(c * gaussian_moment(j + n) for j, c in enumerate(hermite_coefficients(m))))


@lru_cache(maxsize=None)
def hermite_product_moment(p: int, q: int) -> float:
    """``E[He_p(x) He_q(x)]`` evaluated as the expectation of the product polynomial."""
    return exact_expect(hermite_poly(p, 0) * hermite_poly(q, 0))


def hermite_table(p: GaussianPolynomial, max_degree: int) -> dict[tuple, float]:
    """``E[prod_v He_{m_v}(x_v) * p]`` for every multi-index of total degree ``<= max_degree``.

    Keys are sorted ``(variable, degree)`` tuples with zero degrees dropped; absent keys have
    expectation zero (a variable with ``m_v > 0`` absent from a monomial has ``E[He_m] = 0``).
    """
    out: dict[tuple, float] = defaultdict(float)
    for mono, a in p.terms.items():
        options = []
        for v, n in mono:
            opts = [(m, hermite_moment(m, n)) for m in range(0, n + 1)]
            options.append([(v, m, t) for m, t in opts if t != 0.0])
        for combo in product(*options):
            deg = sum(m for _, m, _ in combo)
            if deg > max_degree:
                continue
            val = a
            for _, _, t in combo:
                val *= t
            out[tuple((v, m) for v, m, _ in combo if m)] += val
    return dict(out)


def poly_mul(p: GaussianPolynomial, q: GaussianPolynomial) -> GaussianPolynomial:
    return p * q


def chaos_to_poly(h: ChaosBasisFunction) -> GaussianPolynomial:
    return h.to_polynomial()


def exp(x):
    """Elementwise exponential of pathwise data; polynomial data is rejected."""
    if isinstance(x, GaussianPolynomial):
        raise UnsupportedDataError("exp of a Gaussian polynomial is not a polynomial; use the Monte Carlo engine")
    return np.exp(x)


# -- Monte Carlo primitives -----------------------------------------------------------------

def pairwise_sum(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Binary-tree sum along ``axis`` in fixed index order (zero-padded to a power of two)."""
    x = np.moveaxis(np.asarray(x, dtype=float), axis, -1)
    n = x.shape[-1]
    if n == 0:
        return np.zeros(x.shape[:-1])
    size = 1 << (n - 1).bit_length()
    if size != n:
        pad = np.zeros(x.shape[:-1] + (size - n,))
        x = np.concatenate([x, pad], axis=-1)
    while x.shape[-1] > 1:
        half = x.shape[-1] // 2
        x = x[..., :half] + x[..., half:]
    return x[..., 0]


def _mean_stderr(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise mean and standard error of an ``(..., S)`` array."""
    s = samples.shape[-1]
    first = samples[..., :1]
    const = np.all(samples == first, axis=-1)
    mean = pairwise_sum(samples) / s
    if s > 1:
        dev = samples - mean[..., None]
        var = pairwise_sum(dev * dev) / (s - 1)
        se = np.sqrt(var / s)
    else:
        se = np.zeros_like(mean)
    # identical samples: report the common value itself with zero uncertainty
    mean = np.where(const, first[..., 0], mean)
    se = np.where(const, 0.0, se)
    return mean, se


def _check_finite(samples: np.ndarray) -> None:
    bad = ~np.isfinite(samples)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise NonFiniteSampleError(f"non-finite pathwise value at path index {int(idx[-1])}")


def mc_expect(values: np.ndarray) -> tuple[float, float]:
    """Sample mean and standard error (sample std / sqrt(S))."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("mc_expect needs a nonempty 1-d array of pathwise values")
    _check_finite(values)
    mean, se = _mean_stderr(values)
    return float(mean), float(se)


def _lift_poly(value) -> GaussianPolynomial:
    if isinstance(value, GaussianPolynomial):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return GaussianPolynomial.constant(float(value))
    raise UnsupportedDataError(f"exact engine cannot represent {type(value).__name__} data")


BASIS_CACHE_BYTES = 1 << 29


def basis_matrix(batch: PathBatch, functions: Sequence[ChaosBasisFunction]) -> np.ndarray:
    """``(len(functions), S)`` pathwise basis values, cached on the batch within a byte budget."""
    if not functions:
        return np.empty((0, batch.count))
    grid, enl = functions[0].grid, functions[0].enlargement
    key = (grid.level, grid.horizon, enl, tuple(h.index.degrees for h in functions))
    cache = batch.basis_cache
    hit = cache.get(key)
    if hit is not None:
        return hit
    coords = batch.coords(grid, enl)
    dmax = max(h.index.total_degree for h in functions)
    need = max(h.index.num_slots for h in functions)
    table = hermite_values(coords[:need], dmax)
    out = np.empty((len(functions), batch.count))
    for i, h in enumerate(functions):
        row = np.full(batch.count, h.normalization)
        for s, m in h.factors:
            row = row * table[s][m]
        out[i] = row
    used = sum(a.nbytes for a in cache.values())
    if used + out.nbytes <= BASIS_CACHE_BYTES:
        out.setflags(write=False)
        cache[key] = out
    return out


# -- symbolic evaluation source -------------------------------------------------------------

class SymbolicSource:
    """Evaluation source whose data are polynomials in the normalized grid increments.

    ``bridge_time`` adds one off-grid time ``tau``: ``w(tau) = w(t_k) + sqrt(tau - t_k) * zeta``
    with ``zeta`` an extra independent coordinate.
    """

    def __init__(self, grid: DyadicGrid, enlargement: bool = False, bridge_time: float | None = None):
        self.grid = grid
        self.enlargement = enlargement
        self.bridge_time = bridge_time
        self._w_cache: dict[int, GaussianPolynomial] = {}

    def with_bridge(self, tau: float) -> "SymbolicSource":
        return SymbolicSource(self.grid, self.enlargement, tau)

    def _w_grid(self, ell: int) -> GaussianPolynomial:
        p = self._w_cache.get(ell)
        if p is None:
            s = math.sqrt(self.grid.block_width)
            p = GaussianPolynomial.linear({j: s for j in range(ell)})
            self._w_cache[ell] = p
        return p

    def w(self, t: float) -> GaussianPolynomial:
        if self.bridge_time is not None and t == self.bridge_time:
            k = self.grid.block_of(t)
            lag = t - self.grid.time(k)
            base = self._w_grid(k)
            return base + GaussianPolynomial.variable(BRIDGE, math.sqrt(lag)) if lag > 0 else base
        return self._w_grid(self.grid.index_of(t))

    @property
    def xi(self) -> GaussianPolynomial:
        if not self.enlargement:
            raise ValueError("source has no enlargement coordinate")
        return GaussianPolynomial.variable(XI)

    def coords(self, grid: DyadicGrid, enlargement: bool) -> list[GaussianPolynomial]:
        if not self.grid.contains(grid):
            raise ValueError(f"source at level {self.grid.level} cannot resolve level {grid.level}")
        r = 2 ** (self.grid.level - grid.level)
        if r == 1:
            cs = [GaussianPolynomial.variable(j) for j in range(grid.num_blocks)]
        else:
            a = 1.0 / math.sqrt(r)
            cs = [GaussianPolynomial.linear({i: a for i in range(j * r, (j + 1) * r)}) for j in range(grid.num_blocks)]
        if enlargement:
            return [self.xi, *cs]
        return cs

    def lift(self, value) -> GaussianPolynomial:
        return _lift_poly(value)


# -- engines --------------------------------------------------------------------------------

class ExactEngine:
    """Exact expectations of polynomial data; standard errors are identically zero."""

    name = "exact"

    def __init__(self):
        self._table_for: GaussianPolynomial | None = None
        self._table: dict = {}
        self._table_degree = -1

    def source(self, grid: DyadicGrid, enlargement: bool = False) -> SymbolicSource:
        return SymbolicSource(grid, enlargement)

    def lift(self, value) -> GaussianPolynomial:
        return _lift_poly(value)

    def expect(self, value) -> tuple[float, float]:
        return exact_expect(self.lift(value)), 0.0

    def expect_product(self, a, b) -> tuple[float, float]:
        return expect_product(self.lift(a), self.lift(b)), 0.0

    def project(self, value, functions: Sequence[ChaosBasisFunction], src=None) -> tuple[np.ndarray, np.ndarray]:
        """``E[h * value]`` for each ``h``; ``value`` must live in the functions' own coordinates."""
        if src is not None and functions and src.grid.level != functions[0].grid.level:
            raise ValueError("exact projection needs the source at the basis level")
        p = self.lift(value)
        dmax = max((h.index.total_degree for h in functions), default=0)
        if p is not self._table_for or dmax > self._table_degree:
            self._table = hermite_table(p, dmax)
            self._table_for, self._table_degree = p, dmax
        out = np.array([h.normalization * self._table.get(h.key, 0.0) for h in functions])
        return out, np.zeros(len(functions))

    def gram_rows(self, functions: Sequence[ChaosBasisFunction]) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        """Rows of ``E[h_a h_b]``, factorized over independent coordinates.

        Each factor ``E[He_p(x) He_q(x)]`` comes from the moment algebra. A row is built by
        enumerating only the partner multi-indices whose every per-coordinate factor is
        nonzero; all other entries contain an exactly vanishing factor.
        """
        n = len(functions)
        if n == 0:
            return
        slots = max(h.index.num_slots for h in functions)
        dmax = max(h.index.total_degree for h in functions)
        mm = np.array([[hermite_product_moment(p, q) for q in range(dmax + 1)] for p in range(dmax + 1)])
        partners = [[q for q in range(dmax + 1) if mm[p, q] != 0.0] for p in range(dmax + 1)]
        position = {h.index.padded(slots).degrees: j for j, h in enumerate(functions)}
        c = np.array([h.normalization for h in functions])
        zeros = np.zeros(n)

        def expand(degs, s, budget, value, prefix):
            if s == slots:
                yield tuple(prefix), value
                return
            for q in partners[degs[s]]:
                if q <= budget:
                    prefix.append(q)
                    yield from expand(degs, s + 1, budget - q, value * mm[degs[s], q], prefix)
                    prefix.pop()

        for a, h in enumerate(functions):
            row = np.zeros(n)
            for degs, value in expand(h.index.padded(slots).degrees, 0, dmax, 1.0, []):
                b = position.get(degs)
                if b is not None:
                    row[b] = c[a] * c[b] * value
            yield a, row, zeros

    def describe(self) -> dict:
        return {"engine": "exact"}


class MonteCarloEngine:
    """Sample means over a fixed path batch with deterministic pairwise reduction."""

    name = "mc"

    def __init__(self, batch: PathBatch, row_chunk: int = 64):
        self.batch = batch
        self.row_chunk = row_chunk

    def source(self, grid: DyadicGrid, enlargement: bool = False) -> PathBatch:
        if not self.batch.grid.contains(grid):
            raise ValueError(
                f"path batch at level {self.batch.grid.level} is coarser than the level-{grid.level} grid"
            )
        if enlargement and not self.batch.enlargement:
            raise ValueError("problem needs the enlargement variable but the batch has none")
        return self.batch

    def lift(self, value) -> np.ndarray:
        if isinstance(value, GaussianPolynomial):
            raise UnsupportedDataError("Monte Carlo engine needs pathwise arrays, got a polynomial")
        return self.batch.lift(value)

    def expect(self, value) -> tuple[float, float]:
        return mc_expect(self.lift(value))

    def expect_product(self, a, b) -> tuple[float, float]:
        return mc_expect(self.lift(a) * self.lift(b))

    def basis_values(self, functions: Sequence[ChaosBasisFunction]) -> np.ndarray:
        return basis_matrix(self.batch, functions)

    def project(self, value, functions: Sequence[ChaosBasisFunction], src=None) -> tuple[np.ndarray, np.ndarray]:
        x = self.lift(value)
        _check_finite(x)
        n = len(functions)
        means, ses = np.empty(n), np.empty(n)
        h = basis_matrix(self.batch, functions)
        for start in range(0, n, self.row_chunk):
            samples = h[start : start + self.row_chunk] * x[None, :]
            means[start : start + len(samples)], ses[start : start + len(samples)] = _mean_stderr(samples)
        return means, ses

    def gram_rows(self, functions: Sequence[ChaosBasisFunction]) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        if not functions:
            return
        h = self.basis_values(functions)
        for a in range(len(functions)):
            mean, se = _mean_stderr(h[a][None, :] * h)
            yield a, mean, se

    def describe(self) -> dict:
        return {
            "engine": "mc",
            "samples": self.batch.count,
            "seed": self.batch.seed,
            "batch_level": self.batch.grid.level,
        }
