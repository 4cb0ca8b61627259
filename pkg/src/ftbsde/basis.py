"""Hermite-chaos realization of the adapted basis ``h_{ki}`` and the simple processes ``e_{ki}``.

On block ``k`` the basis functions are normalized products of probabilists' Hermite
polynomials in the normalized increments ``(w(t_{j+1}) - w(t_j)) / sqrt(Delta)``, ``j < k``
(plus an independent time-0 coordinate when the filtration is enlarged), truncated at a
total degree ``d``. Slot order inside a multi-index: enlargement slot first, then increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np

from .grid import DyadicGrid
from .polynomial import XI, GaussianPolynomial, hermite_product_poly


@dataclass(frozen=True)
class MultiIndex:
    degrees: tuple[int, ...]

    @property
    def total_degree(self) -> int:
        return sum(self.degrees)

    @property
    def num_slots(self) -> int:
        return len(self.degrees)

    def padded(self, num_slots: int) -> "MultiIndex":
        if num_slots < len(self.degrees):
            raise ValueError("cannot pad a multi-index to fewer slots")
        return MultiIndex(self.degrees + (0,) * (num_slots - len(self.degrees)))


def slot_variable(slot: int, enlargement: bool) -> int:
    """Coordinate id carried by a multi-index slot."""
    if enlargement:
        return XI if slot == 0 else slot - 1
    return slot


@dataclass(frozen=True)
class ChaosBasisFunction:
    """``c * prod_j He_{m_j}(coord_j)`` with ``||h||_{L2(Omega)} = sqrt(2**N / T)``."""

    block: int
    index: MultiIndex
    grid: DyadicGrid
    enlargement: bool = False

    @cached_property
    def normalization(self) -> float:
        fact = math.prod(math.factorial(m) for m in self.index.degrees)
        return math.sqrt(2**self.grid.level / self.grid.horizon) / math.sqrt(fact)

    @cached_property
    def factors(self) -> tuple[tuple[int, int], ...]:
        """Nonzero ``(slot, degree)`` pairs."""
        return tuple((s, m) for s, m in enumerate(self.index.degrees) if m)

    @cached_property
    def key(self) -> tuple[tuple[int, int], ...]:
        """Nonzero ``(variable, degree)`` pairs sorted by variable id."""
        return tuple(sorted((slot_variable(s, self.enlargement), m) for s, m in self.factors))

    def evaluate(self, coords: Sequence) -> float | np.ndarray:
        """Value on normalized coordinates given in slot order (scalars or arrays over paths)."""
        out = self.normalization
        for s, m in self.factors:
            if s >= len(coords):
                raise ValueError(
                    f"basis function of block {self.block} needs coordinate slot {s}, "
                    f"only {len(coords)} supplied"
                )
            out = out * hermite_eval(m, coords[s])
        return out

    def to_polynomial(self) -> GaussianPolynomial:
        return hermite_product_poly(self.key, self.normalization)

    def dump(self, i: int) -> str:
        degs = ",".join(str(m) for m in self.index.degrees)
        return f"k={self.block} i={i} degrees=[{degs}] c={self.normalization!r}"


@dataclass(frozen=True)
class SimpleProcessBasisElement:
    """``chi_{[t_k, t_{k+1})}(t) h(omega)``; the last block is closed at ``T``."""

    block: int
    h: ChaosBasisFunction

    @property
    def grid(self) -> DyadicGrid:
        return self.h.grid

    def in_support(self, t: float) -> bool:
        g = self.grid
        if not 0.0 <= t <= g.horizon:
            raise ValueError(f"t={t!r} outside [0, {g.horizon}]")
        return g.block_of(t) == self.block

    def evaluate(self, t: float, coords: Sequence):
        if not self.in_support(t):
            return 0.0
        return self.h.evaluate(coords)


def hermite_eval(n: int, x):
    """Probabilists' Hermite ``He_n(x)`` by the three-term recurrence; ``x`` may be an array."""
    if n < 0:
        raise ValueError("Hermite degree must be nonnegative")
    prev, cur = 0.0 * x, 1.0 + 0.0 * x
    for k in range(n):
        prev, cur = cur, x * cur - k * prev
    return cur


def hermite_values(coords: Sequence[np.ndarray], max_degree: int) -> list[list[np.ndarray]]:
    """``table[s][m] = He_m(coords[s])`` for every slot and ``m <= max_degree``."""
    table = []
    for x in coords:
        row = [np.ones_like(x, dtype=float)]
        if max_degree >= 1:
            row.append(np.asarray(x, dtype=float))
        for k in range(1, max_degree):
            row.append(x * row[k] - k * row[k - 1])
        table.append(row)
    return table


def _multi_indices(num_slots: int, max_degree: int) -> list[tuple[int, ...]]:
    out = []
    for total in range(max_degree + 1):
        level = []
        for combo in combinations_with_replacement(range(num_slots), total):
            degs = [0] * num_slots
            for s in combo:
                degs[s] += 1
            level.append(tuple(degs))
        level.sort(reverse=True)
        out.extend(level)
    return out


def block_basis_size(k: int, d: int, enlargement: bool = False) -> int:
    q = 1 if enlargement else 0
    return math.comb(k + q + d, d)


def enumerate_block_basis(
    k: int, d: int, enlargement: bool = False, *, grid: DyadicGrid
) -> list[ChaosBasisFunction]:
    """All ``h_{ki}`` of block ``k``: degree ascending, then reverse lexicographic."""
    if k < 0 or d < 0:
        raise ValueError("block index and degree must be nonnegative")
    slots = k + (1 if enlargement else 0)
    return [
        ChaosBasisFunction(k, MultiIndex(degs), grid, enlargement)
        for degs in _multi_indices(slots, d)
    ]


@dataclass(frozen=True)
class FiniteElementSpace:
    """The span ``H_N`` of all ``e_{ki}``, ``k < 2**N``, ``i = 1..M_{k,N}``."""

    grid: DyadicGrid
    degree: int
    enlargement: bool = False
    blocks: tuple[tuple[ChaosBasisFunction, ...], ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        blocks = tuple(
            tuple(enumerate_block_basis(k, self.degree, self.enlargement, grid=self.grid))
            for k in range(self.grid.num_blocks)
        )
        object.__setattr__(self, "blocks", blocks)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([len(b) for b in self.blocks])]).astype(int)

    def __len__(self) -> int:
        return int(self.offsets[-1])

    def block_size(self, k: int) -> int:
        return len(self.blocks[k])

    @property
    def elements(self) -> list[SimpleProcessBasisElement]:
        return [SimpleProcessBasisElement(k, h) for k, blk in enumerate(self.blocks) for h in blk]

    def labels(self) -> list[tuple[int, int]]:
        """Canonical ``(k, i)`` labels, ``i`` 1-based."""
        return [(k, i + 1) for k, blk in enumerate(self.blocks) for i in range(len(blk))]

    def flat_index(self, k: int, i: int) -> int:
        if not 1 <= i <= self.block_size(k):
            raise KeyError((k, i))
        return int(self.offsets[k]) + i - 1

    def find(self, k: int, degrees: Sequence[int]) -> int:
        """1-based position of the block-``k`` function with the given (zero-padded) degrees."""
        slots = k + (1 if self.enlargement else 0)
        degs = tuple(degrees) + (0,) * (slots - len(degrees))
        for i, h in enumerate(self.blocks[k]):
            if h.index.degrees == degs:
                return i + 1
        raise KeyError((k, degs))

    def dump(self) -> str:
        lines = []
        for k, blk in enumerate(self.blocks):
            lines.extend(h.dump(i + 1) for i, h in enumerate(blk))
        return "\n".join(lines) + "\n"


def eval_h(h: ChaosBasisFunction, coords: Sequence):
    return h.evaluate(coords)


def eval_e(e: SimpleProcessBasisElement, t: float, coords: Sequence):
    return e.evaluate(t, coords)


def gram_matrix(space: FiniteElementSpace, engine) -> tuple[np.ndarray, np.ndarray]:
    """``E int_0^T e_a e_b dtau`` over all element pairs, with standard errors.

    Elements of different blocks have disjoint time supports, so only the diagonal blocks
    need expectations: ``Delta * E[h_a h_b]``.
    """
    n = len(space)
    gram, se = np.zeros((n, n)), np.zeros((n, n))
    delta = space.grid.block_width
    for k, blk in enumerate(space.blocks):
        o = int(space.offsets[k])
        for a, row, row_se in engine.gram_rows(blk):
            gram[o + a, o : o + len(blk)] = delta * row
            se[o + a, o : o + len(blk)] = delta * row_se
    return gram, se


def gram_identity_defect(space: FiniteElementSpace, engine) -> float:
    """``max |G - I|`` streamed block by block (never materializes the full matrix)."""
    worst = 0.0
    delta = space.grid.block_width
    for blk in space.blocks:
        for a, row, _ in engine.gram_rows(blk):
            dev = delta * row
            dev[a] -= 1.0
            worst = max(worst, float(np.max(np.abs(dev))))
    return worst
