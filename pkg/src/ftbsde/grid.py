"""Dyadic partitions of [0, T] and the clipped-time weights used by the coefficient formulas."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DyadicGrid:
    """Level-``N`` partition ``t_l = l * T / 2**N`` of ``[0, T]``.

    Block ``k`` covers ``[t_k, t_{k+1})``; the last block is closed at ``T``.
    """

    level: int
    horizon: float

    def __post_init__(self) -> None:
        if int(self.level) != self.level or self.level < 0:
            raise ValueError(f"grid level must be a nonnegative integer, got {self.level!r}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon!r}")
        object.__setattr__(self, "level", int(self.level))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def num_blocks(self) -> int:
        return 2**self.level

    @property
    def block_width(self) -> float:
        return self.horizon / 2**self.level

    def time(self, ell: int) -> float:
        if not 0 <= ell <= self.num_blocks:
            raise ValueError(f"grid index {ell} outside 0..{self.num_blocks}")
        # exact product, never an accumulated sum
        return ell * self.horizon / 2**self.level

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.num_blocks + 1) * self.horizon / 2**self.level

    def index_of(self, t: float) -> int:
        """Grid index of ``t``; raises if ``t`` is not a grid time."""
        x = t * 2**self.level / self.horizon
        ell = int(round(x))
        if not 0 <= ell <= self.num_blocks or abs(x - ell) > 1e-9:
            raise ValueError(f"t={t!r} is not a time of the level-{self.level} grid")
        return ell

    def block_of(self, t: float) -> int:
        """Index ``k`` of the block containing ``t`` (``T`` belongs to the last block)."""
        if not 0.0 <= t <= self.horizon:
            raise ValueError(f"t={t!r} outside [0, {self.horizon}]")
        k = int(np.floor(t * 2**self.level / self.horizon))
        return min(k, self.num_blocks - 1)

    def contains(self, other: "DyadicGrid") -> bool:
        """True when every time of ``other`` is a time of this grid."""
        return self.horizon == other.horizon and self.level >= other.level

    def __repr__(self) -> str:
        return f"DyadicGrid(level={self.level}, horizon={self.horizon})"


def build_grid(level: int, horizon: float) -> DyadicGrid:
    return DyadicGrid(level, horizon)


def refine(grid: DyadicGrid) -> DyadicGrid:
    return DyadicGrid(grid.level + 1, grid.horizon)


def clip_weight(grid: DyadicGrid, k: int, tau: float) -> float:
    """``min(tau, t_{k+1}) - min(tau, t_k)``, the time spent in block ``k`` up to ``tau``."""
    if not 0 <= k < grid.num_blocks:
        raise ValueError(f"block index {k} outside 0..{grid.num_blocks - 1}")
    if not 0.0 <= tau <= grid.horizon:
        raise ValueError(f"tau={tau!r} outside [0, {grid.horizon}]")
    return min(tau, grid.time(k + 1)) - min(tau, grid.time(k))


def clip_weight_integral(grid: DyadicGrid, k: int, a: float, b: float) -> float:
    """Closed-form ``int_a^b clip_weight(grid, k, tau) dtau`` for ``0 <= a <= b <= T``.

    The weight is 0 before ``t_k``, ``tau - t_k`` inside block ``k`` and ``Delta`` after it.
    """
    if not 0.0 <= a <= b <= grid.horizon:
        raise ValueError(f"need 0 <= a <= b <= T, got a={a!r}, b={b!r}")
    lo, hi = grid.time(k), grid.time(k + 1)
    total = 0.0
    # ramp part on [lo, hi]
    ra, rb = max(a, lo), min(b, hi)
    if rb > ra:
        total += 0.5 * ((rb - lo) ** 2 - (ra - lo) ** 2)
    # saturated part on [hi, T]
    sa = max(a, hi)
    if b > sa:
        total += (b - sa) * (hi - lo)
    return total
