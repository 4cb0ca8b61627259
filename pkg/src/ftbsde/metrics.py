"""Error norms for the numerical pair and empirical convergence rates.

Errors are returned squared; square roots belong to presentation code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .expectation import ExactEngine, MonteCarloEngine, SymbolicSource, expect_product, mc_expect
from .oracles import ClosedFormSolution
from .sampling import PathBatch
from .solver import StepProcessSolution

GAUSS_NODES = 6


@dataclass(frozen=True)
class L2Error:
    y_error2: float
    Y_error2: float
    y_stderr: float
    Y_stderr: float

    def __iter__(self):
        return iter((self.y_error2, self.Y_error2, self.y_stderr, self.Y_stderr))


def _as_engine(target):
    if isinstance(target, PathBatch):
        return MonteCarloEngine(target)
    return target


def _check_level(solution: StepProcessSolution, batch: PathBatch) -> None:
    if not batch.grid.contains(solution.space.grid):
        raise ValueError(
            f"batch at level {batch.grid.level} (T={batch.grid.horizon}) cannot resolve a "
            f"level-{solution.space.grid.level} solution"
        )


def l2_error(solution: StepProcessSolution, oracle: ClosedFormSolution, target) -> L2Error:
    """``E int_0^T |y_N - y|^2`` and ``E int_0^T |Y_N - Y|^2``.

    ``target`` is a path batch / Monte Carlo engine (left-endpoint quadrature on the batch
    grid) or the exact engine (exact in time: Gauss-Legendre nodes inside each block, the
    oracle evaluated there through a Brownian-bridge coordinate).
    """
    engine = _as_engine(target)
    if isinstance(engine, ExactEngine):
        return _l2_exact(solution, oracle)
    batch = engine.batch
    _check_level(solution, batch)
    fine = batch.grid
    dt = fine.block_width
    ey = np.zeros(batch.count)
    eY = np.zeros(batch.count)
    for ell in range(fine.num_blocks):
        s = fine.time(ell)
        dy = solution.y.value(s, batch) - batch.lift(oracle.y(batch, s))
        dY = solution.Y.value(s, batch) - batch.lift(oracle.Y(batch, s))
        ey = ey + dt * dy * dy
        eY = eY + dt * dY * dY
    (my, sy), (mY, sY) = mc_expect(ey), mc_expect(eY)
    return L2Error(my, mY, sy, sY)


def _l2_exact(solution: StepProcessSolution, oracle: ClosedFormSolution) -> L2Error:
    space = solution.space
    grid = space.grid
    src = SymbolicSource(grid, space.enlargement)
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_NODES)
    ey, eY = [], []
    for k in range(grid.num_blocks):
        a, b = grid.time(k), grid.time(k + 1)
        yk = solution.y.block_value(k, src)
        Yk = solution.Y.block_value(k, src)
        for x, wgt in zip(nodes, weights):
            tau = float(a + (b - a) * (x + 1.0) / 2.0)
            bridged = src.with_bridge(tau)
            dy = yk - bridged.lift(oracle.y(bridged, tau))
            dY = Yk - bridged.lift(oracle.Y(bridged, tau))
            scale = 0.5 * (b - a) * wgt
            ey.append(scale * expect_product(dy, dy))
            eY.append(scale * expect_product(dY, dY))
    return L2Error(math.fsum(ey), math.fsum(eY), 0.0, 0.0)


def sup_error(solution: StepProcessSolution, oracle: ClosedFormSolution, target) -> tuple[float, float]:
    """``E[max_l |y_N(s_l) - y(s_l)|^2]`` over all times of the batch grid, with its standard error."""
    engine = _as_engine(target)
    if not isinstance(engine, MonteCarloEngine):
        raise ValueError("sup_error is a pathwise statistic; it needs a path batch")
    batch = engine.batch
    _check_level(solution, batch)
    fine = batch.grid
    worst = np.zeros(batch.count)
    for ell in range(fine.num_blocks + 1):
        s = fine.time(ell)
        d = solution.y.value(s, batch) - batch.lift(oracle.y(batch, s))
        worst = np.maximum(worst, d * d)
    return mc_expect(worst)


def rate_fit(errors) -> float:
    """Least-squares slope of ``log2(error^2)`` against the level ``N``."""
    pts = [(float(n), float(e)) for n, e in errors]
    if len(pts) < 3:
        raise ValueError("rate_fit needs at least three levels")
    if any(e <= 0 for _, e in pts):
        raise ValueError("errors must be positive to take logarithms")
    n = np.array([p[0] for p in pts])
    e = np.log2([p[1] for p in pts])
    slope, _ = np.polyfit(n, e, 1)
    return float(slope)
