"""Closed-form benchmark solutions and independent projection computations.

Derivations (``w`` standard Brownian motion, ``xi`` independent of ``w`` and known at time 0):

bm            y_T = w(T), f = 0.  ``w`` is a martingale, so ``y(t) = E[w(T) | F_t] = w(t)`` and
              ``w(T) = w(t) + int_t^T 1 dw`` gives ``Y = 1``.
bm_squared    y_T = w(T)^2, f = 0.  Ito: ``d(w^2) = 2 w dw + dt``, so ``w(T)^2 = w(t)^2 + (T - t)
              + int_t^T 2 w dw``; hence ``y(t) = w(t)^2 + T - t`` and ``Y = 2 w``.
geometric     y_T = exp(w(T) - T/2), f = 0.  ``exp(w(t) - t/2)`` is the stochastic exponential,
              ``dy = y dw``: ``y(t) = exp(w(t) - t/2)``, ``Y = y``.
const_driver  y_T = 0, f = c.  Deterministic: ``y' = c``, ``y(T) = 0`` gives ``y(t) = -c (T - t)``, ``Y = 0``.
enlarged      y_T = xi w(T), f = 0, ``xi`` in ``F_0``.  ``E[xi w(T) | F_t] = xi w(t)`` and
              ``xi w(T) = xi w(t) + int_t^T xi dw``: ``y = xi w``, ``Y = xi``.
decay         y_T = 1, f(t, y, Y) = -y (Picard extension only).  ``y' = -y`` backwards from
              ``y(T) = 1``: ``y(t) = exp(T - t)``, ``Y = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .basis import FiniteElementSpace
from .expectation import SymbolicSource, exp, mc_expect
from .grid import DyadicGrid
from .rng import derive_seed
from .sampling import PathFunctional, continue_paths
from .solver import BSDEProblem, StepProcess, _project_blocks, alpha_integrands, beta_integrands


@dataclass(frozen=True)
class ClosedFormSolution:
    """Exact pair ``(y, Y)``; both rules take ``(src, t)``."""

    y: Callable
    Y: Callable
    note: str = ""


def _bm(horizon: float = 1.0):
    T = horizon
    problem = BSDEProblem(T, PathFunctional(lambda s: s.w(T), T, "w(T)"), name="bm")
    sol = ClosedFormSolution(lambda s, t: s.w(t), lambda s, t: 1.0, "martingale representation of w(T)")
    return problem, sol


def _bm_squared(horizon: float = 1.0):
    T = horizon
    problem = BSDEProblem(T, PathFunctional(lambda s: s.w(T) * s.w(T), T, "w(T)^2"), name="bm_squared")
    sol = ClosedFormSolution(
        lambda s, t: s.w(t) * s.w(t) + (T - t),
        lambda s, t: 2.0 * s.w(t),
        "Ito formula for w^2",
    )
    return problem, sol


def _geometric(horizon: float = 1.0):
    T = horizon
    problem = BSDEProblem(T, PathFunctional(lambda s: exp(s.w(T) - T / 2), T, "exp(w(T) - T/2)"), name="geometric")
    rule = lambda s, t: exp(s.w(t) - t / 2)  # noqa: E731
    return problem, ClosedFormSolution(rule, rule, "stochastic exponential")


def _const_driver(horizon: float = 1.0, c: float = 1.0):
    T = horizon
    problem = BSDEProblem(
        T,
        PathFunctional(lambda s: 0.0, 0.0, "0"),
        driver=PathFunctional(lambda s, t: c, description=f"f = {c}"),
        name="const_driver",
    )
    return problem, ClosedFormSolution(lambda s, t: -c * (T - t), lambda s, t: 0.0, "deterministic integration")


def _enlarged(horizon: float = 1.0):
    T = horizon
    problem = BSDEProblem(
        T, PathFunctional(lambda s: s.xi * s.w(T), T, "xi * w(T)"), enlargement=True, name="enlarged"
    )
    sol = ClosedFormSolution(lambda s, t: s.xi * s.w(t), lambda s, t: s.xi, "xi is F_0-measurable")
    return problem, sol


def _decay(horizon: float = 1.0):
    T = horizon
    problem = BSDEProblem(
        T,
        PathFunctional(lambda s: 1.0, 0.0, "1"),
        lipschitz_driver=lambda t, y, Y: -y,
        lipschitz_constant=1.0,
        name="decay",
    )
    sol = ClosedFormSolution(lambda s, t: math.exp(T - t), lambda s, t: 0.0, "scalar linear ODE")
    return problem, sol


REGISTRY: dict[str, tuple[Callable, str]] = {
    "bm": (_bm, "y_T = w(T), f = 0; y = w, Y = 1"),
    "bm_squared": (_bm_squared, "y_T = w(T)^2, f = 0; y = w^2 + T - t, Y = 2w"),
    "geometric": (_geometric, "y_T = exp(w(T) - T/2), f = 0; y = Y = exp(w - t/2); Monte Carlo only"),
    "const_driver": (_const_driver, "y_T = 0, f = c; y = -c(T - t), Y = 0"),
    "enlarged": (_enlarged, "y_T = xi w(T), f = 0, enlarged filtration; y = xi w, Y = xi"),
    "decay": (_decay, "y_T = 1, f(t,y,Y) = -y (Picard extension); y = exp(T - t), Y = 0"),
}

POLYNOMIAL_BENCHMARKS = ("bm", "bm_squared", "const_driver", "enlarged")


def benchmark(name: str, horizon: float = 1.0, **params) -> tuple[BSDEProblem, ClosedFormSolution]:
    try:
        factory, _ = REGISTRY[name]
    except KeyError:
        raise LookupError(f"unknown benchmark {name!r}; known: {', '.join(REGISTRY)}") from None
    return factory(horizon, **params)


# -- direct projection ------------------------------------------------------------------------

GAUSS_NODES = 6


def projection_integrands(process: Callable, space: FiniteElementSpace, src) -> list:
    """Per block ``k``, ``int_{t_k}^{t_{k+1}} process(tau) dtau`` as a random variable.

    Polynomial sources integrate exactly in time by Gauss-Legendre, evaluating the process at
    off-grid nodes through a Brownian-bridge coordinate; path batches use the trapezoid
    rule on the batch grid.
    """
    grid = space.grid
    out = []
    if isinstance(src, SymbolicSource):
        if src.grid.level != grid.level:
            raise ValueError("symbolic projection needs the source at the basis level")
        nodes, weights = np.polynomial.legendre.leggauss(GAUSS_NODES)
        for k in range(grid.num_blocks):
            a, b = grid.time(k), grid.time(k + 1)
            acc = 0.0
            for x, wgt in zip(nodes, weights):
                tau = float(a + (b - a) * (x + 1.0) / 2.0)
                acc = acc + (0.5 * (b - a) * wgt) * src.lift(process(src.with_bridge(tau), tau))
            out.append(acc)
        return out
    fine = src.grid
    r = 2 ** (fine.level - grid.level)
    half = 0.5 * fine.block_width
    for k in range(grid.num_blocks):
        acc = 0.0
        for ell in range(k * r, (k + 1) * r):
            left = src.lift(process(src, fine.time(ell)))
            right = src.lift(process(src, fine.time(ell + 1)))
            acc = acc + half * (left + right)
        out.append(acc)
    return out


def direct_projection(process: Callable, space: FiniteElementSpace, engine) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients ``E int_0^T process(tau) e_ki(tau) dtau`` of the orthogonal projection onto ``H_N``."""
    src = engine.source(space.grid, space.enlargement)
    return _project_blocks(projection_integrands(process, space, src), space, engine, src)


def projection_difference(
    problem: BSDEProblem, oracle: ClosedFormSolution, space: FiniteElementSpace, engine
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Solver coefficients minus the direct projection of ``(y, Y)``, estimated pathwise.

    Both routes are evaluated on the same source and differenced sample by sample before
    averaging, so Monte Carlo standard errors refer to the difference itself. Returns
    ``(d_alpha, d_alpha_se, d_beta, d_beta_se)``.
    """
    src = engine.source(space.grid, space.enlargement)
    a_int = alpha_integrands(problem, space, src)
    b_int = beta_integrands(problem, space, src)
    py = projection_integrands(oracle.y, space, src)
    pY = projection_integrands(oracle.Y, space, src)
    da, da_se = _project_blocks([a - p for a, p in zip(a_int, py)], space, engine, src)
    db, db_se = _project_blocks([b - p for b, p in zip(b_int, pY)], space, engine, src)
    return da, da_se, db, db_se


def project_step_process(process: StepProcess, space: FiniteElementSpace, engine) -> tuple[np.ndarray, np.ndarray]:
    return direct_projection(lambda s, t: process.value(min(t, space.grid.horizon), s), space, engine)


# -- nested Monte Carlo ---------------------------------------------------------------------

def nested_mc_conditional(
    terminal: PathFunctional,
    grid: DyadicGrid,
    t: float,
    prefix,
    inner_samples: int,
    seed: int = 0,
    outer_path: int = 0,
    xi: float | None = None,
) -> tuple[float, float]:
    """``E[y_T | F_t]`` on one path by averaging ``y_T`` over fresh continuations.

    ``prefix`` holds the path's increments on ``[0, t]``; each ``(seed, outer_path, t)``
    gets its own sub-seed.
    """
    ell = grid.index_of(t)
    prefix = np.asarray(prefix, dtype=float)
    if prefix.size != ell:
        raise ValueError(f"prefix must hold the {ell} increments before t={t}, got {prefix.size}")
    if inner_samples < 1:
        raise ValueError("inner sample count must be at least 1")
    batch = continue_paths(grid, prefix, inner_samples, derive_seed(seed, outer_path, ell, 0x4E4D), xi)
    return mc_expect(batch.lift(terminal(batch)))
