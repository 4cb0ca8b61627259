"""Finite transposition solver for ``dy = f dt + Y dw``, ``y(T) = y_T``.

The numerical pair ``(y_N, Y_N)`` lives in the finite element space ``H_N``. Testing the
variational identity against ``u = e_ki`` (resp. ``v = e_ki``) with ``eta = 0`` gives each
coefficient in closed form:

    alpha_ki = Delta E[h_ki y_T] - E int_0^T (tau^t_{k+1} - tau^t_k) h_ki f(tau) dtau
    beta_ki  = E[(w(t_{k+1}) - w(t_k)) h_ki y_T]
               - E int_0^T (w(tau^t_{k+1}) - w(tau^t_k)) h_ki f(tau) dtau

No linear system and no conditional expectation is involved. Driver integrals use the
source grid with left-endpoint values of ``f``; the deterministic clipped-time weight is
integrated exactly on each fine step.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .basis import FiniteElementSpace
from .expectation import basis_matrix
from .grid import DyadicGrid, clip_weight_integral
from .polynomial import GaussianPolynomial
from .sampling import PathFunctional


class InconsistencyError(ValueError):
    """A coefficient table does not match the space it is assembled on."""


@dataclass(frozen=True)
class BSDEProblem:
    """Terminal value ``y_T`` and driver of ``dy = f dt + Y dw`` on ``[0, T]``.

    ``driver`` is a linear (``y``/``Y``-independent) adapted process ``f(src, t)``;
    ``lipschitz_driver`` is a rule ``f(t, y, Y)`` for the Picard extension. At most one is set.
    """

    horizon: float
    terminal: PathFunctional
    driver: PathFunctional | None = None
    lipschitz_driver: Callable | None = None
    lipschitz_constant: float | None = None
    enlargement: bool = False
    dimension: int = 1
    name: str = ""

    def __post_init__(self) -> None:
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.driver is not None and self.lipschitz_driver is not None:
            raise ValueError("give either a linear driver or a Lipschitz driver, not both")
        if self.lipschitz_driver is not None and self.lipschitz_constant is None:
            raise ValueError("a Lipschitz driver needs its declared Lipschitz constant")
        if self.dimension != 1:
            raise NotImplementedError("only scalar problems (n = 1) are implemented")
        tm = self.terminal.measurable_at
        if tm is not None and tm > self.horizon:
            raise ValueError("terminal value must be F_T-measurable")

    @property
    def is_linear(self) -> bool:
        return self.lipschitz_driver is None


# -- coefficient table --------------------------------------------------------------------

CSV_HEADER = ("k", "i", "alpha", "beta", "alpha_stderr", "beta_stderr")


@dataclass
class CoefficientTable:
    level: int
    degree: int
    labels: list[tuple[int, int]]
    alpha: np.ndarray
    beta: np.ndarray
    alpha_stderr: np.ndarray
    beta_stderr: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.labels)
        for name in ("alpha", "beta", "alpha_stderr", "beta_stderr"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise InconsistencyError(f"{name} has shape {arr.shape}, expected ({n},)")
            setattr(self, name, arr)

    @classmethod
    def zeros(cls, space: FiniteElementSpace) -> "CoefficientTable":
        n = len(space)
        z = np.zeros(n)
        return cls(space.grid.level, space.degree, space.labels(), z, z.copy(), z.copy(), z.copy())

    def entry(self, k: int, i: int) -> tuple[float, float]:
        j = self.labels.index((k, i))
        return float(self.alpha[j]), float(self.beta[j])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for j, (k, i) in enumerate(self.labels):
            w.writerow([k, i, repr(float(self.alpha[j])), repr(float(self.beta[j])),
                        repr(float(self.alpha_stderr[j])), repr(float(self.beta_stderr[j]))])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path: str | Path, level: int, degree: int) -> "CoefficientTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if tuple(rows[0]) != CSV_HEADER:
            raise ValueError(f"unexpected coefficient CSV header {rows[0]}")
        body = rows[1:]
        cols = list(zip(*body)) if body else [()] * 6
        return cls(
            level, degree, [(int(k), int(i)) for k, i in zip(cols[0], cols[1])],
            np.array(cols[2], dtype=float), np.array(cols[3], dtype=float),
            np.array(cols[4], dtype=float), np.array(cols[5], dtype=float),
        )


# -- step processes -------------------------------------------------------------------------

class StepProcess:
    """``sum_ki c_ki e_ki``: constant in time on each block, ``F_{t_k}``-measurable there."""

    def __init__(self, space: FiniteElementSpace, coefficients: Sequence[float]):
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (len(space),):
            raise InconsistencyError(f"{coefficients.shape[0]} coefficients for a space of {len(space)} elements")
        self.space = space
        self.coefficients = coefficients
        self._cache_src = None
        self._cache: dict[int, object] = {}

    def block_coefficients(self, k: int) -> np.ndarray:
        o = self.space.offsets
        return self.coefficients[o[k] : o[k + 1]]

    def block_value(self, k: int, src):
        if src is not self._cache_src:
            self._cache_src, self._cache = src, {}
        val = self._cache.get(k)
        if val is None:
            val = self._evaluate_block(k, src)
            self._cache[k] = val
        return val

    def _evaluate_block(self, k: int, src):
        functions = self.space.blocks[k]
        coefs = self.block_coefficients(k)
        coords = src.coords(self.space.grid, self.space.enlargement)
        if coords and isinstance(coords[0], GaussianPolynomial):
            same_level = src.grid.level == self.space.grid.level
            return GaussianPolynomial.combine(
                (c, h.to_polynomial() if same_level else h.evaluate(coords))
                for c, h in zip(coefs, functions)
                if c != 0.0
            )
        if not coords:  # level 0 without enlargement: only the constant function exists
            return src.lift(float(coefs[0]) * functions[0].normalization)
        h = basis_matrix(src, functions)
        out = np.zeros(h.shape[1])
        for j in np.flatnonzero(coefs):
            out += coefs[j] * h[j]
        return out

    def value(self, t: float, src):
        return self.block_value(self.space.grid.block_of(t), src)

    def __call__(self, t: float, src):
        return self.value(t, src)


@dataclass
class StepProcessSolution:
    space: FiniteElementSpace
    table: CoefficientTable
    y: StepProcess = field(init=False)
    Y: StepProcess = field(init=False)

    def __post_init__(self) -> None:
        self.y = StepProcess(self.space, self.table.alpha)
        self.Y = StepProcess(self.space, self.table.beta)


def assemble_solution(space: FiniteElementSpace, table: CoefficientTable) -> StepProcessSolution:
    if table.level != space.grid.level or table.degree != space.degree:
        raise InconsistencyError(
            f"table is for level {table.level}, degree {table.degree}; "
            f"space is level {space.grid.level}, degree {space.degree}"
        )
    if table.labels != space.labels():
        raise InconsistencyError("coefficient table index set differs from the space enumeration")
    return StepProcessSolution(space, table)


# -- coefficient formulas -------------------------------------------------------------------

def _driver_samples(problem: BSDEProblem, src) -> list | None:
    if problem.driver is None:
        return None
    fine = src.grid
    return [src.lift(problem.driver(src, fine.time(ell))) for ell in range(fine.num_blocks)]


def _tail_sums(f: list, fine: DyadicGrid, coarse: DyadicGrid) -> list:
    """``tail[j] = sum_{fine l >= j r} delta f_l`` accumulated from the end in fixed order."""
    r = 2 ** (fine.level - coarse.level)
    delta = fine.block_width
    tail = [0.0] * (coarse.num_blocks + 1)
    acc = 0.0
    for j in range(coarse.num_blocks - 1, -1, -1):
        for ell in range(j * r, (j + 1) * r):
            acc = acc + delta * f[ell]
        tail[j] = acc
    return tail


def alpha_integrands(problem: BSDEProblem, space: FiniteElementSpace, src) -> list:
    """Per block ``k``, the random variable ``A_k`` with ``alpha_ki = E[h_ki A_k]``."""
    grid, fine = space.grid, src.grid
    delta = grid.block_width
    y_T = src.lift(problem.terminal(src))
    f = _driver_samples(problem, src)
    scaled = delta * y_T
    if f is None:
        return [scaled] * grid.num_blocks
    r = 2 ** (fine.level - grid.level)
    tail = _tail_sums(f, fine, grid)
    out = []
    for k in range(grid.num_blocks):
        inner = 0.0
        for ell in range(k * r, (k + 1) * r):
            wgt = clip_weight_integral(grid, k, fine.time(ell), fine.time(ell + 1))
            inner = inner + wgt * f[ell]
        out.append(scaled - (inner + delta * tail[k + 1]))
    return out


def beta_integrands(problem: BSDEProblem, space: FiniteElementSpace, src) -> list:
    """Per block ``k``, the random variable ``B_k`` with ``beta_ki = E[h_ki B_k]``."""
    grid, fine = space.grid, src.grid
    y_T = src.lift(problem.terminal(src))
    f = _driver_samples(problem, src)
    r = 2 ** (fine.level - grid.level)
    tail = _tail_sums(f, fine, grid) if f is not None else None
    dfine = fine.block_width
    out = []
    for k in range(grid.num_blocks):
        w_lo = src.w(grid.time(k))
        dw = src.w(grid.time(k + 1)) - w_lo
        val = dw * y_T
        if f is not None:
            inner = 0.0
            for ell in range(k * r + 1, (k + 1) * r):  # the weight vanishes at s = t_k
                inner = inner + dfine * (src.w(fine.time(ell)) - w_lo) * f[ell]
            val = val - (inner + dw * tail[k + 1])
        out.append(val)
    return out


def _project_blocks(integrands: list, space: FiniteElementSpace, engine, src) -> tuple[np.ndarray, np.ndarray]:
    n = len(space)
    vals, ses = np.zeros(n), np.zeros(n)
    for k, blk in enumerate(space.blocks):
        o = space.offsets[k]
        vals[o : o + len(blk)], ses[o : o + len(blk)] = engine.project(integrands[k], blk, src)
    return vals, ses


def _check_linear(problem: BSDEProblem) -> None:
    if not problem.is_linear:
        raise ValueError("coefficient formulas need a linear driver; use solve_nonlinear_picard")


def compute_alpha(problem: BSDEProblem, space: FiniteElementSpace, engine) -> tuple[np.ndarray, np.ndarray]:
    _check_linear(problem)
    src = engine.source(space.grid, space.enlargement)
    return _project_blocks(alpha_integrands(problem, space, src), space, engine, src)


def compute_beta(problem: BSDEProblem, space: FiniteElementSpace, engine) -> tuple[np.ndarray, np.ndarray]:
    _check_linear(problem)
    src = engine.source(space.grid, space.enlargement)
    return _project_blocks(beta_integrands(problem, space, src), space, engine, src)


def compute_coefficients(problem: BSDEProblem, space: FiniteElementSpace, engine) -> CoefficientTable:
    a, a_se = compute_alpha(problem, space, engine)
    b, b_se = compute_beta(problem, space, engine)
    return CoefficientTable(space.grid.level, space.degree, space.labels(), a, b, a_se, b_se)


def solve_linear(
    problem: BSDEProblem, level: int, degree: int, engine, enlargement: bool | None = None
) -> StepProcessSolution:
    if enlargement is None:
        enlargement = problem.enlargement
    space = FiniteElementSpace(DyadicGrid(level, problem.horizon), degree, enlargement)
    return assemble_solution(space, compute_coefficients(problem, space, engine))


# -- variational identity -------------------------------------------------------------------

@dataclass(frozen=True)
class TestTriple:
    """Test data ``(u, v, eta)`` started at ``t``; ``z = eta + int u ds + int v dw``.

    ``u`` and ``v`` are step processes (or ``None`` for zero); ``eta`` is a constant or a
    callable ``src -> value`` that must be ``F_t``-measurable.
    """

    __test__ = False  # not a pytest class

    u: StepProcess | None = None
    v: StepProcess | None = None
    eta: float | Callable | None = None
    t: float = 0.0


def _eval_eta(triple: TestTriple, src):
    if triple.eta is None:
        return None
    return src.lift(triple.eta(src) if callable(triple.eta) else triple.eta)


def variational_residual(
    solution: StepProcessSolution, triple: TestTriple, problem: BSDEProblem, engine
) -> tuple[float, float]:
    """Signed defect of the variational identity with ``(y_N, Y_N)`` in place of ``(y, Y)``.

    ``E<z(T), y_T> - E<eta, y_N(t)> - E int_t^T <z, f> - E int_t^T <u, y_N> - E int_t^T <v, Y_N>``,
    the stochastic integral in ``z`` taken as the left-endpoint Ito sum on the source grid.
    Returns ``(value, stderr)``.
    """
    _check_linear(problem)
    space = solution.space
    src = engine.source(space.grid, space.enlargement)
    fine = src.grid
    delta = fine.block_width
    start = fine.index_of(triple.t)
    y_T = src.lift(problem.terminal(src))
    f = _driver_samples(problem, src)

    pairs: list[tuple[object, object, float]] = []  # sum of coef * E[a b]
    z = _eval_eta(triple, src)
    if z is not None:
        pairs.append((z, solution.y.value(triple.t, src), -1.0))
    for ell in range(start, fine.num_blocks):
        s = fine.time(ell)
        u = triple.u.value(s, src) if triple.u is not None else None
        v = triple.v.value(s, src) if triple.v is not None else None
        if f is not None:
            # exact time integral of z over the step: z is affine in tau through the u-part
            zint = None
            if z is not None:
                zint = delta * z
            if u is not None:
                half = (0.5 * delta * delta) * u
                zint = half if zint is None else zint + half
            if zint is not None:
                pairs.append((zint, f[ell], -1.0))
        if u is not None:
            pairs.append((u, solution.y.value(s, src), -delta))
            z = delta * u if z is None else z + delta * u
        if v is not None:
            pairs.append((v, solution.Y.value(s, src), -delta))
            dw = src.w(fine.time(ell + 1)) - src.w(s)
            z = v * dw if z is None else z + v * dw
    if z is not None:
        pairs.append((z, y_T, 1.0))
    return _expect_pairs(pairs, engine)


def _expect_pairs(pairs, engine) -> tuple[float, float]:
    if not pairs:
        return 0.0, 0.0
    if engine.name == "exact":
        return math.fsum(c * engine.expect_product(a, b)[0] for a, b, c in pairs), 0.0
    total = np.zeros(engine.batch.count)
    for a, b, c in pairs:
        total = total + c * (engine.lift(a) * engine.lift(b))
    return engine.expect(total)


def random_step_process(space: FiniteElementSpace, rng: np.random.Generator, terms: int | None = None) -> StepProcess:
    """Random element of ``H_N``: Gaussian coefficients on ``terms`` random elements (all if ``None``)."""
    n = len(space)
    coefs = np.zeros(n)
    if terms is None or terms >= n:
        coefs[:] = rng.standard_normal(n)
    else:
        idx = rng.choice(n, size=terms, replace=False)
        coefs[idx] = rng.standard_normal(terms)
    return StepProcess(space, coefs)


# -- Picard extension (beyond the linear theory) --------------------------------------------

@dataclass
class PicardResult:
    solution: StepProcessSolution
    iterations: int
    converged: bool
    changes: list[tuple[float, float]]

    def __iter__(self):
        return iter((self.solution, self.iterations, self.converged))


def solve_nonlinear_picard(
    problem: BSDEProblem, level: int, degree: int, engine, max_iter: int = 50, tol: float = 1e-6
) -> PicardResult:
    """Fixed-point iteration on the frozen driver ``tau -> f(tau, y^m(tau), Y^m(tau))``.

    Starts from ``y^0 = Y^0 = 0``. Stops when the ``L2(Omega x [0,T])`` change of both
    components is at most ``tol`` (measured through the coefficients, the basis being
    orthonormal), or when the frozen driver reproduces the previous one exactly.
    """
    if problem.lipschitz_driver is None:
        raise ValueError("problem has no Lipschitz driver")
    rule = problem.lipschitz_driver
    space = FiniteElementSpace(DyadicGrid(level, problem.horizon), degree, problem.enlargement)
    src = engine.source(space.grid, space.enlargement)
    fine = src.grid
    prev = assemble_solution(space, CoefficientTable.zeros(space))
    prev_f = None
    changes: list[tuple[float, float]] = []
    for it in range(1, max_iter + 1):
        f_vals = [
            src.lift(rule(fine.time(ell), prev.y.value(fine.time(ell), src), prev.Y.value(fine.time(ell), src)))
            for ell in range(fine.num_blocks)
        ]
        if prev_f is not None and _same_samples(prev_f, f_vals):
            return PicardResult(prev, it - 1, True, changes)
        frozen = PathFunctional(_lookup_driver(f_vals, fine), description="frozen Picard driver")
        linear = replace(problem, driver=frozen, lipschitz_driver=None, lipschitz_constant=None)
        sol = assemble_solution(space, compute_coefficients(linear, space, engine))
        dy = float(np.sqrt(np.sum((sol.table.alpha - prev.table.alpha) ** 2)))
        dY = float(np.sqrt(np.sum((sol.table.beta - prev.table.beta) ** 2)))
        changes.append((dy, dY))
        if dy <= tol and dY <= tol:
            return PicardResult(sol, it, True, changes)
        prev, prev_f = sol, f_vals
    return PicardResult(prev, max_iter, False, changes)


def _lookup_driver(values: list, fine: DyadicGrid) -> Callable:
    def driver(src, t):
        return values[fine.index_of(t)]

    return driver


def _same_samples(a: list, b: list) -> bool:
    for x, y in zip(a, b):
        if isinstance(x, GaussianPolynomial):
            if x.terms != y.terms:
                return False
        elif not np.array_equal(x, y):
            return False
    return True
