"""Acceptance criteria 1-11, one test each; every test logs a PASS/FAIL line.

Monte Carlo checks compare a value with its own standard error; seeds are fixed, so the
outcome is reproducible.
"""

import time

import numpy as np
import pytest

from ftbsde.basis import FiniteElementSpace, gram_identity_defect
from ftbsde.cli import main
from ftbsde.expectation import ExactEngine, MonteCarloEngine, SymbolicSource
from ftbsde.grid import DyadicGrid
from ftbsde.metrics import l2_error, rate_fit, sup_error
from ftbsde.oracles import POLYNOMIAL_BENCHMARKS, benchmark, direct_projection, projection_difference
from ftbsde.sampling import sample_paths
from ftbsde.solver import TestTriple, compute_alpha, random_step_process, solve_linear, solve_nonlinear_picard, variational_residual

EXACT = ExactEngine()
MC_SEEDS = (101, 102, 103, 104, 105)


def max_deviation(process, target, space):
    """Largest coefficient of ``process - target`` over all blocks, as polynomials in the coordinates."""
    src = SymbolicSource(space.grid, space.enlargement)
    worst = 0.0
    for k in range(space.grid.num_blocks):
        diff = src.lift(process.block_value(k, src)) - src.lift(target(src))
        worst = max(worst, max((abs(c) for c in diff.terms.values()), default=0.0))
    return worst


def within_4se(diff, se):
    return np.abs(diff) <= 4.0 * se + 1e-12


def test_criterion_01_bm_exact(acceptance):
    problem, _ = benchmark("bm")
    start = time.perf_counter()
    worst = 0.0
    for level in range(1, 6):
        for degree in (1, 2):
            sol = solve_linear(problem, level, degree, EXACT)
            worst = max(worst, max_deviation(sol.Y, lambda s: 1.0, sol.space))
    space = FiniteElementSpace(DyadicGrid(1, 1.0), 1)
    alpha, _ = compute_alpha(problem, space, EXACT)
    block1 = alpha[space.flat_index(1, space.find(1, (1,)))]
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and abs(block1 - 0.5) <= 1e-12 and elapsed < 1.0
    acceptance(1, ok, f"max|Y_N - 1| = {worst:.2e}, block-1 alpha = {float(block1)!r}, {elapsed:.2f} s")
    assert ok


def test_criterion_02_const_driver(acceptance):
    problem, _ = benchmark("const_driver")
    start = time.perf_counter()
    sol = solve_linear(problem, 2, 1, EXACT)
    src = SymbolicSource(sol.space.grid)
    values = [src.lift(sol.y.block_value(k, src)) for k in range(4)]
    expected = np.array([-7, -5, -3, -1]) / 8
    value_err = max(
        max(abs(c - (e if m == () else 0.0)) for m, c in {**{(): 0.0}, **v.terms}.items()) for v, e in zip(values, expected)
    )
    beta_max = float(np.max(np.abs(sol.table.beta)))
    elapsed = time.perf_counter() - start
    ok = value_err <= 1e-10 and beta_max <= 1e-10 and elapsed < 1.0
    acceptance(2, ok, f"block value error {value_err:.2e}, max|beta| = {beta_max:.2e}, {elapsed:.2f} s")
    assert ok


def test_criterion_03_bm_squared_rate(acceptance):
    problem, oracle = benchmark("bm_squared")
    start = time.perf_counter()
    rows = []
    for level in range(2, 7):
        err = l2_error(solve_linear(problem, level, 2, EXACT), oracle, EXACT)
        rows.append((level, err.Y_error2))
    slope = rate_fit(rows)
    elapsed = time.perf_counter() - start
    rel = max(abs(e - 2 * 2.0**-n) / (2 * 2.0**-n) for n, e in rows)
    ok = rel <= 1e-8 and abs(slope + 1) <= 0.02 and elapsed < 30
    acceptance(3, ok, f"Y_error2 = {[round(e, 10) for _, e in rows]}, max rel dev {rel:.1e}, slope {slope:.4f}, {elapsed:.1f} s")
    assert ok


def test_criterion_04_projection_identity(acceptance):
    names = ("bm", "bm_squared", "const_driver")
    exact_worst = 0.0
    for name in names:
        problem, oracle = benchmark(name)
        for level, degree in ((2, 2), (3, 1)):
            sol = solve_linear(problem, level, degree, EXACT)
            pa, _ = direct_projection(oracle.y, sol.space, EXACT)
            pb, _ = direct_projection(oracle.Y, sol.space, EXACT)
            exact_worst = max(exact_worst, np.max(np.abs(sol.table.alpha - pa)), np.max(np.abs(sol.table.beta - pb)))
    inside, total = 0, 0
    for name in names:
        problem, oracle = benchmark(name)
        space = FiniteElementSpace(DyadicGrid(2, 1.0), 2)
        for seed in MC_SEEDS:
            engine = MonteCarloEngine(sample_paths(DyadicGrid(4, 1.0), 2**16, seed))
            da, da_se, db, db_se = projection_difference(problem, oracle, space, engine)
            hits = np.concatenate([within_4se(da, da_se), within_4se(db, db_se)])
            inside += int(hits.sum())
            total += hits.size
    share = inside / total
    ok = exact_worst <= 1e-10 and share >= 0.99
    acceptance(4, ok, f"exact max defect {exact_worst:.2e}; MC {inside}/{total} = {share:.4f} within 4 se")
    assert ok


def test_criterion_05_variational_residual(acceptance):
    rng = np.random.default_rng(2024)
    settings = [(1, 1), (2, 2), (3, 3), (4, 2), (4, 3)]
    worst, count = 0.0, 0
    for j in range(20):
        name = POLYNOMIAL_BENCHMARKS[j % len(POLYNOMIAL_BENCHMARKS)]
        level, degree = settings[j % len(settings)]
        problem, _ = benchmark(name)
        sol = solve_linear(problem, level, degree, EXACT)
        triple = TestTriple(random_step_process(sol.space, rng), random_step_process(sol.space, rng), 0.0, 0.0)
        value, _ = variational_residual(sol, triple, problem, EXACT)
        worst = max(worst, abs(value))
        count += 1
    ok = worst <= 1e-10
    acceptance(5, ok, f"max |residual| over {count} random pairs = {worst:.2e}")
    assert ok


def test_criterion_06_orthonormality(acceptance):
    worst = 0.0
    for level in range(0, 6):
        for degree in range(0, 4):
            worst = max(worst, gram_identity_defect(FiniteElementSpace(DyadicGrid(level, 1.0), degree), EXACT))
    worst = max(worst, gram_identity_defect(FiniteElementSpace(DyadicGrid(3, 1.0), 2, True), EXACT))
    engine = MonteCarloEngine(sample_paths(DyadicGrid(2, 1.0), 2**16, 7))
    space = FiniteElementSpace(DyadicGrid(2, 1.0), 2)
    outside, total, worst_z = 0, 0, 0.0
    for blk in space.blocks:
        for a, row, se in engine.gram_rows(blk):
            mask = np.arange(len(row)) != a
            z = np.abs(row[mask]) / np.maximum(se[mask], 1e-300)
            outside += int(np.sum(~within_4se(row[mask], se[mask])))
            total += int(mask.sum())
            worst_z = max(worst_z, float(np.max(z, initial=0.0)))
    ok = worst <= 1e-10 and outside == 0
    acceptance(6, ok, f"exact Gram defect {worst:.2e}; MC off-diagonals outside 4 se: {outside}/{total} (max z {worst_z:.2f})")
    assert ok


def test_criterion_07_enlarged_filtration(acceptance):
    problem, _ = benchmark("enlarged")
    worst = 0.0
    for level in range(1, 5):
        sol = solve_linear(problem, level, 2, EXACT)
        worst = max(worst, max_deviation(sol.Y, lambda s: s.xi, sol.space))
    ok = worst <= 1e-10
    acceptance(7, ok, f"max|Y_N - xi| over blocks, N = 1..4 = {worst:.2e}")
    assert ok


def _coefficients(problem, space, engine):
    table = solve_linear(problem, space.grid.level, space.degree, engine).table
    return np.concatenate([table.alpha, table.beta]), np.concatenate([table.alpha_stderr, table.beta_stderr])


def test_criterion_08_engine_agreement(acceptance):
    inside, total = 0, 0
    slopes = {}
    for name in POLYNOMIAL_BENCHMARKS:
        problem, _ = benchmark(name)
        space = FiniteElementSpace(DyadicGrid(2, 1.0), 2, problem.enlargement)
        exact, _ = _coefficients(problem, space, EXACT)
        for seed in MC_SEEDS:
            batch = sample_paths(space.grid, 2**16, seed, problem.enlargement)
            mc, se = _coefficients(problem, space, MonteCarloEngine(batch))
            hits = within_4se(mc - exact, se)
            inside += int(hits.sum())
            total += hits.size
        errs = []
        for p in range(10, 19, 2):
            per_seed = []
            for seed in MC_SEEDS:
                batch = sample_paths(space.grid, 2**p, seed, problem.enlargement)
                mc, _ = _coefficients(problem, space, MonteCarloEngine(batch))
                per_seed.append(np.sqrt(np.mean((mc - exact) ** 2)))
            errs.append((p, float(np.mean(per_seed))))
        slopes[name] = rate_fit(errs)
    share = inside / total
    ok = share >= 0.99 and all(abs(s + 0.5) <= 0.15 for s in slopes.values())
    detail = ", ".join(f"{k} {v:.3f}" for k, v in slopes.items())
    acceptance(8, ok, f"{inside}/{total} = {share:.4f} within 4 se; |MC - exact| slope vs S: {detail}")
    assert ok


def test_criterion_09_sup_error_decreasing(acceptance):
    results = {}
    for name, degree in (("bm", 1), ("bm_squared", 2)):
        problem, oracle = benchmark(name)
        batch = sample_paths(DyadicGrid(7, 1.0), 2**15, 909)
        engine = MonteCarloEngine(batch)
        results[name] = [sup_error(solve_linear(problem, n, degree, engine), oracle, batch)[0] for n in range(2, 6)]
    ok = all(all(a > b for a, b in zip(v, v[1:])) for v in results.values())
    detail = "; ".join(f"{k}: " + ", ".join(f"{e:.4g}" for e in v) for k, v in results.items())
    acceptance(9, ok, f"sup_error2 for N = 2..5 -> {detail}")
    assert ok


def test_criterion_10_picard(acceptance):
    problem, _ = benchmark("decay")
    engine = MonteCarloEngine(sample_paths(DyadicGrid(4, 1.0), 2**15, 1010))
    result = solve_nonlinear_picard(problem, 4, 2, engine, max_iter=15, tol=1e-3)
    sol = result.solution
    g = sol.space.grid
    worst = 0.0
    for k in range(g.num_blocks):
        mean = float(np.mean(engine.lift(sol.y.block_value(k, engine.batch))))
        avg = (np.exp(1 - g.time(k)) - np.exp(1 - g.time(k + 1))) / g.block_width
        worst = max(worst, abs(mean - avg))
    ok = result.converged and result.iterations <= 15 and worst <= 0.05
    acceptance(10, ok, f"converged={result.converged} in {result.iterations} iterations, max block-mean error {worst:.4f}")
    assert ok


def test_criterion_11_thread_determinism(acceptance, tmp_path):
    runs = {
        "convergence": (["convergence", "--benchmark", "bm_squared", "--levels", "2:5", "--degree", "2", "--engine", "mc",
                         "--samples", str(2**15), "--seed", "909"], "convergence.csv"),
        "solve": (["solve", "--benchmark", "decay", "--level", "4", "--degree", "2", "--engine", "mc",
                   "--samples", str(2**15), "--seed", "1010"], "coefficients.csv"),
        "validate": (["validate", "--benchmark", "bm_squared", "--level", "2", "--degree", "2", "--engine", "mc",
                      "--samples", str(2**16), "--seed", "101"], "validate.csv"),
    }
    same = {}
    for name, (args, filename) in runs.items():
        blobs = []
        for threads in (1, 4):
            out = tmp_path / f"{name}-{threads}"
            main([*args, "--threads", str(threads), "--output-dir", str(out)])
            blobs.append((out / filename).read_bytes())
        same[name] = blobs[0] == blobs[1] and len(blobs[0]) > 0
    ok = all(same.values())
    acceptance(11, ok, "byte-identical CSVs for threads 1 vs 4: " + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert ok
