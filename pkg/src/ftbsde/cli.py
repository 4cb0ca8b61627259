"""Batch experiment runner: ``solve``, ``convergence``, ``validate`` and ``selftest``.

Settings come from built-in defaults, then an optional flat ``key = value`` config file,
then command-line flags (flags win). Reports are written to ``--output-dir``, else the
config's ``output_dir``, else ``$FTBSDE_OUTPUT_DIR``, else the current directory.

Exit codes: 0 success, 1 a validation check exceeded its tolerance, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .basis import FiniteElementSpace, block_basis_size, gram_identity_defect, hermite_eval
from .expectation import ExactEngine, MonteCarloEngine, UnsupportedDataError
from .grid import DyadicGrid
from .metrics import l2_error, rate_fit, sup_error
from .oracles import POLYNOMIAL_BENCHMARKS, REGISTRY, benchmark, projection_difference
from .rng import philox4x32
from .sampling import sample_paths
from .solver import (
    TestTriple,
    assemble_solution,
    compute_coefficients,
    random_step_process,
    solve_nonlinear_picard,
    variational_residual,
)

OUTPUT_ENV = "FTBSDE_OUTPUT_DIR"
CONVERGENCE_HEADER = ("N", "d", "S", "seed", "y_error2", "y_stderr", "Y_error2", "Y_stderr", "sup_error2", "wall_ms")
VALIDATE_HEADER = ("check", "max_defect", "tolerance", "pass")
EXACT_TOL = 1e-10
MC_OUTSIDE_FRACTION = 0.01  # allowed share of entries beyond 4 standard errors
SUP_LEVEL_OFFSET = 2  # sup_error batch is this many levels finer than the finest solve


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    benchmark: str = "bm"
    level: int = 3
    levels: str = "2:5"
    degree: int = 2
    engine: str = "exact"
    samples: int = 4096
    seed: int = 0
    enlargement: bool | None = None
    horizon: float = 1.0
    output_dir: str | None = None

    def level_range(self) -> list[int]:
        lo, hi = _parse_levels(self.levels)
        return list(range(lo, hi + 1))

    def hash(self) -> str:
        """Provenance hash of every setting that can change numbers."""
        data = {k: v for k, v in asdict(self).items() if k != "output_dir"}
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _parse_levels(text: str) -> tuple[int, int]:
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"levels must look like 'a:b', got {text!r}")
    try:
        lo, hi = int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"levels must be integers, got {text!r}") from None
    if lo < 0 or hi < lo:
        raise ConfigError(f"levels need 0 <= a <= b, got {text!r}")
    return lo, hi


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_CONVERTERS = {"level": int, "degree": int, "samples": int, "seed": int, "horizon": float, "enlargement": _parse_bool}
CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Errors name the offending line."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        try:
            out[key] = _CONVERTERS.get(key, str)(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        if key == "levels":
            try:
                _parse_levels(value)
            except ConfigError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from None
    return out


def _validate_config(cfg: RunConfig) -> None:
    if cfg.benchmark not in REGISTRY:
        raise ConfigError(f"unknown benchmark {cfg.benchmark!r}; known: {', '.join(REGISTRY)}")
    if cfg.engine not in ("exact", "mc"):
        raise ConfigError(f"engine must be 'exact' or 'mc', got {cfg.engine!r}")
    if cfg.level < 0 or cfg.degree < 0:
        raise ConfigError("level and degree must be nonnegative")
    if cfg.samples < 2:
        raise ConfigError("samples must be at least 2")
    if not cfg.horizon > 0:
        raise ConfigError("horizon must be positive")
    _parse_levels(cfg.levels)
    if cfg.engine == "exact" and cfg.benchmark not in POLYNOMIAL_BENCHMARKS and cfg.benchmark != "decay":
        raise ConfigError(f"benchmark {cfg.benchmark!r} has non-polynomial data; use --engine mc")
    problem, _ = benchmark(cfg.benchmark, cfg.horizon)
    if problem.enlargement and cfg.enlargement is False:
        raise ConfigError(f"benchmark {cfg.benchmark!r} needs the enlarged filtration")


# -- argument parsing -----------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", default=S, help="flat key = value settings file")
    common.add_argument("--benchmark", default=S)
    common.add_argument("--level", type=int, default=S)
    common.add_argument("--levels", default=S, help="inclusive level range a:b")
    common.add_argument("--degree", type=int, default=S)
    common.add_argument("--engine", choices=("exact", "mc"), default=S)
    common.add_argument("--samples", type=int, default=S)
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--enlargement", action=argparse.BooleanOptionalAction, default=S)
    common.add_argument("--horizon", type=float, default=S)
    common.add_argument("--output-dir", dest="output_dir", default=S)
    common.add_argument("--threads", type=int, default=S, help="sampling threads; never changes results")
    common.add_argument("--timing", action="store_true", default=S, help="record wall-clock times")

    parser = argparse.ArgumentParser(prog="ftbsde", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--list-benchmarks", action="store_true", help="print the benchmark registry")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("solve", parents=[common], help="coefficients and L2 errors at one level")
    sub.add_parser("convergence", parents=[common], help="errors over a range of levels")
    sub.add_parser("validate", parents=[common], help="projection identity, residuals, orthonormality")
    sub.add_parser("selftest", parents=[common], help="quick invariant suite")
    return parser


def resolve(args: argparse.Namespace) -> tuple[RunConfig, int, bool]:
    """Merge defaults, config file and flags; returns ``(config, threads, timing)``."""
    ns = vars(args)
    values: dict = {}
    if "config" in ns:
        try:
            text = Path(ns["config"]).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        values.update(parse_config_text(text))
    values.update({k: ns[k] for k in CONFIG_KEYS if k in ns})
    cfg = RunConfig(**values)
    _validate_config(cfg)
    threads = ns.get("threads", 1)
    if threads < 1:
        raise ConfigError("threads must be at least 1")
    return cfg, threads, bool(ns.get("timing", False))


def _output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -------------------------------------------------------------------------------

def _setup(cfg: RunConfig, level: int, threads: int, batch_level: int | None = None):
    problem, oracle = benchmark(cfg.benchmark, cfg.horizon)
    enlargement = problem.enlargement if cfg.enlargement is None else cfg.enlargement
    space = FiniteElementSpace(DyadicGrid(level, cfg.horizon), cfg.degree, enlargement)
    if cfg.engine == "exact":
        return problem, oracle, space, ExactEngine()
    grid = DyadicGrid(level if batch_level is None else batch_level, cfg.horizon)
    batch = sample_paths(grid, cfg.samples, cfg.seed, enlargement, threads)
    return problem, oracle, space, MonteCarloEngine(batch)


def _solve_at(problem, space, engine):
    if problem.is_linear:
        return assemble_solution(space, compute_coefficients(problem, space, engine)), None
    result = solve_nonlinear_picard(problem, space.grid.level, space.degree, engine, tol=1e-6)
    return result.solution, result


def _ms(start: float, timing: bool) -> int:
    return int(round((time.perf_counter() - start) * 1000)) if timing else 0


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _provenance(cfg: RunConfig, command: str) -> dict:
    config = {k: v for k, v in asdict(cfg).items() if k != "output_dir"}
    return {"command": command, "config": config, "config_hash": cfg.hash(), "seed": cfg.seed, "version": __version__}


def cmd_solve(cfg: RunConfig, threads: int, timing: bool) -> int:
    start = time.perf_counter()
    problem, oracle, space, engine = _setup(cfg, cfg.level, threads)
    solution, picard = _solve_at(problem, space, engine)
    err = l2_error(solution, oracle, engine)
    out = _output_dir(cfg)
    solution.table.write_csv(out / "coefficients.csv")
    summary = _provenance(cfg, "solve")
    summary.update(
        N=cfg.level, d=cfg.degree, S=cfg.samples if cfg.engine == "mc" else 0,
        y_error2=err.y_error2, y_stderr=err.y_stderr, Y_error2=err.Y_error2, Y_stderr=err.Y_stderr,
        basis_size=len(space), engine=engine.describe(), wall_ms=_ms(start, timing),
    )
    if picard is not None:
        summary["picard"] = {"iterations": picard.iterations, "converged": picard.converged}
    _write_json(out / "summary.json", summary)
    print(f"{cfg.benchmark} N={cfg.level} d={cfg.degree} {cfg.engine}: "
          f"y_error2={err.y_error2:.6g} Y_error2={err.Y_error2:.6g} -> {out}")
    return 0


def cmd_convergence(cfg: RunConfig, threads: int, timing: bool) -> int:
    levels = cfg.level_range()
    problem, oracle = benchmark(cfg.benchmark, cfg.horizon)
    enlargement = problem.enlargement if cfg.enlargement is None else cfg.enlargement
    sup_grid = DyadicGrid(levels[-1] + SUP_LEVEL_OFFSET, cfg.horizon)
    sup_batch = sample_paths(sup_grid, cfg.samples, cfg.seed, enlargement, threads)
    engine = ExactEngine() if cfg.engine == "exact" else MonteCarloEngine(sup_batch)
    rows = []
    for n in levels:
        start = time.perf_counter()
        space = FiniteElementSpace(DyadicGrid(n, cfg.horizon), cfg.degree, enlargement)
        solution, _ = _solve_at(problem, space, engine)
        err = l2_error(solution, oracle, engine)
        sup, _ = sup_error(solution, oracle, sup_batch)
        rows.append((n, cfg.degree, cfg.samples, cfg.seed, err.y_error2, err.y_stderr,
                     err.Y_error2, err.Y_stderr, sup, _ms(start, timing)))
    out = _output_dir(cfg)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CONVERGENCE_HEADER)
    for r in rows:
        writer.writerow([r[0], r[1], r[2], r[3], *(repr(float(x)) for x in r[4:9]), r[9]])
    (out / "convergence.csv").write_text(buf.getvalue())
    summary = _provenance(cfg, "convergence")
    summary["engine"] = engine.describe()
    summary["sup_batch_level"] = sup_grid.level
    summary["rows"] = [dict(zip(CONVERGENCE_HEADER, r)) for r in rows]
    for key, col in (("y_rate", 4), ("Y_rate", 6)):
        pts = [(r[0], r[col]) for r in rows]
        summary[key] = rate_fit(pts) if len(pts) >= 3 and all(e > 0 for _, e in pts) else None
    _write_json(out / "summary.json", summary)
    print(f"{cfg.benchmark} levels {levels[0]}..{levels[-1]}: Y_rate={summary['Y_rate']} -> {out}")
    return 0


def _outside_fraction(diff: np.ndarray, se: np.ndarray) -> float:
    return float(np.mean(np.abs(diff) > 4.0 * se + 1e-12)) if diff.size else 0.0


def validation_checks(cfg: RunConfig, threads: int, pairs: int = 20) -> list[tuple[str, float, float]]:
    """``(check, max_defect, tolerance)`` rows for the configured benchmark and level."""
    problem, oracle, space, engine = _setup(cfg, cfg.level, threads)
    exact = cfg.engine == "exact"
    checks = []
    if problem.is_linear:
        da, da_se, db, db_se = projection_difference(problem, oracle, space, engine)
        if exact:
            checks.append(("projection_identity_alpha", float(np.max(np.abs(da))), EXACT_TOL))
            checks.append(("projection_identity_beta", float(np.max(np.abs(db))), EXACT_TOL))
        else:
            checks.append(("projection_identity_alpha_outside_4se", _outside_fraction(da, da_se), MC_OUTSIDE_FRACTION))
            checks.append(("projection_identity_beta_outside_4se", _outside_fraction(db, db_se), MC_OUTSIDE_FRACTION))
        solution = assemble_solution(space, compute_coefficients(problem, space, engine))
        rng = np.random.default_rng(cfg.seed)
        values, ses = [], []
        for _ in range(pairs):
            triple = TestTriple(random_step_process(space, rng), random_step_process(space, rng), 0.0, 0.0)
            value, se = variational_residual(solution, triple, problem, engine)
            values.append(value)
            ses.append(se)
        if exact:
            checks.append(("variational_residual", float(np.max(np.abs(values))), EXACT_TOL))
        else:
            checks.append(("variational_residual_outside_4se",
                           _outside_fraction(np.array(values), np.array(ses)), MC_OUTSIDE_FRACTION))
    if exact:
        checks.append(("gram_identity", gram_identity_defect(space, engine), EXACT_TOL))
    else:
        outside, total = 0, 0
        for blk in space.blocks:
            for a, row, se in engine.gram_rows(blk):
                dev = row.copy()
                dev[a] -= 1.0
                mask = np.arange(len(row)) != a
                outside += int(np.sum(np.abs(dev[mask]) > 4.0 * se[mask] + 1e-12))
                total += int(mask.sum())
        checks.append(("gram_offdiagonal_outside_4se", outside / total if total else 0.0, MC_OUTSIDE_FRACTION))
    return checks


def _write_checks(path: Path, checks: list[tuple[str, float, float]]) -> bool:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(VALIDATE_HEADER)
    ok = True
    for name, defect, tol in checks:
        passed = bool(defect <= tol)
        ok &= passed
        writer.writerow([name, repr(float(defect)), repr(float(tol)), "true" if passed else "false"])
    path.write_text(buf.getvalue())
    return ok


def cmd_validate(cfg: RunConfig, threads: int, timing: bool) -> int:
    checks = validation_checks(cfg, threads)
    out = _output_dir(cfg)
    ok = _write_checks(out / "validate.csv", checks)
    summary = _provenance(cfg, "validate")
    summary["checks"] = [{"check": c, "max_defect": d, "tolerance": t, "pass": d <= t} for c, d, t in checks]
    _write_json(out / "summary.json", summary)
    for name, defect, tol in checks:
        print(f"{'PASS' if defect <= tol else 'FAIL'} {name}: {defect:.3g} (tol {tol:g})")
    return 0 if ok else 1


def selftest_checks(threads: int) -> list[tuple[str, float, float]]:
    """Fast invariants with known answers, independent of any config."""
    checks = [
        ("hermite_values", abs(hermite_eval(2, 2.0) - 3.0) + abs(hermite_eval(3, 1.0) + 2.0), 0.0),
        ("basis_counts", float(abs(block_basis_size(2, 2) - 6) + abs(block_basis_size(1, 1, True) - 3)), 0.0),
    ]
    word = philox4x32(np.zeros((1, 4), dtype=np.uint32), (0, 0))[0]
    expected = np.array([0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8], dtype=np.uint32)
    checks.append(("philox_known_answer", float(np.count_nonzero(word != expected)), 0.0))
    exact = ExactEngine()
    checks.append(("gram_identity", gram_identity_defect(FiniteElementSpace(DyadicGrid(3, 1.0), 2), exact), EXACT_TOL))
    problem, _ = benchmark("bm")
    space = FiniteElementSpace(DyadicGrid(3, 1.0), 1)
    table = compute_coefficients(problem, space, exact)
    one = np.array([table.beta[space.flat_index(k, 1)] * space.blocks[k][0].normalization for k in range(8)])
    checks.append(("bm_Y_equals_one", float(np.max(np.abs(one - 1.0))), EXACT_TOL))
    problem, _ = benchmark("const_driver")
    space = FiniteElementSpace(DyadicGrid(2, 1.0), 1)
    table = compute_coefficients(problem, space, exact)
    vals = np.array([table.alpha[space.flat_index(k, 1)] * space.blocks[k][0].normalization for k in range(4)])
    checks.append(("const_driver_values", float(np.max(np.abs(vals - np.array([-7, -5, -3, -1]) / 8))), EXACT_TOL))
    grid = DyadicGrid(3, 1.0)
    a = sample_paths(grid, 5000, 11, threads=1).values
    b = sample_paths(grid, 5000, 11, threads=max(threads, 2)).values
    checks.append(("thread_invariance", float(np.count_nonzero(a != b)), 0.0))
    return checks


def cmd_selftest(cfg: RunConfig, threads: int, timing: bool) -> int:
    checks = selftest_checks(threads)
    out = _output_dir(cfg)
    ok = _write_checks(out / "selftest.csv", checks)
    for name, defect, tol in checks:
        print(f"{'PASS' if defect <= tol else 'FAIL'} {name}: {defect:.3g}")
    return 0 if ok else 1


COMMANDS = {"solve": cmd_solve, "convergence": cmd_convergence, "validate": cmd_validate, "selftest": cmd_selftest}


def list_benchmarks() -> str:
    width = max(len(n) for n in REGISTRY)
    return "\n".join(f"{name:<{width}}  {text}" for name, (_, text) in REGISTRY.items())


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    if args.list_benchmarks:
        print(list_benchmarks())
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("ftbsde: error: a subcommand is required", file=sys.stderr)
        return 2
    try:
        cfg, threads, timing = resolve(args)
        if args.command == "selftest":
            cfg = replace(cfg, engine="exact")
        return COMMANDS[args.command](cfg, threads, timing)
    except ConfigError as exc:
        print(f"ftbsde: config error: {exc}", file=sys.stderr)
        return 2
    except UnsupportedDataError as exc:
        print(f"ftbsde: config error: {exc}", file=sys.stderr)
        return 2


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
