import functools
import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import hermite_e

from ftbsde.basis import (
    ChaosBasisFunction,
    FiniteElementSpace,
    MultiIndex,
    SimpleProcessBasisElement,
    block_basis_size,
    enumerate_block_basis,
    eval_e,
    eval_h,
    gram_identity_defect,
    gram_matrix,
    hermite_eval,
)
from ftbsde.expectation import ExactEngine, MonteCarloEngine, exact_expect
from ftbsde.grid import DyadicGrid
from ftbsde.oracles import direct_projection
from ftbsde.polynomial import XI
from ftbsde.sampling import sample_paths


@functools.lru_cache(maxsize=None)
def brute_force_indices(slots, d):
    return {m for m in itertools.product(range(d + 1), repeat=slots) if sum(m) <= d}


class TestEnumeration:
    def test_block_zero_is_constant(self):
        g = DyadicGrid(2, 1.0)
        (h,) = enumerate_block_basis(0, 3, grid=g)
        assert h.index.degrees == () and h.normalization == pytest.approx(2.0)

    def test_count_k2_d2(self):
        assert len(enumerate_block_basis(2, 2, grid=DyadicGrid(2, 1.0))) == 6

    def test_enlarged_k1_d1(self):
        funcs = enumerate_block_basis(1, 1, True, grid=DyadicGrid(1, 1.0))
        # constant, then the enlargement coordinate, then the first increment
        assert [h.index.degrees for h in funcs] == [(0, 0), (1, 0), (0, 1)]
        assert [h.key for h in funcs] == [(), ((XI, 1),), ((0, 1),)]

    @given(st.integers(0, 5), st.integers(0, 4), st.booleans())
    def test_count_against_brute_force(self, k, d, enl):
        funcs = enumerate_block_basis(k, d, enl, grid=DyadicGrid(3, 1.0))
        got = [h.index.degrees for h in funcs]
        assert len(got) == len(set(got)) == block_basis_size(k, d, enl) == math.comb(k + int(enl) + d, d)
        assert set(got) == brute_force_indices(k + int(enl), d)

    @given(st.integers(0, 5), st.integers(0, 4))
    def test_ordering_deterministic_and_graded(self, k, d):
        g = DyadicGrid(3, 1.0)
        a = enumerate_block_basis(k, d, grid=g)
        assert a == enumerate_block_basis(k, d, grid=g)
        degs = [h.index.total_degree for h in a]
        assert degs == sorted(degs)

    @given(st.integers(0, 4), st.integers(1, 3), st.integers(0, 3), st.booleans())
    def test_block_nesting(self, k, gap, d, enl):
        g = DyadicGrid(3, 1.0)
        lo = {h.index.padded(k + gap + int(enl)).degrees for h in enumerate_block_basis(k, d, enl, grid=g)}
        hi = {h.index.degrees for h in enumerate_block_basis(k + gap, d, enl, grid=g)}
        assert lo <= hi

    def test_negative_arguments(self):
        with pytest.raises(ValueError):
            enumerate_block_basis(-1, 2, grid=DyadicGrid(1, 1.0))

    @given(st.integers(0, 4), st.integers(0, 3), st.booleans())
    def test_measurability(self, k, d, enl):
        g = DyadicGrid(3, 1.0)
        allowed = set(range(k)) | ({XI} if enl else set())
        for h in enumerate_block_basis(k, d, enl, grid=g):
            assert h.to_polynomial().variables <= allowed


class TestHermiteEval:
    def test_examples(self):
        assert hermite_eval(0, 1.7) == 1.0
        assert hermite_eval(2, 2.0) == 3.0
        assert hermite_eval(3, 1.0) == -2.0

    @given(st.integers(0, 10), st.floats(-5, 5))
    def test_against_numpy(self, n, x):
        assert hermite_eval(n, x) == pytest.approx(hermite_e.hermeval(x, [0] * n + [1]), rel=1e-10, abs=1e-9)

    def test_arrays_and_errors(self):
        v = np.array([-1.0, 0.0, 1.0])
        np.testing.assert_array_equal(hermite_eval(2, v), [0.0, -1.0, 0.0])
        with pytest.raises(ValueError):
            hermite_eval(-1, 0.0)


class TestEvaluation:
    g = DyadicGrid(1, 1.0)

    def test_constant(self):
        h = ChaosBasisFunction(1, MultiIndex((0,)), self.g)
        assert eval_h(h, [0.3]) == pytest.approx(math.sqrt(2))
        assert eval_h(h, [-5.0]) == pytest.approx(math.sqrt(2))

    def test_degree_one(self):
        h = ChaosBasisFunction(1, MultiIndex((1,)), self.g)
        assert eval_h(h, [0.5]) == pytest.approx(math.sqrt(2) * 0.5)

    def test_degree_two_root(self):
        h = ChaosBasisFunction(1, MultiIndex((2,)), self.g)
        assert eval_h(h, [1.0]) == 0.0

    def test_missing_slot(self):
        h = ChaosBasisFunction(2, MultiIndex((0, 1)), DyadicGrid(2, 1.0))
        with pytest.raises(ValueError):
            eval_h(h, [0.1])

    def test_simple_process_support(self):
        g = DyadicGrid(2, 1.0)
        inner = SimpleProcessBasisElement(1, ChaosBasisFunction(1, MultiIndex((1,)), g))
        last = SimpleProcessBasisElement(3, ChaosBasisFunction(3, MultiIndex((0, 0, 1)), g))
        coords = [0.7, 0.1, -0.4]
        assert eval_e(inner, 0.1, coords) == 0.0
        assert eval_e(inner, 0.3, coords) == pytest.approx(2 * 0.7)
        assert eval_e(inner, 0.5, coords) == 0.0  # right end excluded
        assert eval_e(last, 1.0, coords) == pytest.approx(2 * -0.4)  # closed at T
        assert eval_e(inner, 1.0, coords) == 0.0
        with pytest.raises(ValueError):
            eval_e(inner, 1.5, coords)

    @given(st.integers(0, 4), st.floats(0.1, 4.0), st.integers(0, 3))
    def test_norm(self, level, horizon, d):
        g = DyadicGrid(level, horizon)
        k = g.num_blocks - 1
        for h in enumerate_block_basis(min(k, 3), d, grid=g):
            p = h.to_polynomial()
            assert exact_expect(p * p) == pytest.approx(2**level / horizon, rel=1e-12)
            # L2(Omega x [0, T]) norm of e_ki: Delta * ||h||^2 = 1
            assert g.block_width * exact_expect(p * p) == pytest.approx(1.0, rel=1e-12)


class TestSpace:
    def test_labels_one_based(self):
        sp = FiniteElementSpace(DyadicGrid(1, 1.0), 1)
        assert sp.labels() == [(0, 1), (1, 1), (1, 2)]
        assert sp.flat_index(1, 2) == 2
        with pytest.raises(KeyError):
            sp.flat_index(1, 3)
        with pytest.raises(KeyError):
            sp.flat_index(0, 0)

    def test_find(self):
        sp = FiniteElementSpace(DyadicGrid(2, 1.0), 2, enlargement=True)
        assert sp.find(2, (1, 0, 1)) == sp.blocks[2].index(ChaosBasisFunction(2, MultiIndex((1, 0, 1)), sp.grid, True)) + 1
        with pytest.raises(KeyError):
            sp.find(1, (3,))

    @given(st.integers(0, 3), st.integers(0, 3), st.booleans())
    def test_size(self, level, d, enl):
        sp = FiniteElementSpace(DyadicGrid(level, 1.0), d, enl)
        expected = sum(len(brute_force_indices(k + int(enl), d)) for k in range(2**level))
        assert len(sp) == expected == len(sp.elements) == len(sp.labels())
        sizes = [sp.block_size(k) for k in range(2**level)]
        assert sizes == sorted(sizes)

    def test_dump_format(self):
        sp = FiniteElementSpace(DyadicGrid(1, 1.0), 1)
        lines = sp.dump().splitlines()
        assert lines[0] == f"k=0 i=1 degrees=[] c={math.sqrt(2)!r}"
        assert lines[2] == f"k=1 i=2 degrees=[1] c={math.sqrt(2)!r}"

    def test_negative_degree(self):
        with pytest.raises(ValueError):
            FiniteElementSpace(DyadicGrid(1, 1.0), -1)


class TestGram:
    @pytest.mark.parametrize("level, d, enl", [(0, 3, False), (2, 3, True), (3, 2, False), (4, 3, False)])
    def test_exact_identity(self, level, d, enl):
        sp = FiniteElementSpace(DyadicGrid(level, 1.0), d, enl)
        g, se = gram_matrix(sp, ExactEngine())
        np.testing.assert_allclose(g, np.eye(len(sp)), atol=1e-10)
        assert not se.any()
        assert gram_identity_defect(sp, ExactEngine()) <= 1e-10

    def test_cross_block_zero(self):
        sp = FiniteElementSpace(DyadicGrid(2, 1.0), 1)
        g, _ = gram_matrix(sp, MonteCarloEngine(sample_paths(sp.grid, 64, 0)))
        o = sp.offsets
        assert not g[o[1] : o[2], o[2] : o[3]].any()

    def test_mc_off_diagonal_within_noise(self):
        sp = FiniteElementSpace(DyadicGrid(2, 1.0), 2, True)
        g, se = gram_matrix(sp, MonteCarloEngine(sample_paths(sp.grid, 2**15, 31, True)))
        off = ~np.eye(len(sp), dtype=bool)
        assert np.all(np.abs(g[off]) <= 4 * se[off] + 1e-12)
        np.testing.assert_allclose(np.diag(g), 1.0, atol=0.1)


class TestSpanNesting:
    @pytest.mark.parametrize("level, d", [(1, 2), (2, 2), (2, 3)])
    def test_coarse_elements_live_in_fine_space(self, level, d):
        coarse = FiniteElementSpace(DyadicGrid(level, 1.0), d)
        fine = FiniteElementSpace(DyadicGrid(level + 1, 1.0), d)
        eng = ExactEngine()
        T = coarse.grid.horizon
        for e in coarse.elements:
            def process(src, t, e=e):
                if not e.in_support(min(t, T)):
                    return 0.0
                return e.h.evaluate(src.coords(coarse.grid, False))

            coef, _ = direct_projection(process, fine, eng)
            # orthonormal projection: ||e - P e||^2 = ||e||^2 - sum coef^2
            assert 1.0 - float(np.sum(coef**2)) <= 1e-10
