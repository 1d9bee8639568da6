import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from benchmin.matrix import (PerformanceMatrix, Ranking, RtsmInstance, Solution, cost_reduction,
                             full_ranking, kendall_fraction, kendall_tau, ranking_from_totals, score,
                             weighted_ranking)
from conftest import make_instance
from oracles import brute_kendall, loop_totals, sort_ranks


def ranking(ranks):
    return Ranking(np.asarray(ranks), np.zeros(len(ranks)))


def matrix(values):
    values = np.asarray(values, dtype=float)
    return PerformanceMatrix([f"v{i}" for i in range(values.shape[0])],
                             [f"t{j}" for j in range(values.shape[1])], values)


class TestPerformanceMatrix:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            PerformanceMatrix(["a", "b"], ["x"], np.ones((2, 2)))

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite(self, bad):
        with pytest.raises(ValueError, match="non-finite"):
            PerformanceMatrix(["a", "b"], ["x"], [[1.0], [bad]])

    def test_duplicate_ids(self):
        with pytest.raises(ValueError, match="duplicate variant"):
            PerformanceMatrix(["a", "a"], ["x"], [[1.0], [2.0]])
        with pytest.raises(ValueError, match="duplicate test"):
            PerformanceMatrix(["a", "b"], ["x", "x"], np.ones((2, 2)))

    def test_values_are_read_only_copy(self):
        src = np.ones((2, 2))
        m = PerformanceMatrix(["a", "b"], ["x", "y"], src)
        src[0, 0] = 5
        assert m.values[0, 0] == 1
        with pytest.raises(ValueError):
            m.values[0, 0] = 3

    def test_take(self):
        m = matrix([[1, 2, 3], [4, 5, 6]])
        sub = m.take(tests=[2, 0])
        assert sub.test_ids == ("t2", "t0")
        assert sub.values.tolist() == [[3, 1], [6, 4]]


class TestInstance:
    def test_requires_two_variants(self):
        with pytest.raises(ValueError, match="2 variants"):
            make_instance([[1.0, 2.0]])

    def test_cost_rules(self):
        with pytest.raises(ValueError, match="non-negative"):
            make_instance([[1, 2], [3, 4]], costs=[1, -1])
        with pytest.raises(ValueError, match="positive"):
            make_instance([[1, 2], [3, 4]], costs=[0, 0])
        inst = make_instance([[1, 2], [3, 4]], costs=[0, 2])
        assert inst.total_cost == 2

    def test_target_range(self):
        with pytest.raises(ValueError, match="target_tau"):
            make_instance([[1, 2], [3, 4]], target=1.5)

    def test_metrics_must_share_layout(self):
        a = matrix([[1, 2], [3, 4]])
        b = PerformanceMatrix(["v0", "v1"], ["t1", "t0"], [[1, 2], [3, 4]], "other")
        with pytest.raises(ValueError, match="test ids differ"):
            RtsmInstance((a, b), np.ones(2))

    def test_restrict(self):
        inst = make_instance([[1, 2, 3], [4, 5, 6], [7, 8, 9]], costs=[1, 2, 3])
        r = inst.restrict_tests([2, 0])
        assert r.test_ids == ("t0", "t2") and r.costs.tolist() == [1, 3]
        v = inst.restrict_variants([2, 0])
        assert v.variant_ids == ("v0", "v2") and v.n_tests == 3


class TestFullRanking:
    def test_row_sums(self):
        r = full_ranking(matrix([[1, 2], [3, 4]]))
        assert r.rank_by_variant == {1: 1, 0: 2}

    def test_tie_breaks_by_index(self):
        r = full_ranking(matrix([[5], [5]]))
        assert r.rank_by_variant == {0: 1, 1: 2}

    def test_random_integer_matrix_matches_sorted_sums(self):
        vals = np.random.default_rng(3).integers(0, 20, size=(5, 8))
        r = full_ranking(matrix(vals))
        assert r.ranks.tolist() == sort_ranks(loop_totals(vals, range(8)))

    def test_order_inverts_ranks(self):
        r = ranking_from_totals(np.array([1.0, 3.0, 2.0]))
        assert r.order.tolist() == [1, 2, 0]


class TestWeightedRanking:
    def test_identity_weights(self):
        m = matrix(np.random.default_rng(0).random((6, 5)))
        w = {t: 1.0 for t in m.test_ids}
        assert np.array_equal(weighted_ranking(m, m.test_ids, w).ranks, full_ranking(m).ranks)

    def test_single_column(self):
        r = weighted_ranking(matrix([[1, 10], [2, 1]]), ["t0"], {"t0": 1.0})
        assert r.rank_by_variant[1] == 1

    def test_matches_explicit_loop(self):
        rng = np.random.default_rng(1)
        vals = rng.random((4, 6))
        cols = sorted(rng.choice(6, size=3, replace=False).tolist())
        w = rng.random(3) + 0.1
        m = matrix(vals)
        got = weighted_ranking(m, [f"t{c}" for c in reversed(cols)], {f"t{c}": x for c, x in zip(cols, w)})
        assert got.ranks.tolist() == sort_ranks(loop_totals(vals, cols, w))

    def test_missing_weight(self):
        with pytest.raises(KeyError, match="t1"):
            weighted_ranking(matrix([[1, 2], [3, 4]]), ["t0", "t1"], {"t0": 1.0})


class TestKendall:
    def test_identity(self):
        a = ranking([3, 1, 2, 4])
        assert kendall_tau(a, a) == 1.0

    def test_reversal(self):
        assert kendall_tau(ranking([1, 2, 3]), ranking([3, 2, 1])) == -1.0

    def test_one_swap(self):
        assert kendall_fraction(ranking([1, 2, 3]), ranking([1, 3, 2])) == Fraction(1, 3)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            kendall_tau(ranking([1, 2]), ranking([1, 2, 3]))

    @pytest.mark.parametrize("n", range(2, 9))
    def test_exhaustive_against_pair_enumeration(self, n):
        ident = list(range(1, n + 1))
        base = ranking(ident)
        for perm in itertools.permutations(ident):
            assert kendall_fraction(ranking(perm), base) == brute_kendall(perm, ident)

    @given(st.integers(2, 300).flatmap(lambda n: st.tuples(st.permutations(range(1, n + 1)),
                                                           st.permutations(range(1, n + 1)))))
    def test_random_pairs_match_and_are_symmetric(self, pair):
        a, b = pair
        ra, rb = ranking(a), ranking(b)
        expect = brute_kendall(a, b)
        assert kendall_fraction(ra, rb) == expect
        assert kendall_fraction(rb, ra) == expect


class TestScore:
    @pytest.mark.parametrize("red,tau,expect", [(0, 1, 0.5), (1, 1, 1.0), (0.5, 0.0, 0.5)])
    def test_values(self, red, tau, expect):
        assert score(red, tau) == expect

    @pytest.mark.parametrize("red,tau", [(-0.1, 1), (1.1, 1), (0.5, 1.2), (0.5, -1.5)])
    def test_range(self, red, tau):
        with pytest.raises(ValueError):
            score(red, tau)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(-1, 1), st.floats(-1, 1))
    def test_monotone(self, r1, r2, t1, t2):
        lo_r, hi_r = sorted((r1, r2))
        lo_t, hi_t = sorted((t1, t2))
        assert score(lo_r, lo_t) <= score(hi_r, lo_t) <= score(hi_r, hi_t)


def _solution(instance, tests):
    return Solution(tuple(tests), instance.test_ids, {}, 1.0, instance.subset_cost(tests), True)


class TestCostReduction:
    def test_all_tests(self):
        inst = make_instance(np.ones((2, 3)))
        assert cost_reduction(inst, _solution(inst, [0, 1, 2])) == 0.0

    def test_unit_costs_keep_one(self):
        inst = make_instance(np.ones((2, 10)))
        assert cost_reduction(inst, _solution(inst, [4])) == pytest.approx(0.9)

    def test_weighted_costs(self):
        inst = make_instance(np.ones((2, 3)), costs=[2, 3, 5])
        assert cost_reduction(inst, _solution(inst, [2])) == 0.5

    def test_empty_solution_rejected(self):
        inst = make_instance(np.ones((2, 3)))
        with pytest.raises(ValueError):
            _solution(inst, [])


@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 8)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_ranks_are_a_permutation(values):
    r = full_ranking(matrix(values))
    assert sorted(r.ranks.tolist()) == list(range(1, values.shape[0] + 1))
    assert r.ranks.tolist() == sort_ranks(loop_totals(values, range(values.shape[1])))


@given(arrays(np.float64, st.tuples(st.integers(2, 10), st.integers(1, 8)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_full_weights_reproduce_full_ranking(values):
    m = matrix(values)
    got = weighted_ranking(m, m.test_ids, {t: 1.0 for t in m.test_ids})
    assert np.array_equal(got.ranks, full_ranking(m).ranks)
