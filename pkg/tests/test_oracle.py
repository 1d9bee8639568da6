import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from benchmin.oracle import FeasibilityOracle, fit_weights, solves, solves_in_context
from conftest import make_instance, random_instance
from oracles import loop_totals, reference_feasible, reference_tau, sort_ranks


def _residual(values, cols, w):
    pred = np.asarray(loop_totals(values, cols, w))
    target = np.asarray(loop_totals(values, range(values.shape[1])))
    return float(((pred - target) ** 2).sum())


class TestFitWeights:
    def test_full_set_reconstructs_totals(self):
        inst = random_instance(np.random.default_rng(0), 8, 5)
        m = inst.matrices[0]
        w, resid = fit_weights(m, m.test_ids)
        assert resid == pytest.approx(0.0, abs=1e-18)
        assert all(x == pytest.approx(1.0, rel=1e-9) for x in w.values())

    def test_full_set_wide_matrix_is_exact(self):
        inst = random_instance(np.random.default_rng(1), 4, 9)
        m = inst.matrices[0]
        w, resid = fit_weights(m, m.test_ids)
        pred = loop_totals(m.values, range(9), [w[t] for t in m.test_ids])
        total = loop_totals(m.values, range(9))
        assert np.allclose(pred, total, rtol=1e-9, atol=0)

    def test_single_column_equal_to_totals(self):
        rng = np.random.default_rng(2)
        extra = rng.random((5, 1))
        vals = np.hstack([rng.random((5, 1)), extra, -extra])
        m = make_instance(vals).matrices[0]
        w, resid = fit_weights(m, ["t0"])
        assert w == {"t0": pytest.approx(1.0, rel=1e-12)}
        assert resid == pytest.approx(0.0, abs=1e-20)

    def test_two_columns_match_cramer(self):
        vals = np.random.default_rng(3).random((6, 4))
        m = make_instance(vals).matrices[0]
        y = vals.sum(axis=1)
        a, b = vals[:, 1], vals[:, 3]
        # normal equations [[aa, ab], [ab, bb]] w = [ay, by]
        aa, ab, bb, ay, by = a @ a, a @ b, b @ b, a @ y, b @ y
        det = aa * bb - ab * ab
        expect = ((ay * bb - ab * by) / det, (aa * by - ab * ay) / det)
        w, _ = fit_weights(m, ["t3", "t1"])
        assert w["t1"] == pytest.approx(expect[0], abs=1e-8)
        assert w["t3"] == pytest.approx(expect[1], abs=1e-8)

    def test_rank_deficient_gives_minimum_norm(self):
        base = np.random.default_rng(4).random((5, 1))
        vals = np.hstack([base, base, base])
        w, _ = fit_weights(make_instance(vals).matrices[0], ["t0", "t1"])
        # total = 3*base; minimum-norm split is equal weights
        assert w["t0"] == pytest.approx(1.5) and w["t1"] == pytest.approx(1.5)

    def test_clamp_negative(self):
        vals = np.array([[1.0, 2.0, 0.0], [2.0, 1.0, 3.0], [3.0, 5.0, 1.0], [0.5, 0.1, 2.0]])
        free, _ = fit_weights(make_instance(vals).matrices[0], ["t0", "t1"])
        clamped, _ = fit_weights(make_instance(vals).matrices[0], ["t0", "t1"], clamp_negative=True)
        assert min(free.values()) < 0
        assert min(clamped.values()) >= 0

    def test_ridge_shrinks(self):
        vals = np.random.default_rng(5).random((6, 4))
        m = make_instance(vals).matrices[0]
        plain, _ = fit_weights(m, ["t0", "t1"])
        ridged, _ = fit_weights(m, ["t0", "t1"], ridge=10.0)
        assert np.linalg.norm(list(ridged.values())) < np.linalg.norm(list(plain.values()))

    def test_empty_subset(self):
        with pytest.raises(ValueError):
            fit_weights(make_instance(np.ones((2, 2))).matrices[0], [])


class TestSolves:
    @pytest.mark.parametrize("target", [-1.0, 0.0, 0.5, 1.0])
    def test_full_set_always_feasible(self, target):
        inst = random_instance(np.random.default_rng(6), 7, 5, metrics=2, target=target)
        res = solves(inst, inst.test_ids)
        assert res.feasible and res.worst_tau == 1
        assert all(t == 1.0 for t in res.per_metric_tau.values())

    def test_two_variants_split_by_one_test(self):
        # identical except on t2, where v1 wins; without t2 the tie resolves to v0
        vals = np.array([[1.0, 2.0, 0.0], [1.0, 2.0, 1.0]])
        inst = make_instance(vals)
        for subset in ([0, 1], [0], [1]):
            ids = [f"t{j}" for j in subset]
            assert not reference_feasible([vals], range(3), subset, 1.0)
            assert not solves(inst, ids).feasible
        assert solves(inst, ["t2"]).feasible

    def test_two_variants_with_sign_check(self):
        vals = np.array([[3.0, 1.0, 0.0], [1.0, 2.0, 1.5]])
        inst = make_instance(vals)
        for r in (1, 2):
            for subset in itertools.combinations(range(3), r):
                expect = reference_feasible([vals], range(3), subset, 1.0)
                assert solves(inst, [f"t{j}" for j in subset]).feasible == expect

    @pytest.mark.parametrize("seed", [0, 1])
    def test_exhaustive_sweep_matches_reference(self, seed):
        vals = np.random.default_rng(seed).random((5, 10))
        inst = make_instance(vals)
        oracle = FeasibilityOracle(inst)
        ctx = tuple(range(10))
        for r in range(1, 11):
            for subset in itertools.combinations(range(10), r):
                assert oracle.feasible(ctx, subset) == reference_feasible([vals], ctx, subset, 1.0), subset

    def test_target_below_one(self):
        vals = np.random.default_rng(7).random((8, 6))
        inst = make_instance(vals, target=0.5)
        for subset in itertools.combinations(range(6), 2):
            tau = reference_tau(vals, range(6), subset)
            res = solves(inst, [f"t{j}" for j in subset])
            assert res.worst_tau == tau
            assert res.feasible == (tau >= Fraction(1, 2))

    def test_multi_metric_takes_worst(self):
        rng = np.random.default_rng(8)
        a, b = rng.random((6, 5)), rng.random((6, 5))
        inst = make_instance(a, b)
        res = solves(inst, ["t0", "t1"])
        expect = min(reference_tau(a, range(5), [0, 1]), reference_tau(b, range(5), [0, 1]))
        assert res.worst_tau == expect

    def test_empty_subset(self):
        with pytest.raises(ValueError):
            solves(make_instance(np.ones((2, 2))), [])


class TestSolvesInContext:
    def test_identity(self):
        inst = random_instance(np.random.default_rng(9), 5, 6)
        ctx = ["t1", "t3", "t4"]
        res = solves_in_context(ctx, ctx, inst)
        assert res.feasible and res.achieved_tau == 1.0

    def test_restriction_equivalence(self):
        rng = np.random.default_rng(10)
        vals = rng.random((4, 8))
        inst = make_instance(vals)
        ctx = [1, 2, 5, 7]
        sub_inst = inst.restrict_tests(ctx)
        for r in range(1, 5):
            for subset in itertools.combinations(ctx, r):
                full = solves_in_context([f"t{j}" for j in ctx], [f"t{j}" for j in subset], inst)
                local = solves(sub_inst, [f"t{j}" for j in subset])
                assert full.feasible == local.feasible
                assert full.worst_tau == local.worst_tau

    def test_local_ranking_is_the_target(self):
        vals = np.array([[0.0, 0.0, 0.0, 9.0],
                         [1.0, 1.0, 1.0, 0.0],
                         [0.0, 2.0, 2.0, 0.0]])
        # context sums 0, 3, 4 reverse the order; all four tests rank v0 first
        assert sort_ranks(loop_totals(vals, [0, 1, 2])) == [3, 2, 1]
        assert sort_ranks(loop_totals(vals, range(4))) == [1, 3, 2]
        inst = make_instance(vals)
        local = solves_in_context(["t0", "t1", "t2"], ["t1"], inst)
        assert local.feasible and local.worst_tau == 1
        assert local.weights["m0"]["t1"] == pytest.approx(11 / 5)
        assert not solves(inst, ["t1"]).feasible

    def test_subset_outside_context(self):
        inst = random_instance(np.random.default_rng(11), 4, 4)
        with pytest.raises(ValueError, match="t3"):
            solves_in_context(["t0", "t1"], ["t0", "t3"], inst)


class TestOracleCache:
    def test_memo_and_counter(self):
        inst = random_instance(np.random.default_rng(12), 6, 6)
        oracle = FeasibilityOracle(inst)
        ctx = tuple(range(6))
        first = oracle.feasible(ctx, (0, 2))
        fits = oracle.n_fits
        assert oracle.feasible(ctx, (0, 2)) == first
        assert oracle.n_fits == fits

    def test_identity_needs_no_fit(self):
        inst = random_instance(np.random.default_rng(13), 6, 6)
        oracle = FeasibilityOracle(inst)
        assert oracle.feasible(range(6), range(6))
        assert oracle.n_fits == 0

    def test_deterministic_results(self):
        inst = random_instance(np.random.default_rng(14), 7, 9, metrics=2)
        a = FeasibilityOracle(inst).evaluate(range(9), (1, 4, 6))
        b = FeasibilityOracle(inst).evaluate(range(9), (1, 4, 6))
        assert a == b


@given(st.integers(0, 10_000), st.integers(3, 9), st.integers(2, 8))
def test_fitted_weights_are_first_order_optimal(seed, n_v, n_t):
    rng = np.random.default_rng(seed)
    vals = rng.random((n_v, n_t))
    m = make_instance(vals).matrices[0]
    k = int(rng.integers(1, n_t + 1))
    cols = sorted(rng.choice(n_t, size=k, replace=False).tolist())
    w, _ = fit_weights(m, [f"t{c}" for c in cols])
    base = [w[f"t{c}"] for c in cols]
    r0 = _residual(vals, cols, base)
    eps = 1e-6
    for i in range(len(cols)):
        for sign in (1, -1):
            moved = list(base)
            moved[i] += sign * eps
            assert _residual(vals, cols, moved) >= r0 - 1e-9


@given(st.integers(0, 10_000))
def test_supersets_never_fit_worse(seed):
    rng = np.random.default_rng(seed)
    vals = rng.random((6, 8))
    m = make_instance(vals).matrices[0]
    small = sorted(rng.choice(8, size=3, replace=False).tolist())
    extra = [c for c in range(8) if c not in small][: int(rng.integers(1, 5))]
    _, r_small = fit_weights(m, [f"t{c}" for c in small])
    _, r_big = fit_weights(m, [f"t{c}" for c in small + extra])
    assert r_big <= r_small + 1e-12
