import dataclasses
import itertools
import math

import numpy as np
import pytest

from benchmin.biss import SearchBudget, find_necessary
from benchmin.harness import (EvalRecord, SyntheticSpec, compare_methods, cumulative_score_distribution,
                              evaluate_on_full, format_redundancy, generate_synthetic, mean_ci,
                              records_from_csv, records_to_csv, redundancy_report, run_matrix_study,
                              sample_variants, summarize, synthetic_suite)
from benchmin.meta import minimize
from benchmin.oracle import fit_weights, solves
from conftest import make_instance, random_instance


def record(score, method="biss", bench="b", seed=0, fraction=1.0):
    return EvalRecord(bench, method, seed, fraction, 0.0, 1.0, score, 0.0, False, 1)


class TestSampleVariants:
    def test_full_fraction(self):
        assert sample_variants(7, 1.0, 3) == list(range(7))

    def test_count_and_replay(self):
        got = sample_variants(10, 0.25, 5)
        assert len(got) == 3 and got == sorted(set(got))
        assert got == sample_variants(10, 0.25, 5)


class TestStudy:
    def test_full_fraction_matches_solver_tau(self):
        inst = random_instance(np.random.default_rng(0), 6, 12)
        recs = run_matrix_study({"r": inst}, ["biss"], [0, 1], [1.0])
        for r in recs:
            sol = minimize(inst, "biss", seed=r.seed)
            assert r.tau_on_full == sol.achieved_tau == 1.0
            assert r.score == (2 * r.cost_reduction + 2) / 4

    def test_duplicates_half_variants_rank_all(self):
        inst = generate_synthetic(SyntheticSpec(12, 20, "duplicate_blocks", 0.0, 1, blocks=2))
        recs = run_matrix_study({"d": inst}, ["biss", "greedy"], [0, 1, 2], [0.5])
        assert all(r.tau_on_full == 1.0 and r.n_variants_used == 6 for r in recs)

    def test_record_count_and_skips(self):
        insts = {"a": random_instance(np.random.default_rng(1), 2, 5),
                 "b": random_instance(np.random.default_rng(2), 8, 5)}
        with pytest.warns(UserWarning, match="fewer than 2 variants"):
            recs = run_matrix_study(insts, ["biss", "random"], [0, 1, 2], [0.25, 1.0])
        assert len(recs) == 2 * 2 * 3 * 2
        skipped = [r for r in recs if r.skipped]
        assert len(skipped) == 2 * 3 and all(r.benchmark_id == "a" for r in skipped)
        assert all(math.isnan(r.score) for r in skipped)

    def test_reproducible_modulo_wall_time(self):
        inst = random_instance(np.random.default_rng(3), 7, 14)
        strip = lambda recs: [dataclasses.replace(r, wall_seconds=0.0) for r in recs]
        a = run_matrix_study({"x": inst}, ["biss", "pca"], [0, 1], [0.5, 1.0])
        b = run_matrix_study({"x": inst}, ["biss", "pca"], [0, 1], [0.5, 1.0])
        assert strip(a) == strip(b)

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            run_matrix_study({}, ["biss"], [0], [0.0])

    def test_csv_round_trip(self):
        inst = random_instance(np.random.default_rng(4), 5, 8)
        recs = run_matrix_study({"x": inst}, ["biss"], [0, 1], [1.0])
        assert records_from_csv(records_to_csv(recs)) == recs


class TestEvaluateOnFull:
    def test_reuses_restricted_weights(self):
        inst = random_instance(np.random.default_rng(5), 10, 12)
        sub = inst.restrict_variants(range(5))
        sol = minimize(sub, "biss", seed=0)
        assert evaluate_on_full(inst, sol, refit=True) == solves(inst, sol.selected_tests).achieved_tau
        assert -1.0 <= evaluate_on_full(inst, sol) <= 1.0


class TestCdf:
    def test_single_record(self):
        rows = cumulative_score_distribution([record(0.7)])
        assert [(r["score"], r["cdf"]) for r in rows] == [(0.7, 1.0)]

    def test_counts(self):
        rows = cumulative_score_distribution([record(0.5), record(0.5, seed=1), record(1.0, seed=2)])
        assert [(r["score"], r["cdf"]) for r in rows] == [(0.5, 2 / 3), (1.0, 1.0)]

    def test_grouped_row_count(self):
        rng = np.random.default_rng(6)
        recs = [record(float(rng.integers(0, 4)) / 4, method=m, seed=s)
                for m in ("a", "b", "c") for s in range(10)]
        rows = cumulative_score_distribution(recs)
        expect = sum(len({r.score for r in recs if r.method == m}) for m in ("a", "b", "c"))
        assert len(rows) == expect
        for m in ("a", "b", "c"):
            assert [r["cdf"] for r in rows if r["method"] == m][-1] == 1.0


class TestStatistics:
    def test_mean_ci(self):
        m, h = mean_ci([1.0, 2.0, 3.0, 4.0])
        assert m == 2.5
        assert h == pytest.approx(1.96 * math.sqrt(5 / 3) / 2)
        assert mean_ci([2.0]) == (2.0, 0.0)

    def test_summarize_groups(self):
        rows = summarize([record(0.5), record(1.0, seed=1), record(0.75, method="pca")])
        assert [(r["method"], r["n"], r["score_mean"]) for r in rows] == [("biss", 2, 0.75), ("pca", 1, 0.75)]

    def test_wilcoxon_against_sign_flip_enumeration(self):
        diffs = [0.3, 0.1, -0.05, 0.2, 0.25, -0.15, 0.4, 0.35]
        recs = []
        for i, d in enumerate(diffs):
            recs.append(record(0.5 + d, method="a", seed=i))
            recs.append(record(0.5, method="b", seed=i))
        res = compare_methods(recs, "a", "b")
        ranks = {d: r for r, d in enumerate(sorted(diffs, key=abs), start=1)}
        w_plus = sum(ranks[d] for d in diffs if d > 0)
        total = sum(ranks.values())
        tail = sum(1 for signs in itertools.product((0, 1), repeat=len(diffs))
                   if sum(s * ranks[d] for s, d in zip(signs, diffs)) >= w_plus)
        assert res["p_value"] == pytest.approx(tail / 2 ** len(diffs))
        assert res["rank_biserial"] == pytest.approx((w_plus - (total - w_plus)) / total)

    def test_wilcoxon_all_ties(self):
        recs = [record(0.5, method=m, seed=s) for m in ("a", "b") for s in range(3)]
        assert compare_methods(recs, "a", "b")["p_value"] == 1.0


class TestSynthetic:
    def test_single_block_any_test_suffices(self):
        inst = generate_synthetic(SyntheticSpec(6, 10, "duplicate_blocks", 0.0, 0, blocks=1))
        assert all(solves(inst, [t]).feasible for t in inst.test_ids)

    def test_rank_one_column_reconstructs(self):
        inst = generate_synthetic(SyntheticSpec(7, 9, "rank1_noise", 0.0, 0))
        m = inst.matrices[0]
        scale = float(np.abs(m.values.sum(axis=1)).max())
        for t in m.test_ids:
            _, resid = fit_weights(m, [t])
            assert math.sqrt(resid) <= 1e-12 * scale

    def test_adversarial_all_necessary(self):
        inst = generate_synthetic(SyntheticSpec(10, 6, "adversarial_all_necessary", 0.0, 3))
        part = find_necessary(range(6), (), range(6), inst, SearchBudget())
        assert part.necessary == tuple(range(6))

    def test_adversarial_needs_fewer_tests(self):
        with pytest.raises(ValueError):
            generate_synthetic(SyntheticSpec(4, 6, "adversarial_all_necessary"))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SyntheticSpec(5, 10, "duplicate_blocks", blocks=3)
        with pytest.raises(ValueError):
            SyntheticSpec(5, 10, "spiral")

    def test_noise_and_seed(self):
        a = generate_synthetic(SyntheticSpec(5, 8, "rank1_noise", 0.1, 4))
        b = generate_synthetic(SyntheticSpec(5, 8, "rank1_noise", 0.1, 4))
        assert np.array_equal(a.matrices[0].values, b.matrices[0].values)

    def test_suites(self):
        suite = synthetic_suite("small")
        assert len(suite) == 6 and all(i.n_variants >= 2 for i in suite.values())
        with pytest.raises(ValueError):
            synthetic_suite("huge")


class TestRedundancy:
    @pytest.mark.parametrize("n_tests,flagged", [(50, False), (100, True)])
    def test_duplicates(self, n_tests, flagged):
        inst = generate_synthetic(SyntheticSpec(6, n_tests, "duplicate_blocks", 0.0, 0, blocks=1))
        sols = [minimize(inst, "biss", seed=s) for s in range(5)]
        rep = redundancy_report(inst, sols)
        assert rep["median_kept_ratio"] == rep["max_kept_ratio"] == 1 / n_tests
        assert rep["highly_redundant"] is flagged
        assert sum(rep["selection_frequency"].values()) == sum(len(s.tests) for s in sols)
        assert "highly redundant" in format_redundancy(rep)

    def test_adversarial(self):
        inst = generate_synthetic(SyntheticSpec(10, 6, "adversarial_all_necessary", 0.0, 3))
        sols = [minimize(inst, "biss", seed=s) for s in range(3)]
        rep = redundancy_report(inst, sols)
        assert rep["min_kept_ratio"] == 1.0 and not rep["highly_redundant"]

    def test_needs_two_solutions(self):
        inst = make_instance(np.eye(3))
        with pytest.raises(ValueError):
            redundancy_report(inst, [minimize(inst, "biss")])
