import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from gefc.circuit import LeafConfig, convert_forest, convert_tree, posterior, predict
from gefc.dataset import DataTable
from gefc.evaluation import (CurvePoint, KdeModel, ScoreSeries,
                             confidence_scores, default_threshold_grid,
                             kde_fit, kde_log_pdf, kde_scores, outlier_scores,
                             rank_extremes, robustness_accuracy_curves,
                             roc_auc)
from gefc.forest import fit_forest, fit_tree

from helpers import make_table
from test_circuit import single_leaf_model


class TestScores:
    def test_outlier_orders_by_distance(self):
        g = single_leaf_model((0.5, 0.5), mu=0.0, sigma=1.0)
        t = DataTable(g.schema, np.array([[0.0], [10.0]]), np.array([0, 0]))
        s = outlier_scores(g, t)
        assert s.scores[0] > s.scores[1]

    def test_row_order_invariance(self):
        rng = np.random.default_rng(0)
        t = make_table(rng, 50, 2)
        mix = convert_forest(fit_forest(t, n_trees=2, seed=0), t)
        fwd = outlier_scores(mix, t).scores
        perm = rng.permutation(t.n)
        bwd = outlier_scores(mix, t.subset(perm)).scores
        np.testing.assert_array_equal(fwd[perm], bwd)

    def test_confidence_uniform_posterior(self):
        g = single_leaf_model((0.5, 0.5))
        t = DataTable(g.schema, np.array([[1.0]]), np.array([0]))
        assert confidence_scores(g, t).scores[0] == pytest.approx(0.5, abs=1e-12)

    def test_confidence_pure_unsmoothed_leaf(self):
        rng = np.random.default_rng(1)
        t = make_table(rng, 30, 1, informative=False)
        t = DataTable(t.schema, t.X, np.zeros(30, dtype=np.int64) )
        g = convert_tree(fit_tree(t, seed=0), t, LeafConfig(alpha=0.0))
        assert confidence_scores(g, t).scores[0] == 1.0

    def test_confidence_is_posterior_at_prediction(self):
        rng = np.random.default_rng(2)
        t = make_table(rng, 60, 2, n_classes=3)
        mix = convert_forest(fit_forest(t, n_trees=3, seed=1), t)
        conf = confidence_scores(mix, t).scores
        for i, x in enumerate(t.X):
            assert conf[i] == pytest.approx(posterior(mix, x)[predict(mix, x)], abs=1e-12)

    def test_nan_scores_rejected(self):
        with pytest.raises(ValueError, match="NaN"):
            ScoreSeries(np.array([np.nan]), np.array([0]))


class TestKde:
    def test_single_kernel_closed_form(self):
        kde = KdeModel(np.array([[0.0]]), np.array([1.0]), np.array([], dtype=np.intp), ())
        assert kde_log_pdf(kde, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_symmetric_kernels(self):
        kde = KdeModel(np.array([[-1.0], [1.0]]), np.array([0.7]),
                       np.array([], dtype=np.intp), ())
        for v in (0.3, 1.2, 2.5):
            assert kde_log_pdf(kde, [v]) == pytest.approx(kde_log_pdf(kde, [-v]), abs=1e-12)

    def test_integrates_to_one_1d(self):
        rng = np.random.default_rng(3)
        t = make_table(rng, 12, 1)
        kde = kde_fit(t)
        total, _ = quad(lambda v: math.exp(kde_log_pdf(kde, [v])), -15, 15, limit=200)
        assert total == pytest.approx(1.0, abs=1e-3)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        t = make_table(rng, 20, 2)
        a = kde_fit(t)
        b = kde_fit(t.subset(rng.permutation(t.n)))
        for x in t.X[:5]:
            assert kde_log_pdf(a, x) == pytest.approx(kde_log_pdf(b, x), abs=1e-12)

    def test_categorical_one_hot(self):
        rng = np.random.default_rng(5)
        t = make_table(rng, 30, 1, cat_cards=(3,))
        kde = kde_fit(t)
        s = kde_scores(kde, t)
        assert np.all(np.isfinite(s.scores))

    def test_needs_two_rows(self):
        rng = np.random.default_rng(6)
        t = make_table(rng, 5, 1).subset([0])
        with pytest.raises(ValueError):
            kde_fit(t)


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([2, 3], [0, 1]) == 1.0

    def test_identical_sets(self):
        assert roc_auc([1, 2, 3], [1, 2, 3]) == 0.5

    def test_matches_quadratic_oracle(self):
        rng = np.random.default_rng(7)
        pos = np.round(rng.normal(0.5, 1, 400), 1)  # rounding forces ties
        neg = np.round(rng.normal(0.0, 1, 600), 1)
        wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
        want = wins / (len(pos) * len(neg))
        assert roc_auc(pos, neg) == pytest.approx(want, abs=1e-12)

    def test_complementarity(self):
        rng = np.random.default_rng(8)
        a = np.round(rng.normal(size=200), 1)
        b = np.round(rng.normal(0.3, 1, size=300), 1)
        assert roc_auc(a, b) + roc_auc(b, a) == pytest.approx(1.0, abs=1e-12)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=30),
           st.lists(st.floats(-100, 100), min_size=1, max_size=30))
    @settings(max_examples=100, deadline=None)
    def test_monotone_transform_invariance(self, a, b):
        a, b = np.array(a), np.array(b)
        before = roc_auc(a, b)

        def squash(v):
            return np.tanh(v / 200.0)  # strictly monotone over the domain

        assert roc_auc(squash(a), squash(b)) == pytest.approx(before, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            roc_auc([], [1.0])


class TestCurves:
    def make_model(self, seed=0):
        rng = np.random.default_rng(seed)
        t = make_table(rng, 120, 2)
        mix = convert_forest(fit_forest(t, n_trees=3, seed=seed), t)
        return t, mix

    def test_all_correct_gives_flat_ones(self):
        t, mix = self.make_model(0)
        preds = np.array([predict(mix, x) for x in t.X])
        correct = DataTable(t.schema, t.X, preds)  # force perfect labels
        pts = robustness_accuracy_curves(mix, correct, thresholds=[0.2, 0.5],
                                         min_bucket=1)
        for p in pts:
            for acc in (p.acc_below, p.acc_above):
                if acc is not None:
                    assert acc == 1.0

    def test_empty_bucket_marked_absent(self):
        t, mix = self.make_model(1)
        pts = robustness_accuracy_curves(mix, t, thresholds=[0.0], min_bucket=1)
        assert pts[0].n_below == 0 and pts[0].acc_below is None

    def test_small_bucket_withheld(self):
        t, mix = self.make_model(2)
        pts = robustness_accuracy_curves(mix, t, thresholds=[0.5], min_bucket=10 ** 6)
        assert pts[0].acc_below is None and pts[0].acc_above is None

    def test_bucket_sizes_partition(self):
        t, mix = self.make_model(3)
        pts = robustness_accuracy_curves(mix, t, min_bucket=30)
        for p in pts:
            assert p.n_below + p.n_above == t.n

    def test_default_grid(self):
        g = default_threshold_grid()
        assert g[0] == 0.0 and g[-1] == 1.0 and len(g) == 21


class TestRankExtremes:
    def test_k_equals_n_permutations(self):
        s = ScoreSeries(np.array([3.0, 1.0, 2.0]), np.array([10, 11, 12]))
        lo, hi = rank_extremes(s, 3)
        assert sorted(lo) == [10, 11, 12] and sorted(hi) == [10, 11, 12]

    def test_k_one(self):
        s = ScoreSeries(np.array([5.0, 1.0, 3.0]), np.array([0, 1, 2]))
        lo, hi = rank_extremes(s, 1)
        assert lo.tolist() == [1] and hi.tolist() == [0]

    def test_shuffle_invariance(self):
        rng = np.random.default_rng(9)
        scores = rng.normal(size=30)
        ids = np.arange(30)
        base = rank_extremes(ScoreSeries(scores, ids), 5)
        perm = rng.permutation(30)
        shuf = rank_extremes(ScoreSeries(scores[perm], ids[perm]), 5)
        np.testing.assert_array_equal(base[0], shuf[0])
        np.testing.assert_array_equal(base[1], shuf[1])

    def test_ties_order_by_id(self):
        s = ScoreSeries(np.array([1.0, 1.0, 0.5]), np.array([7, 3, 9]))
        lo, hi = rank_extremes(s, 2)
        assert lo.tolist() == [9, 3] and hi.tolist() == [3, 7]
