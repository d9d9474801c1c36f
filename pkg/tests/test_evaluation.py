import itertools

import numpy as np
import pytest

from ppm_uncertainty import evaluation as ev
from ppm_uncertainty.errors import UndefinedMetricError


def brute_auc(y, s):
    pos, neg = s[y == 1], s[y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


class TestMetrics:
    def test_mae(self):
        assert ev.mae([1.0, 2.0, 3.0], [2.0, 2.0, 5.0]) == 1.0

    def test_mae_empty(self):
        with pytest.raises(UndefinedMetricError):
            ev.mae([], [])

    @pytest.mark.parametrize("seed", range(5))
    def test_auc_matches_pairwise_count(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 2, size=40)
        y[:2] = [0, 1]
        s = np.round(rng.normal(size=40), 1)  # rounding forces ties
        assert ev.auc_roc(y, s) == pytest.approx(brute_auc(y, s), abs=1e-12)

    def test_auc_single_class(self):
        with pytest.raises(UndefinedMetricError):
            ev.auc_roc([1, 1], [0.2, 0.3])


class TestRetention:
    def test_hand_example(self):
        u = np.array([0.4, 0.1, 0.3, 0.2])
        err = np.array([4.0, 1.0, 3.0, 2.0])
        curve = ev.retention_curve(u, err, thresholds=(1.0, 0.5, 0.25))
        assert curve.n_retained == [4, 2, 1]
        assert curve.metric_at == [2.5, 1.5, 1.0]

    def test_ties_keep_input_order(self):
        curve = ev.retention_curve(np.zeros(4), np.array([1.0, 2.0, 3.0, 4.0]), thresholds=(0.5,))
        assert curve.metric_at == [1.5]

    def test_ceil_count(self):
        curve = ev.retention_curve(np.arange(30.0), np.ones(30), thresholds=(0.1, 0.05, 0.01))
        assert curve.n_retained == [3, 2, 1]

    def test_auc_nan_when_one_class(self):
        curve = ev.retention_curve([0.1, 0.2, 0.9], labels=[1, 1, 0], scores=[0.9, 0.8, 0.4], thresholds=(1.0, 0.5))
        assert curve.metric == "auc_roc"
        assert curve.metric_at[0] == 1.0 and np.isnan(curve.metric_at[1])

    def test_rows(self):
        rows = ev.retention_curve([0.1, 0.2], [1.0, 3.0], thresholds=(1.0,)).rows()
        assert rows == [{"threshold": 1.0, "n_retained": 2, "mae": 2.0}]


class TestCalibration:
    def test_standard_normal_critical_value(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=20_000)
        rep = ev.calibrate_intervals(y, np.zeros_like(y), np.ones_like(y), window=5000, stride=5000)
        z95 = rep.critical_values[0][rep.levels.index(0.95)]
        assert abs(z95 - 1.96) < 0.1

    def test_inverted_cdf_quantile(self):
        # normalized residuals 1..10: the 0.5-quantile (inverted cdf) is 5, covering 5 of 10
        y = np.arange(1.0, 11.0)
        with pytest.warns(UserWarning):
            rep = ev.calibrate_intervals(y, np.zeros(10), np.ones(10), window=10, stride=1, levels=(0.5,))
        assert rep.critical_values == [[5.0]] and rep.coverage == [[0.5]]

    def test_checkpoints_need_a_full_following_window(self):
        n = 35
        rep = ev.calibrate_intervals(np.zeros(n), np.zeros(n), np.ones(n), window=10, stride=5)
        assert rep.checkpoints == [10, 15, 20, 25]
        assert rep.n_following == [10] * 4

    def test_short_series_warns(self):
        with pytest.warns(UserWarning, match="single checkpoint"):
            rep = ev.calibrate_intervals(np.ones(5), np.zeros(5), np.ones(5), window=10)
        assert rep.checkpoints == [5]

    def test_zero_uncertainty(self):
        rep = ev.calibrate_intervals(np.array([0.0, 1.0, 0.0, 0.0]), np.zeros(4), np.zeros(4), window=2, levels=(0.5,))
        assert rep.critical_values == [[0.0]]


class TestEarlyBuckets:
    def test_masks_are_cumulative(self):
        d = np.array([0.0, 0.5, 1.0, 3.0, 20.0])
        masks = ev.bucket_masks(d, 10.0, (0.05, 0.1, 1.0, "all"))
        assert [int(m.sum()) for _, m in masks] == [2, 3, 4, 5]
        assert masks[-1][0] == np.inf

    def test_report(self):
        d = np.array([0.0, 0.0, 5.0, 5.0])
        rep = ev.early_buckets(d, [0.1, 0.2, 0.3, 0.4], [1.0, 3.0, 5.0, 7.0],
                               median_case_days=10.0, fractions=(0.01, 0.5, "all"), thresholds=(1.0, 0.5))
        assert rep.sizes == [2, 4, 4]
        assert rep.curves[0].metric_at == [2.0, 1.0]
        assert rep.curves[2].metric_at == [4.0, 2.0]

    def test_median_from_case_durations(self):
        rep = ev.early_buckets([1.0], [0.1], [1.0], case_duration=[2.0, 4.0, 100.0], fractions=("all",))
        assert rep.median_case_days == 4.0

    def test_empty_bucket(self):
        rep = ev.early_buckets([5.0], [0.1], [1.0], median_case_days=10.0, fractions=(0.1,))
        assert rep.curves == [None] and rep.sizes == [0]

    def test_train_filter(self):
        class S:
            def __init__(self, d):
                self.prefix_duration_days = d
        kept = ev.bucket_train_filter([S(0.0), S(1.0), S(2.0)], 1.0)
        assert [s.prefix_duration_days for s in kept] == [0.0, 1.0]
