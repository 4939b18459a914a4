"""Tests for recovery, detection, and trial-rollup metrics."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from odca.metrics import (
    MetricError,
    TrialOutcome,
    auprc,
    auroc,
    breakdown_degradation,
    mae,
    relative_gain,
    rmse,
    score_streams,
    summarize_trials,
)


class TestRecovery:
    def test_hand_values(self):
        pred = np.array([1.0, 3.0])
        ref = np.array([1.0, 1.0])
        assert rmse(pred, ref) == pytest.approx(np.sqrt(2.0))
        assert mae(pred, ref) == pytest.approx(1.0)

    def test_zero_error(self):
        x = np.array([2.0, 3.0, 4.0])
        assert rmse(x, x) == 0.0
        assert mae(x, x) == 0.0

    def test_reference_gaps_excluded(self):
        pred = np.array([1.0, 99.0, 3.0])
        ref = np.array([1.0, np.nan, 3.0])
        assert rmse(pred, ref) == 0.0

    def test_prediction_gap_on_scored_frame_rejected(self):
        with pytest.raises(MetricError, match="non-finite"):
            rmse(np.array([1.0, np.nan]), np.array([1.0, 2.0]))

    def test_prediction_gap_on_unscored_frame_ok(self):
        assert rmse(np.array([1.0, np.nan]), np.array([1.0, np.nan])) == 0.0

    def test_all_reference_absent(self):
        with pytest.raises(MetricError, match="no valid frames"):
            rmse(np.array([1.0]), np.array([np.nan]))

    def test_shape_mismatch(self):
        with pytest.raises(MetricError, match="shape"):
            rmse(np.ones(3), np.ones(4))

    def test_scale_equivariance(self):
        rng = np.random.default_rng(0)
        pred, ref = rng.normal(size=50), rng.normal(size=50)
        assert rmse(3.0 * pred, 3.0 * ref) == pytest.approx(3.0 * rmse(pred, ref))
        assert mae(3.0 * pred, 3.0 * ref) == pytest.approx(3.0 * mae(pred, ref))

    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, st.integers(1, 60),
                      elements=st.floats(-1e6, 1e6)),
           hnp.arrays(np.float64, st.integers(1, 60),
                      elements=st.floats(-1e6, 1e6)))
    def test_rmse_dominates_mae(self, pred, ref):
        n = min(pred.size, ref.size)
        pred, ref = pred[:n], ref[:n]
        assert rmse(pred, ref) >= mae(pred, ref) - 1e-9


def brute_force_auroc(scores, labels):
    scores = np.asarray(scores, float)
    labels = np.asarray(labels, bool)
    pos = scores[labels]
    neg = scores[~labels]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (pos.size * neg.size)


class TestAuroc:
    def test_hand_value(self):
        scores = [0.1, 0.4, 0.35, 0.8]
        labels = [0, 0, 1, 1]
        assert auroc(scores, labels) == pytest.approx(0.75)

    def test_perfect_and_inverted(self):
        assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auroc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    def test_constant_scores_are_chance(self):
        assert auroc(np.ones(10), [0, 1] * 5) == pytest.approx(0.5)

    def test_single_class_rejected(self):
        with pytest.raises(MetricError, match="both classes"):
            auroc([0.1, 0.2], [1, 1])

    def test_non_finite_rejected(self):
        with pytest.raises(MetricError, match="non-finite"):
            auroc([0.1, np.nan], [0, 1])

    @settings(max_examples=120, deadline=None)
    @given(st.integers(2, 200), st.integers(0, 2**31))
    def test_matches_pairwise_count(self, n, seed):
        rng = np.random.default_rng(seed)
        scores = rng.choice([0.1, 0.25, 0.5, 0.75], size=n)
        labels = rng.random(n) < 0.5
        if labels.all() or not labels.any():
            labels[0] = not labels[0]
        assert auroc(scores, labels) == pytest.approx(brute_force_auroc(scores, labels))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(4, 80), st.integers(0, 2**31))
    def test_monotone_invariance_and_complement(self, n, seed):
        rng = np.random.default_rng(seed)
        scores = rng.normal(size=n)
        labels = rng.random(n) < 0.4
        if labels.all() or not labels.any():
            labels[0] = not labels[0]
        base = auroc(scores, labels)
        assert auroc(3.0 * scores + 2.0, labels) == pytest.approx(base)
        assert auroc(np.exp(scores), labels) == pytest.approx(base)
        assert auroc(-scores, labels) == pytest.approx(1.0 - base)


def brute_force_auprc(scores, labels):
    scores = np.asarray(scores, float)
    labels = np.asarray(labels, bool)
    ap = 0.0
    prev_recall = 0.0
    n_pos = labels.sum()
    for thr in np.unique(scores)[::-1]:
        sel = scores >= thr
        precision = labels[sel].mean()
        recall = labels[sel].sum() / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


class TestAuprc:
    def test_hand_value(self):
        scores = [0.8, 0.6, 0.4, 0.2]
        labels = [1, 0, 1, 0]
        assert auprc(scores, labels) == pytest.approx(0.5 * 1.0 + 0.5 * (2 / 3))

    def test_perfect_ranking(self):
        assert auprc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0

    def test_constant_scores_equal_prevalence(self):
        labels = np.array([1, 0, 0, 1, 0])
        assert auprc(np.ones(5), labels) == pytest.approx(labels.mean())

    @settings(max_examples=80, deadline=None)
    @given(st.integers(2, 120), st.integers(0, 2**31))
    def test_matches_threshold_sweep(self, n, seed):
        rng = np.random.default_rng(seed)
        scores = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=n)
        labels = rng.random(n) < 0.4
        if labels.all() or not labels.any():
            labels[0] = not labels[0]
        assert auprc(scores, labels) == pytest.approx(brute_force_auprc(scores, labels))


class TestRatios:
    def test_breakdown_degradation_values(self):
        assert breakdown_degradation(0.503, 0.229) == pytest.approx(1.1965065502183405)
        assert breakdown_degradation(0.323, 0.111) == pytest.approx(1.9099099099099095)

    def test_relative_gain_values(self):
        assert relative_gain(0.323, 0.503) == pytest.approx(0.35785288270377735)
        assert relative_gain(0.111, 0.229) == pytest.approx(0.5152838427947598)

    def test_identity_cases(self):
        assert breakdown_degradation(0.2, 0.2) == 0.0
        assert relative_gain(0.2, 0.2) == 0.0

    def test_guards(self):
        with pytest.raises(MetricError):
            breakdown_degradation(1.0, 0.0)
        with pytest.raises(MetricError):
            relative_gain(1.0, 0.0)


class TestTrials:
    def test_rates(self):
        outcomes = [TrialOutcome(True, 0.19)] * 24 + [TrialOutcome(False, None)] * 6
        s = summarize_trials(outcomes)
        assert s.n == 30 and s.n_safe == 24
        assert s.success_rate == pytest.approx(0.8)
        assert s.attack_success_rate == pytest.approx(0.2)
        assert s.latency_mean == pytest.approx(0.19)
        assert s.latency_std == pytest.approx(0.0, abs=1e-12)

    def test_latency_stats(self):
        outcomes = [TrialOutcome(True, 0.1), TrialOutcome(True, 0.3), TrialOutcome(False, None)]
        s = summarize_trials(outcomes)
        assert s.latency_mean == pytest.approx(0.2)
        assert s.latency_std == pytest.approx(0.1)

    def test_no_latencies(self):
        s = summarize_trials([TrialOutcome(False, None)])
        assert np.isnan(s.latency_mean)

    def test_empty_rejected(self):
        with pytest.raises(MetricError, match="no trials"):
            summarize_trials([])


class TestScoreStreams:
    def test_nan_scores_dropped_per_stream(self):
        r_xs = np.array([0.1, np.nan, 0.5])
        r_chg = np.array([0.0, 0.2, 0.4])
        labels = np.array([False, True, True])
        streams = score_streams(r_xs, r_chg, labels)
        np.testing.assert_array_equal(streams["xs"][0], [0.1, 0.5])
        np.testing.assert_array_equal(streams["xs"][1], [False, True])
        np.testing.assert_array_equal(streams["chg"][0], r_chg)
        np.testing.assert_array_equal(streams["chg"][1], labels)
