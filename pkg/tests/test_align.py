"""Tests for the robust affine range-to-depth alignment."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odca.align import (
    AlignmentError,
    AlignmentModel,
    collect_calibration_pairs,
    fit_alignment,
    fit_from_sequences,
    huber_loss,
)
from odca.core import SensorFrame, SensorSequence


def make_pairs(n=250, alpha=0.97, beta=0.08, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    lidar = rng.uniform(1.0, 20.0, size=n)
    depth = alpha * lidar + beta + rng.normal(0, noise, size=n)
    return lidar, depth


class TestFit:
    def test_exact_recovery(self):
        lidar, depth = make_pairs(noise=0.0)
        model = fit_alignment(lidar, depth)
        assert model.alpha == pytest.approx(0.97, abs=1e-9)
        assert model.beta == pytest.approx(0.08, abs=1e-9)
        assert model.n_pairs == 250

    def test_noisy_fit_matches_least_squares(self):
        # with noise well inside the quadratic zone IRLS reduces to plain
        # least squares, so the oracle is an independent lstsq solve
        lidar, depth = make_pairs(noise=0.01, seed=3)
        model = fit_alignment(lidar, depth)
        X = np.column_stack([lidar, np.ones_like(lidar)])
        ols, *_ = np.linalg.lstsq(X, depth, rcond=None)
        assert model.alpha == pytest.approx(ols[0], abs=1e-9)
        assert model.beta == pytest.approx(ols[1], abs=1e-9)
        assert abs(model.alpha - 0.97) < 0.02
        assert abs(model.beta - 0.08) < 0.02

    def test_outlier_resistance(self):
        # oracle: least squares after deleting the planted outliers
        lidar, depth = make_pairs(n=300, noise=0.01, seed=5)
        rng = np.random.default_rng(99)
        bad = rng.choice(300, size=30, replace=False)
        depth_bad = depth.copy()
        depth_bad[bad] += rng.uniform(2.0, 5.0, size=30) * rng.choice([-1, 1], size=30)

        keep = np.setdiff1d(np.arange(300), bad)
        X_in = np.column_stack([lidar[keep], np.ones(keep.size)])
        oracle, *_ = np.linalg.lstsq(X_in, depth[keep], rcond=None)

        robust = fit_alignment(lidar, depth_bad)
        X_all = np.column_stack([lidar, np.ones_like(lidar)])
        plain, *_ = np.linalg.lstsq(X_all, depth_bad, rcond=None)

        err_robust = abs(robust.alpha - oracle[0]) + abs(robust.beta - oracle[1])
        err_plain = abs(plain[0] - oracle[0]) + abs(plain[1] - oracle[1])
        assert err_robust < 0.5 * err_plain
        assert abs(robust.alpha - oracle[0]) < 0.01
        assert abs(robust.beta - oracle[1]) < 0.05

    def test_objective_non_increasing(self):
        lidar, depth = make_pairs(n=200, noise=0.05, seed=7)
        depth[::17] += 3.0
        trace: list[float] = []
        fit_alignment(lidar, depth, trace=trace)
        assert len(trace) >= 2
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_objective_non_increasing_property(self, seed):
        rng = np.random.default_rng(seed)
        lidar = rng.uniform(0.5, 30.0, size=60)
        depth = 1.1 * lidar - 0.2 + rng.normal(0, 0.3, size=60)
        trace: list[float] = []
        fit_alignment(lidar, depth, trace=trace)
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    def test_insufficient_data(self):
        with pytest.raises(AlignmentError, match="insufficient calibration data"):
            fit_alignment(np.ones(4), np.ones(4))

    def test_rank_deficient(self):
        with pytest.raises(AlignmentError, match="rank deficient"):
            fit_alignment(np.full(20, 3.0), np.linspace(1, 2, 20))

    def test_non_finite_rejected(self):
        lidar, depth = make_pairs(n=20)
        lidar[3] = np.nan
        with pytest.raises(AlignmentError, match="non-finite"):
            fit_alignment(lidar, depth)

    def test_shape_mismatch(self):
        with pytest.raises(AlignmentError, match="equal length"):
            fit_alignment(np.ones(10), np.ones(9))


class TestHuberLoss:
    def test_quadratic_inside(self):
        assert huber_loss(np.array([0.05]), delta=0.1) == pytest.approx(0.5 * 0.05**2)

    def test_linear_outside(self):
        assert huber_loss(np.array([1.0]), delta=0.1) == pytest.approx(0.1 * (1.0 - 0.05))

    def test_continuous_at_delta(self):
        lo = huber_loss(np.array([0.1 - 1e-12]), delta=0.1)
        hi = huber_loss(np.array([0.1 + 1e-12]), delta=0.1)
        assert lo == pytest.approx(hi, abs=1e-10)


class TestModel:
    def test_apply(self):
        model = AlignmentModel(alpha=0.97, beta=0.08)
        assert model.apply(2.0) == pytest.approx(0.97 * 2.0 + 0.08)
        np.testing.assert_allclose(model.apply(np.array([0.0, 10.0])), [0.08, 9.78])

    def test_json_round_trip_exact(self):
        model = AlignmentModel(alpha=0.9701234567890123, beta=-0.0812345678901234, n_pairs=250)
        again = AlignmentModel.from_json(model.to_json())
        assert again == model

    def test_save_load(self, tmp_path):
        model = AlignmentModel(alpha=1.01, beta=0.002, n_pairs=40)
        path = tmp_path / "alignment.json"
        model.save(path)
        assert AlignmentModel.load(path) == model


class TestCalibrationPairs:
    def _seq(self):
        frames = []
        for i in range(400):
            t = i * 0.02
            frames.append(SensorFrame(
                t=t,
                depth=10.0 - 0.01 * i,
                conf=0.9 if i % 10 != 3 else 0.5,
                lidar=None if i % 10 == 7 else 10.2 - 0.01 * i,
            ))
        return SensorSequence(id="calib", frames=tuple(frames))

    def test_window_and_filters(self):
        seq = self._seq()
        lidar, depth = collect_calibration_pairs(seq, window_s=5.0, conf_min=0.8)
        # 251 frames fall within t <= 5.0; drop the low-confidence and missing-lidar slots
        assert lidar.size == depth.size
        assert lidar.size == 251 - 25 - 25
        assert lidar.max() <= 10.2

    def test_pooling_across_sequences(self):
        seq = self._seq()
        l1, _ = collect_calibration_pairs(seq)
        l2, _ = collect_calibration_pairs([seq, seq])
        assert l2.size == 2 * l1.size

    def test_fit_from_sequences(self):
        rng = np.random.default_rng(0)
        frames = []
        for i in range(300):
            t = i * 0.02
            d = 12.0 - 0.02 * i
            frames.append(SensorFrame(
                t=t, depth=d, conf=0.92,
                lidar=(d - 0.08) / 0.97 + float(rng.normal(0, 0.005)),
            ))
        seq = SensorSequence(id="gen", frames=tuple(frames))
        model = fit_from_sequences([seq])
        assert abs(model.alpha - 0.97) < 0.02
        assert abs(model.beta - 0.08) < 0.03
