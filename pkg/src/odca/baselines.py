"""Reference estimators the gated repair is measured against.

- ``passthrough``: the observed depth, untouched.
- ``lidar_only``: the aligned range reading, ignoring the camera depth.
- ``ekf``: a 1-D constant-velocity Kalman filter fusing both sensors, with
  the depth measurement de-weighted by its reported confidence.
- ``forecast_replace``: the one-step-ahead forecast mean substituted for
  every frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from odca.align import AlignmentModel
from odca.core import SensorSequence, estimate_dt
from odca.forecast import BootstrapForecaster
from odca.repair import FeatureConfig, FeatureTable, compute_features

BASELINE_NAMES = ("passthrough", "lidar_only", "ekf", "forecast_replace")


def passthrough(seq: SensorSequence) -> np.ndarray:
    """Observed depth, NaN where the sensor reported nothing."""
    return seq.channel("depth")


def lidar_only(seq: SensorSequence, alignment: AlignmentModel) -> np.ndarray:
    """Aligned range reading, NaN where absent."""
    lidar = seq.channel("lidar")
    return np.where(np.isfinite(lidar), alignment.apply(lidar), np.nan)


def forecast_replace(seq: SensorSequence, alignment: AlignmentModel, backend,
                     cfg: FeatureConfig = FeatureConfig(),
                     features: FeatureTable | None = None) -> np.ndarray:
    """One-step-ahead forecast mean for every frame."""
    if features is None:
        features = compute_features(seq, alignment, backend, cfg)
    return features.mu1.copy()


@dataclass(frozen=True)
class KalmanParams:
    """Noise model for the constant-velocity depth filter."""

    q_pos: float = 1e-4
    q_vel: float = 1e-3
    r_depth: float = 1e-2
    r_lidar: float = 4e-2
    conf_floor: float = 0.05


def kalman_depth(seq: SensorSequence, alignment: AlignmentModel,
                 params: KalmanParams = KalmanParams(),
                 return_cov: bool = False):
    """Constant-velocity Kalman filter over [depth, depth-rate].

    Both sensors are applied as sequential scalar updates; the depth
    measurement variance is inflated by ``1 / max(conf, conf_floor)`` so
    low-confidence frames carry little weight.  Updates use the Joseph form
    to keep the covariance symmetric positive definite.
    """
    n = len(seq)
    depth = seq.channel("depth")
    conf = seq.channel("conf")
    lidar = lidar_only(seq, alignment)
    speed = np.nan_to_num(seq.channel("speed"), nan=0.0)
    dt = estimate_dt(seq.timestamps)

    if np.isfinite(depth[0]):
        d0 = depth[0]
    elif np.isfinite(lidar[0]):
        d0 = lidar[0]
    else:
        d0 = 1.0
    x = np.array([d0, -speed[0]])
    P = np.diag([0.25, 0.25])
    F = np.array([[1.0, dt], [0.0, 1.0]])
    Q = np.diag([params.q_pos, params.q_vel])
    H = np.array([1.0, 0.0])
    identity = np.eye(2)

    est = np.empty(n)
    covs = np.empty((n, 2, 2))
    for i in range(n):
        if i > 0:
            x = F @ x
            P = F @ P @ F.T + Q

        updates = []
        if np.isfinite(depth[i]):
            c = conf[i] if np.isfinite(conf[i]) else params.conf_floor
            updates.append((depth[i], params.r_depth / max(c, params.conf_floor)))
        if np.isfinite(lidar[i]):
            updates.append((lidar[i], params.r_lidar))
        for z, r in updates:
            s = H @ P @ H + r
            k = (P @ H) / s
            x = x + k * (z - H @ x)
            ikh = identity - np.outer(k, H)
            P = ikh @ P @ ikh.T + np.outer(k, k) * r
        est[i] = x[0]
        covs[i] = P
    return (est, covs) if return_cov else est


def run_baseline(name: str, seq: SensorSequence, alignment: AlignmentModel,
                 backend=None, cfg: FeatureConfig = FeatureConfig(),
                 features: FeatureTable | None = None) -> np.ndarray:
    """Dispatch a baseline by name onto one sequence."""
    if name == "passthrough":
        return passthrough(seq)
    if name == "lidar_only":
        return lidar_only(seq, alignment)
    if name == "ekf":
        return kalman_depth(seq, alignment)
    if name == "forecast_replace":
        backend = backend if backend is not None else BootstrapForecaster()
        return forecast_replace(seq, alignment, backend, cfg, features=features)
    raise ValueError(f"unknown baseline {name!r}")
