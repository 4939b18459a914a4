"""Affine cross-sensor alignment: map raw range readings into the depth frame.

The map is ``depth ≈ alpha * lidar + beta``, fitted once per deployment from a
short calibration window of trusted frames and then frozen.  Fitting uses
Huber-weighted iteratively reweighted least squares so a few bad pairs do not
skew the map.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from odca.core import SensorSequence

HUBER_DELTA = 0.1
MAX_ITER = 20
PARAM_TOL = 1e-8
MIN_PAIRS = 8
CONF_MIN = 0.8
CALIB_WINDOW_S = 5.0


class AlignmentError(ValueError):
    """Raised when calibration data cannot support a fit."""


@dataclass(frozen=True)
class AlignmentModel:
    """Frozen affine map from the range sensor to the depth frame."""

    alpha: float
    beta: float
    n_pairs: int = 0

    def apply(self, lidar: np.ndarray | float) -> np.ndarray | float:
        return self.alpha * lidar + self.beta

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AlignmentModel":
        fields = json.loads(text)
        return cls(alpha=float(fields["alpha"]), beta=float(fields["beta"]),
                   n_pairs=int(fields.get("n_pairs", 0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AlignmentModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def huber_loss(residuals: np.ndarray, delta: float = HUBER_DELTA) -> float:
    """Sum of Huber penalties: quadratic inside ``delta``, linear outside."""
    r = np.abs(np.asarray(residuals, dtype=float))
    quad = r <= delta
    out = np.where(quad, 0.5 * r**2, delta * (r - 0.5 * delta))
    return float(out.sum())


def collect_calibration_pairs(
    sequences: SensorSequence | list[SensorSequence],
    window_s: float = CALIB_WINDOW_S,
    conf_min: float = CONF_MIN,
) -> tuple[np.ndarray, np.ndarray]:
    """Pool (lidar, depth) pairs from the leading window of trusted frames.

    A frame qualifies when both channels are present and confidence is at
    least ``conf_min``.
    """
    if isinstance(sequences, SensorSequence):
        sequences = [sequences]
    lidar: list[float] = []
    depth: list[float] = []
    for seq in sequences:
        t0 = seq.frames[0].t if seq.frames else 0.0
        for f in seq.frames:
            if f.t - t0 > window_s:
                break
            if f.depth is None or f.lidar is None:
                continue
            if f.conf is not None and f.conf < conf_min:
                continue
            lidar.append(f.lidar)
            depth.append(f.depth)
    return np.asarray(lidar, dtype=float), np.asarray(depth, dtype=float)


def fit_alignment(
    lidar: np.ndarray,
    depth: np.ndarray,
    delta: float = HUBER_DELTA,
    max_iter: int = MAX_ITER,
    tol: float = PARAM_TOL,
    trace: list[float] | None = None,
) -> AlignmentModel:
    """Robust affine fit ``depth ~ alpha * lidar + beta`` via Huber IRLS.

    Starts from the ordinary least-squares solution and reweights residuals
    until the parameters move less than ``tol`` or ``max_iter`` is reached.
    If ``trace`` is given, the Huber objective is appended at each iterate.
    """
    lidar = np.asarray(lidar, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if lidar.shape != depth.shape or lidar.ndim != 1:
        raise AlignmentError("calibration arrays must be 1-D and equal length")
    if lidar.size < MIN_PAIRS:
        raise AlignmentError(
            f"insufficient calibration data: {lidar.size} pairs, need >= {MIN_PAIRS}"
        )
    if not (np.isfinite(lidar).all() and np.isfinite(depth).all()):
        raise AlignmentError("calibration data contains non-finite values")
    if np.ptp(lidar) < 1e-9:
        raise AlignmentError("rank deficient: calibration range readings are constant")

    X = np.column_stack([lidar, np.ones_like(lidar)])
    params, *_ = np.linalg.lstsq(X, depth, rcond=None)
    if trace is not None:
        trace.append(huber_loss(depth - X @ params, delta))
    for _ in range(max_iter):
        residuals = depth - X @ params
        absr = np.abs(residuals)
        weights = np.where(absr <= delta, 1.0, delta / np.maximum(absr, 1e-12))
        Xw = X * weights[:, None]
        new_params = np.linalg.solve(X.T @ Xw, Xw.T @ depth)
        if trace is not None:
            trace.append(huber_loss(depth - X @ new_params, delta))
        if np.max(np.abs(new_params - params)) < tol:
            params = new_params
            break
        params = new_params
    return AlignmentModel(alpha=float(params[0]), beta=float(params[1]), n_pairs=int(lidar.size))


def fit_from_sequences(
    sequences: list[SensorSequence],
    window_s: float = CALIB_WINDOW_S,
    conf_min: float = CONF_MIN,
) -> AlignmentModel:
    lidar, depth = collect_calibration_pairs(sequences, window_s=window_s, conf_min=conf_min)
    return fit_alignment(lidar, depth)
