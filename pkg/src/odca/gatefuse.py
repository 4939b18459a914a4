"""Gated fusion of the observed depth with its learned repair.

The gate converts the cross-sensor residual into a fusion weight

    w = clip((r_xs - tau_low) / (tau_high - tau_low), 0, 1) ** gamma

and the output is the convex blend ``(1 - w) * observed + w * repaired``.
Below ``tau_low`` the blend weight is exactly zero and the observed value
passes through bit-for-bit; when the range sensor is absent the gate fails
safe to ``w = 1`` and the repair is used outright.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from odca.align import AlignmentModel
from odca.core import SensorSequence, estimate_dt
from odca.repair import DeltaHead, FeatureConfig, FeatureTable, compute_features, forecast_step

RESULT_COLUMNS = (
    "t", "d_clean", "d_tilde", "d_rep", "d_fused", "w",
    "r_xs", "r_delta", "r_post", "label", "step_latency_us",
)


@dataclass(frozen=True)
class GateParams:
    """Thresholds for turning the cross-sensor residual into a blend weight."""

    tau_low: float = 0.15
    tau_high: float = 0.60
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if not self.tau_low < self.tau_high:
            raise ValueError(
                f"tau_low must be < tau_high, got {self.tau_low} >= {self.tau_high}"
            )
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


def gate_weight(r_xs: np.ndarray | float, params: GateParams = GateParams()) -> np.ndarray | float:
    """Blend weight in [0, 1]; a missing residual (NaN) fails safe to 1."""
    r = np.asarray(r_xs, dtype=float)
    raw = (r - params.tau_low) / (params.tau_high - params.tau_low)
    w = np.clip(raw, 0.0, 1.0) ** params.gamma
    w = np.where(np.isnan(r), 1.0, w)
    return float(w) if np.isscalar(r_xs) else w


def fuse(d_tilde: float, d_rep: float, w: float) -> float:
    """Convex blend of observed and repaired depth.

    ``w == 0`` and ``w == 1`` short-circuit so the endpoints are returned
    bit-exactly, not reconstructed through arithmetic.
    """
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"fusion weight must be in [0, 1], got {w}")
    if w == 0.0:
        return d_tilde
    if w == 1.0:
        return d_rep
    return (1.0 - w) * d_tilde + w * d_rep


@dataclass
class RepairRun:
    """Per-frame outputs of one gated-repair pass over a sequence."""

    seq_id: str
    t: np.ndarray
    d_tilde: np.ndarray  # working observation (forecast mean during dropouts)
    d_rep: np.ndarray  # d_tilde + learned correction
    d_fused: np.ndarray  # gated blend
    w: np.ndarray
    r_xs: np.ndarray  # NaN where the range sensor is absent
    r_delta: np.ndarray  # |correction|
    r_post: np.ndarray  # residual of the fused output vs aligned range
    label: np.ndarray  # bool attack labels (False when unlabeled)
    latency_us: np.ndarray  # NaN when the run was not timed

    def __len__(self) -> int:
        return self.t.size


def run_sequence(seq: SensorSequence, head: DeltaHead, alignment: AlignmentModel,
                 backend, cfg: FeatureConfig = FeatureConfig(),
                 gate: GateParams = GateParams(),
                 features: FeatureTable | None = None,
                 timing: bool = False) -> RepairRun:
    """Run gated repair over one sequence.

    With precomputed ``features`` the pass is vectorized and the latency
    column is NaN.  With ``timing=True`` each frame is processed and timed
    individually, covering forecast, correction, gate, and fusion.
    """
    n = len(seq)
    label = seq.label_array() if seq.labels is not None else np.zeros(n, dtype=bool)

    if timing or features is None:
        depth = seq.channel("depth")
        conf = seq.channel("conf")
        lidar = seq.channel("lidar")
        dt = estimate_dt(seq.timestamps)
        lidar_aligned = np.where(np.isfinite(lidar), alignment.apply(lidar), np.nan)
        speed = np.nan_to_num(seq.channel("speed"), nan=0.0)
        throttle = np.nan_to_num(seq.channel("throttle"), nan=0.0)
        steering = np.nan_to_num(seq.channel("steering"), nan=0.0)

        work = np.empty(n)
        d_tilde_arr = np.empty(n)
        d_rep = np.empty(n)
        d_fused = np.empty(n)
        w_arr = np.empty(n)
        r_xs = np.empty(n)
        r_delta = np.empty(n)
        r_post = np.empty(n)
        latency = np.full(n, np.nan)
        for i in range(n):
            tic = time.perf_counter_ns() if timing else 0
            mu1, sigma1 = forecast_step(work, i, seq.id, backend, cfg,
                                        depth[0], lidar_aligned[0])
            missing = not np.isfinite(depth[i])
            d_tilde = mu1 if missing else depth[i]
            d_tilde_arr[i] = d_tilde
            conf_work = conf[i] if (np.isfinite(conf[i]) and not missing) else 0.0
            row = np.array([d_tilde, conf_work, mu1, sigma1, speed[i],
                            throttle[i], steering[i], dt])
            delta = float(head.delta(row)[0])
            d_rep[i] = d_tilde + delta
            r_xs[i] = abs(d_tilde - lidar_aligned[i])
            w_i = 1.0 if missing else gate_weight(float(r_xs[i]), gate)
            d_fused[i] = fuse(d_tilde, d_rep[i], w_i)
            w_arr[i] = w_i
            r_delta[i] = abs(delta)
            r_post[i] = abs(d_fused[i] - lidar_aligned[i])
            suspect = (cfg.subst_threshold is not None
                       and np.isfinite(r_xs[i]) and r_xs[i] > cfg.subst_threshold)
            work[i] = mu1 if (missing or suspect) else d_tilde
            if timing:
                latency[i] = (time.perf_counter_ns() - tic) / 1000.0
        return RepairRun(seq_id=seq.id, t=seq.timestamps, d_tilde=d_tilde_arr,
                         d_rep=d_rep, d_fused=d_fused, w=w_arr, r_xs=r_xs,
                         r_delta=r_delta, r_post=r_post, label=label,
                         latency_us=latency)

    delta = head.delta(features.X)
    d_tilde = features.d_work
    d_rep = d_tilde + delta
    missing = ~np.isfinite(seq.channel("depth"))
    w_arr = np.where(missing, 1.0, gate_weight(features.r_xs, gate))
    d_fused = np.array([fuse(d_tilde[i], d_rep[i], w_arr[i]) for i in range(n)])
    r_post = np.abs(d_fused - features.lidar_aligned)
    return RepairRun(seq_id=seq.id, t=seq.timestamps, d_tilde=d_tilde.copy(),
                     d_rep=d_rep, d_fused=d_fused, w=np.asarray(w_arr, dtype=float),
                     r_xs=features.r_xs.copy(), r_delta=np.abs(delta),
                     r_post=r_post, label=label, latency_us=np.full(n, np.nan))


def _cell(value: float) -> str:
    return "" if not np.isfinite(value) else repr(float(value))


def write_results_csv(path: str | Path, run: RepairRun,
                      d_clean: np.ndarray | None = None) -> None:
    """Write the per-frame results table; absent values are empty cells."""
    clean = np.full(len(run), np.nan) if d_clean is None else np.asarray(d_clean, float)
    if clean.size != len(run):
        raise ValueError("reference depth length does not match the run")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for i in range(len(run)):
            writer.writerow([
                repr(float(run.t[i])), _cell(clean[i]), _cell(run.d_tilde[i]),
                _cell(run.d_rep[i]), _cell(run.d_fused[i]), _cell(run.w[i]),
                _cell(run.r_xs[i]), _cell(run.r_delta[i]), _cell(run.r_post[i]),
                str(int(run.label[i])), _cell(run.latency_us[i]),
            ])


def read_results_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Read a results table back into float arrays (NaN for empty cells)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != RESULT_COLUMNS:
            raise ValueError(f"unexpected results header: {header}")
        rows = [[float(cell) if cell else np.nan for cell in row] for row in reader]
    data = np.array(rows, dtype=float) if rows else np.empty((0, len(RESULT_COLUMNS)))
    return {name: data[:, k] for k, name in enumerate(RESULT_COLUMNS)}
