"""Evaluation metrics: signal recovery, detection quality, and trial rollups.

Recovery metrics (RMSE/MAE) skip frames where the reference is absent but are
strict about non-finite predictions — callers must fill gaps deliberately,
not by accident.  Detection metrics follow the rank-statistic conventions:
AUROC is the Mann-Whitney statistic with ties counted half, AUPRC is average
precision (step-wise integral of the precision-recall curve).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    """Raised when a metric is undefined for the given inputs."""


def _paired(pred: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise MetricError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    keep = np.isfinite(ref)
    if not keep.any():
        raise MetricError("reference has no valid frames")
    pred, ref = pred[keep], ref[keep]
    if not np.isfinite(pred).all():
        raise MetricError("prediction contains non-finite values on scored frames")
    return pred, ref


def rmse(pred: np.ndarray, ref: np.ndarray) -> float:
    pred, ref = _paired(pred, ref)
    return float(np.sqrt(np.mean((pred - ref) ** 2)))


def mae(pred: np.ndarray, ref: np.ndarray) -> float:
    pred, ref = _paired(pred, ref)
    return float(np.mean(np.abs(pred - ref)))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties given the average of their span."""
    uniq, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    avg = ends - (counts - 1) / 2.0
    return avg[inverse]


def _scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be 1-D and equal length")
    if not np.isfinite(scores).all():
        raise MetricError("scores contain non-finite values")
    if labels.all() or not labels.any():
        raise MetricError("labels must contain both classes")
    return scores, labels


def auroc(scores, labels) -> float:
    """Probability a positive outranks a negative, ties counted half."""
    scores, labels = _scores_labels(scores, labels)
    ranks = _average_ranks(scores)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision: sum of precision-weighted recall increments."""
    scores, labels = _scores_labels(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    sorted_labels = labels[order]
    sorted_scores = scores[order]
    n_pos = int(labels.sum())

    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(~sorted_labels)
    # evaluate only at the last index of each tied-score block
    block_end = np.flatnonzero(np.diff(sorted_scores) != 0)
    block_end = np.append(block_end, scores.size - 1)
    precision = tp[block_end] / (tp[block_end] + fp[block_end])
    recall = tp[block_end] / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def breakdown_degradation(rmse_strong: float, rmse_weak: float) -> float:
    """Relative growth of the error from the weak to the strong setting."""
    if rmse_weak <= 0:
        raise MetricError("weak-setting error must be positive")
    return (rmse_strong - rmse_weak) / rmse_weak


def relative_gain(rmse_ours: float, rmse_ref: float) -> float:
    """Fraction of the reference error removed: 1 - ours / reference."""
    if rmse_ref <= 0:
        raise MetricError("reference error must be positive")
    return 1.0 - rmse_ours / rmse_ref


@dataclass(frozen=True)
class TrialOutcome:
    """One closed-loop trial: did the vehicle stop safely, and how fast."""

    stopped_safely: bool
    latency_s: float | None = None


@dataclass(frozen=True)
class TrialSummary:
    n: int
    n_safe: int
    success_rate: float
    attack_success_rate: float
    latency_mean: float
    latency_std: float


def summarize_trials(outcomes: list[TrialOutcome]) -> TrialSummary:
    """Roll up closed-loop trials; latency stats cover trials that braked."""
    if not outcomes:
        raise MetricError("no trials to summarize")
    n = len(outcomes)
    n_safe = sum(o.stopped_safely for o in outcomes)
    lat = np.array([o.latency_s for o in outcomes if o.latency_s is not None], dtype=float)
    return TrialSummary(
        n=n,
        n_safe=n_safe,
        success_rate=n_safe / n,
        attack_success_rate=(n - n_safe) / n,
        latency_mean=float(lat.mean()) if lat.size else float("nan"),
        latency_std=float(lat.std()) if lat.size else float("nan"),
    )


def score_streams(r_xs: np.ndarray, r_chg: np.ndarray,
                  labels: np.ndarray) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Detection score streams: cross-sensor residual and applied correction.

    ``r_chg`` is the magnitude of the output change, ``|d_fused - d_tilde|``.
    Frames whose score is NaN (range sensor absent) are dropped from that
    stream.
    """
    labels = np.asarray(labels).astype(bool)
    out = {}
    for name, scores in (("xs", np.asarray(r_xs, float)), ("chg", np.asarray(r_chg, float))):
        keep = np.isfinite(scores)
        out[name] = (scores[keep], labels[keep])
    return out
