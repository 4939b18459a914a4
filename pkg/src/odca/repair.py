"""Learned additive depth correction and its training loop.

The corrector is a deliberately small one-hidden-layer network (tanh, 92
units, 921 parameters) that maps a per-frame feature vector to a scalar
correction ``delta``; the repaired depth is ``d_work + delta``.  Features are
causal: the forecast statistics for frame ``t`` come from a context window
that ends at ``t - 1``, and absent depth readings are replaced by the
forecast mean, so the same feature pipeline serves training and deployment.

Training minimizes a four-term objective:

- reconstruction against the reference depth on trusted frames,
- a pull toward zero correction on clean frames,
- consistency with the aligned range sensor where the two sensors disagree,
- a kinematic prior tying successive repaired depths to ``-speed * dt``.

Gradients are computed with explicit backprop so they can be verified against
finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from odca.align import AlignmentModel
from odca.core import SensorSequence, estimate_dt, stable_seed
from odca.forecast import DEFAULT_HORIZON, DEFAULT_SAMPLES, run_forecast

N_FEATURES = 8
HIDDEN_UNITS = 92
FEATURE_NAMES = ("d_work", "conf", "mu1", "sigma1", "speed", "throttle", "steering", "dt")
DEFAULT_WINDOW = 64


class TrainingError(RuntimeError):
    """Raised when optimization cannot proceed (divergence, bad data)."""


@dataclass(frozen=True)
class FeatureConfig:
    """Knobs for the causal feature pipeline.

    ``subst_threshold`` protects the forecast context from corrupted
    measurements: a frame whose cross-sensor residual exceeds it contributes
    the forecast mean, not the suspect reading, to later context windows.
    ``None`` disables the substitution (pure temporal context).
    """

    window: int = DEFAULT_WINDOW
    horizon: int = DEFAULT_HORIZON
    n_samples: int = DEFAULT_SAMPLES
    seed: int = 0
    subst_threshold: float | None = 0.15


@dataclass(frozen=True)
class FeatureTable:
    """Per-frame causal features for one sequence."""

    X: np.ndarray  # (n, N_FEATURES)
    d_work: np.ndarray  # observed depth, forecast mean where absent
    conf_work: np.ndarray  # observed confidence, 0 where absent
    mu1: np.ndarray  # one-step-ahead forecast mean
    sigma1: np.ndarray  # one-step-ahead forecast spread
    lidar_aligned: np.ndarray  # range reading mapped to depth frame, NaN where absent
    r_xs: np.ndarray  # |d_work - lidar_aligned|, NaN where range absent
    dt: float


def forecast_step(work: np.ndarray, t: int, seq_id: str, backend,
                  cfg: FeatureConfig,
                  first_depth: float, first_lidar_aligned: float) -> tuple[float, float]:
    """One-step-ahead forecast stats for frame ``t`` from the working series.

    ``work[:t]`` must already be filled.  Frame 0 has no past, so its
    "forecast" falls back to the first observation (depth, else the aligned
    range reading, else 1 m) with zero spread.
    """
    if t == 0:
        if np.isfinite(first_depth):
            return float(first_depth), 0.0
        if np.isfinite(first_lidar_aligned):
            return float(first_lidar_aligned), 0.0
        return 1.0, 0.0
    ctx = work[max(0, t - cfg.window):t]
    if ctx.size < 2:
        ctx = np.concatenate([[ctx[0]], ctx])
    res = run_forecast(backend, ctx, horizon=cfg.horizon, n_samples=cfg.n_samples,
                       seed=stable_seed(cfg.seed, seq_id, t))
    return float(res.mu[0]), float(res.sigma[0])


def compute_features(seq: SensorSequence, alignment: AlignmentModel, backend,
                     cfg: FeatureConfig = FeatureConfig()) -> FeatureTable:
    """Build the causal per-frame feature table for one sequence.

    The working depth series feeds the forecaster: observed values are used
    as-is, absent ones are replaced by the forecast mean for that step, so
    the series (and everything derived from it) never looks ahead.  Frames
    that disagree with the aligned range reading by more than
    ``cfg.subst_threshold`` also contribute the forecast mean to later
    contexts, keeping the temporal prior anchored to plausible dynamics
    while the per-frame features still carry the raw observation.
    """
    n = len(seq)
    depth = seq.channel("depth")
    conf = seq.channel("conf")
    lidar = seq.channel("lidar")
    dt = estimate_dt(seq.timestamps)

    lidar_aligned = np.where(np.isfinite(lidar), alignment.apply(lidar), np.nan)

    work = np.empty(n)
    d_work = np.empty(n)
    mu1 = np.empty(n)
    sigma1 = np.empty(n)
    for t in range(n):
        mu1[t], sigma1[t] = forecast_step(work, t, seq.id, backend, cfg,
                                          depth[0], lidar_aligned[0])
        d_work[t] = depth[t] if np.isfinite(depth[t]) else mu1[t]
        r = abs(d_work[t] - lidar_aligned[t])
        suspect = (cfg.subst_threshold is not None and np.isfinite(r)
                   and r > cfg.subst_threshold)
        work[t] = mu1[t] if (suspect or not np.isfinite(depth[t])) else d_work[t]

    conf_work = np.where(np.isfinite(conf), conf, 0.0)
    conf_work = np.where(np.isfinite(depth), conf_work, 0.0)
    r_xs = np.abs(d_work - lidar_aligned)

    speed = np.nan_to_num(seq.channel("speed"), nan=0.0)
    throttle = np.nan_to_num(seq.channel("throttle"), nan=0.0)
    steering = np.nan_to_num(seq.channel("steering"), nan=0.0)
    X = np.column_stack([
        d_work, conf_work, mu1, sigma1, speed, throttle, steering, np.full(n, dt),
    ])
    return FeatureTable(X=X, d_work=d_work, conf_work=conf_work, mu1=mu1,
                        sigma1=sigma1, lidar_aligned=lidar_aligned, r_xs=r_xs, dt=dt)


class DeltaHead:
    """One-hidden-layer tanh network producing the additive depth correction."""

    def __init__(self, hidden: int = HIDDEN_UNITS, n_features: int = N_FEATURES,
                 seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        self.n_features = n_features
        self.hidden = hidden
        self.W1 = rng.normal(0, 1.0 / np.sqrt(n_features), size=(hidden, n_features))
        self.b1 = np.zeros(hidden)
        self.W2 = rng.normal(0, 0.1 / np.sqrt(hidden), size=hidden)
        self.b2 = 0.0
        self.feat_mean = np.zeros(n_features)
        self.feat_scale = np.ones(n_features)

    @property
    def n_params(self) -> int:
        return self.W1.size + self.b1.size + self.W2.size + 1

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2, [self.b2]])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        h, f = self.hidden, self.n_features
        self.W1 = flat[: h * f].reshape(h, f).copy()
        self.b1 = flat[h * f : h * f + h].copy()
        self.W2 = flat[h * f + h : h * f + 2 * h].copy()
        self.b2 = float(flat[-1])

    def set_normalization(self, X: np.ndarray) -> None:
        """Freeze feature standardization from a training design matrix."""
        self.feat_mean = X.mean(axis=0)
        self.feat_scale = np.maximum(X.std(axis=0), 1e-6)

    def _standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.feat_mean) / self.feat_scale

    def delta(self, X: np.ndarray) -> np.ndarray:
        """Correction for each feature row; shape (n,).

        Rows are evaluated one at a time so that batched and per-frame
        calls produce bit-identical results (batched matrix products may
        reorder float summation).
        """
        xs = self._standardize(np.atleast_2d(X))
        out = np.empty(xs.shape[0])
        for i in range(xs.shape[0]):
            hidden = np.tanh(self.W1 @ xs[i] + self.b1)
            out[i] = hidden @ self.W2 + self.b2
        return out

    def repair(self, X: np.ndarray, d_work: np.ndarray) -> np.ndarray:
        return np.asarray(d_work, dtype=float) + self.delta(X)

    # -- persistence -------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({
            "arch": {"n_features": self.n_features, "hidden": self.hidden},
            "feat_mean": self.feat_mean.tolist(),
            "feat_scale": self.feat_scale.tolist(),
            "params": self.get_flat().tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "DeltaHead":
        doc = json.loads(text)
        head = cls(hidden=int(doc["arch"]["hidden"]),
                   n_features=int(doc["arch"]["n_features"]))
        head.set_flat(np.array(doc["params"], dtype=float))
        head.feat_mean = np.array(doc["feat_mean"], dtype=float)
        head.feat_scale = np.array(doc["feat_scale"], dtype=float)
        return head

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DeltaHead":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class LossParams:
    """Weights and masks for the four-term training objective."""

    lam_id: float = 1.0
    lam_delta0: float = 0.1
    lam_cons: float = 0.5
    lam_kin: float = 0.2
    attacked_region_boost: float = 4.0
    conf_high: float = 0.5
    tau_low: float = 0.15


@dataclass(frozen=True)
class LossBreakdown:
    id: float
    delta0: float
    cons: float
    kin: float
    total: float


@dataclass
class RepairDataset:
    """Flat per-frame arrays pooled across sequences for training."""

    X: np.ndarray  # (N, N_FEATURES)
    d_work: np.ndarray
    d_clean: np.ndarray
    lidar_aligned: np.ndarray  # NaN where absent
    r_xs: np.ndarray  # NaN where range absent
    attacked: np.ndarray  # bool
    conf: np.ndarray
    speed: np.ndarray
    dt: np.ndarray
    pair_ok: np.ndarray  # bool: frame i+1 belongs to the same sequence

    def __len__(self) -> int:
        return self.X.shape[0]

    def pair_indices(self) -> np.ndarray:
        return np.flatnonzero(self.pair_ok)


def build_dataset(items: list[tuple[SensorSequence, SensorSequence, FeatureTable]]) -> RepairDataset:
    """Pool (attacked, clean, features) triples into flat training arrays."""
    xs, works, cleans, lidars, rxs, atts, confs, speeds, dts, pairs = \
        [], [], [], [], [], [], [], [], [], []
    for attacked_seq, clean_seq, feats in items:
        n = len(attacked_seq)
        if len(clean_seq) != n:
            raise TrainingError(
                f"sequence {attacked_seq.id!r}: attacked and reference lengths differ"
            )
        d_clean = clean_seq.channel("depth")
        if not np.isfinite(d_clean).all():
            raise TrainingError(f"sequence {clean_seq.id!r}: reference depth has gaps")
        labels = attacked_seq.label_array()
        xs.append(feats.X)
        works.append(feats.d_work)
        cleans.append(d_clean)
        lidars.append(feats.lidar_aligned)
        rxs.append(feats.r_xs)
        atts.append(labels)
        confs.append(feats.conf_work)
        speeds.append(np.nan_to_num(attacked_seq.channel("speed"), nan=0.0))
        dts.append(np.full(n, feats.dt))
        ok = np.ones(n, dtype=bool)
        ok[-1] = False
        pairs.append(ok)
    return RepairDataset(
        X=np.concatenate(xs), d_work=np.concatenate(works),
        d_clean=np.concatenate(cleans), lidar_aligned=np.concatenate(lidars),
        r_xs=np.concatenate(rxs), attacked=np.concatenate(atts),
        conf=np.concatenate(confs), speed=np.concatenate(speeds),
        dt=np.concatenate(dts), pair_ok=np.concatenate(pairs),
    )


def _forward(head: DeltaHead, X: np.ndarray):
    xs = (X - head.feat_mean) / head.feat_scale
    z = xs @ head.W1.T + head.b1
    a = np.tanh(z)
    delta = a @ head.W2 + head.b2
    return xs, a, delta


def loss_and_grad(head: DeltaHead, ds: RepairDataset, idx: np.ndarray,
                  params: LossParams = LossParams(), with_grad: bool = True):
    """Objective (and optionally its parameter gradient) over pair starts ``idx``.

    Every index in ``idx`` must have ``pair_ok`` set; the kinematic term uses
    the (i, i+1) pair while the pointwise terms use frame i only.
    """
    idx = np.asarray(idx, dtype=int)
    if idx.size == 0:
        raise TrainingError("empty batch")
    if not ds.pair_ok[idx].all():
        raise TrainingError("batch contains indices without an in-sequence successor")

    a_idx, b_idx = idx, idx + 1
    X_all = np.concatenate([ds.X[a_idx], ds.X[b_idx]])
    xs, act, delta = _forward(head, X_all)
    nb = idx.size
    delta_a, delta_b = delta[:nb], delta[nb:]
    rep_a = ds.d_work[a_idx] + delta_a
    rep_b = ds.d_work[b_idx] + delta_b

    attacked = ds.attacked[a_idx]
    include_id = (~attacked) | (ds.conf[a_idx] >= params.conf_high)
    w_id = np.where(attacked, params.attacked_region_boost, 1.0) * include_id
    err_id = rep_a - ds.d_clean[a_idx]
    norm_id = max(w_id.sum(), 1e-12)
    loss_id = float((w_id * err_id**2).sum() / norm_id)

    # Frames split on measured disagreement: those with a cross-sensor residual
    # above tau_low get the consistency pull toward the aligned range reading,
    # everything else (agreeing sensors, or no cross-check at all) gets the
    # minimal-change anchor pulling the correction to zero.
    r_xs = ds.r_xs[a_idx]
    cons_mask = np.isfinite(r_xs) & (r_xs > params.tau_low)
    agree_mask = ~cons_mask
    norm_d0 = max(agree_mask.sum(), 1e-12)
    loss_d0 = float((agree_mask * delta_a**2).sum() / norm_d0)

    w_cons = np.where(attacked, params.attacked_region_boost, 1.0) * cons_mask
    lidar_target = np.nan_to_num(ds.lidar_aligned[a_idx], nan=0.0)
    err_cons = rep_a - lidar_target
    norm_cons = max(w_cons.sum(), 1e-12)
    loss_cons = float((w_cons * err_cons**2).sum() / norm_cons)

    err_kin = (rep_b - rep_a) + ds.speed[a_idx] * ds.dt[a_idx]
    loss_kin = float((err_kin**2).mean())

    total = (params.lam_id * loss_id + params.lam_delta0 * loss_d0
             + params.lam_cons * loss_cons + params.lam_kin * loss_kin)
    terms = LossBreakdown(id=loss_id, delta0=loss_d0, cons=loss_cons,
                          kin=loss_kin, total=total)
    if not with_grad:
        return terms, None

    g_rep_a = (params.lam_id * 2.0 * w_id * err_id / norm_id
               + params.lam_cons * 2.0 * w_cons * err_cons / norm_cons
               - params.lam_kin * 2.0 * err_kin / nb)
    g_rep_b = params.lam_kin * 2.0 * err_kin / nb
    g_delta_a = g_rep_a + params.lam_delta0 * 2.0 * agree_mask * delta_a / norm_d0
    g_delta = np.concatenate([g_delta_a, g_rep_b])

    dW2 = g_delta @ act
    db2 = g_delta.sum()
    d_act = np.outer(g_delta, head.W2)
    dz = d_act * (1.0 - act**2)
    dW1 = dz.T @ xs
    db1 = dz.sum(axis=0)
    grad = np.concatenate([dW1.ravel(), db1, dW2, [db2]])
    return terms, grad


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    momentum: float = 0.9
    patience: int = 20
    seed: int = 0


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1


def train_head(ds_train: RepairDataset, ds_val: RepairDataset | None = None,
               loss_params: LossParams = LossParams(),
               cfg: TrainConfig = TrainConfig()) -> tuple[DeltaHead, TrainHistory]:
    """SGD with momentum and early stopping on the validation objective."""
    head = DeltaHead(seed=cfg.seed)
    head.set_normalization(ds_train.X)
    pool = ds_train.pair_indices()
    if pool.size == 0:
        raise TrainingError("training set has no usable frame pairs")
    val_idx = ds_val.pair_indices() if ds_val is not None else None
    if val_idx is not None and val_idx.size == 0:
        raise TrainingError("validation set has no usable frame pairs")

    rng = np.random.default_rng(cfg.seed)
    flat = head.get_flat()
    velocity = np.zeros_like(flat)
    history = TrainHistory()
    best_val = np.inf
    best_flat = flat.copy()
    stale = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(pool)
        epoch_losses = []
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            head.set_flat(flat)
            terms, grad = loss_and_grad(head, ds_train, batch, loss_params)
            if not np.isfinite(terms.total):
                raise TrainingError(f"training diverged at epoch {epoch}")
            velocity = cfg.momentum * velocity - cfg.lr * grad
            flat = flat + velocity
            epoch_losses.append(terms.total)
        head.set_flat(flat)
        history.train_loss.append(float(np.mean(epoch_losses)))

        if val_idx is not None:
            vterms, _ = loss_and_grad(head, ds_val, val_idx, loss_params, with_grad=False)
            vloss = vterms.total
        else:
            vloss = history.train_loss[-1]
        if not np.isfinite(vloss):
            raise TrainingError(f"training diverged at epoch {epoch}")
        history.val_loss.append(float(vloss))
        if vloss < best_val - 1e-12:
            best_val = vloss
            best_flat = flat.copy()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    head.set_flat(best_flat)
    return head, history
