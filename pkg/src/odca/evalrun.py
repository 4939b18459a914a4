"""End-to-end benchmark pipeline: split, align, corrupt, train, score.

Runs every estimation method against seeded corruption of the synthetic
benchmark and aggregates recovery accuracy, detection quality, and the
cross-severity summary statistics, plus the loss-term ablation study.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import AlignmentModel, fit_from_sequences
from .attacksim import Severity, apply_attack, preset
from .baselines import KalmanParams, kalman_depth, run_baseline
from .core import SensorSequence, fill_forward, stable_seed
from .forecast import BootstrapForecaster
from .gatefuse import GateParams, run_sequence
from .metrics import (
    auprc,
    auroc,
    breakdown_degradation,
    mae,
    relative_gain,
    rmse,
    score_streams,
)
from .repair import (
    DeltaHead,
    FeatureConfig,
    LossParams,
    TrainConfig,
    build_dataset,
    compute_features,
    train_head,
)
from .synth import SynthConfig, generate_dataset

METHODS = ("passthrough", "lidar_only", "ekf", "forecast_replace", "odca")
SEVERITIES = ("weak", "mid", "strong")

ABLATION_VARIANTS = (
    ("id", ("delta0", "cons", "kin")),
    ("id+delta0", ("cons", "kin")),
    ("id+delta0+cons", ("kin",)),
    ("id+delta0+kin", ("cons",)),
    ("full", ()),
)


class EvalError(RuntimeError):
    """Raised when the pipeline cannot produce a report."""


@dataclass(frozen=True)
class EvalConfig:
    """Everything a benchmark run depends on, seeds included."""

    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    severities: tuple[str, ...] = SEVERITIES
    train_frac: float = 0.7
    val_frac: float = 0.1
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    gate: GateParams = field(default_factory=GateParams)
    loss: LossParams = field(default_factory=LossParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    kalman: KalmanParams = field(default_factory=KalmanParams)

    def __post_init__(self) -> None:
        if not 0.0 < self.train_frac < 1.0 or not 0.0 < self.val_frac < 1.0:
            raise ValueError("split fractions must lie in (0, 1)")
        if self.train_frac + self.val_frac >= 1.0:
            raise ValueError("split fractions must leave room for a test set")
        if set(self.severities) - {"weak", "mid", "strong"}:
            raise ValueError("severities must be drawn from weak/mid/strong")


@dataclass(frozen=True)
class Split:
    train: tuple[SensorSequence, ...]
    val: tuple[SensorSequence, ...]
    test: tuple[SensorSequence, ...]


def split_dataset(sequences: list[SensorSequence], train_frac: float = 0.7,
                  val_frac: float = 0.1, seed: int = 0) -> Split:
    """Deterministic by-series split; every part gets at least one sequence."""
    n = len(sequences)
    if n < 3:
        raise EvalError("need at least 3 sequences to split")
    rng = np.random.default_rng(stable_seed("split", seed))
    order = rng.permutation(n)
    n_train = max(1, int(round(train_frac * n)))
    n_val = max(1, int(round(val_frac * n)))
    if n_train + n_val >= n:
        n_train = n - n_val - 1
    train = tuple(sequences[i] for i in sorted(order[:n_train]))
    val = tuple(sequences[i] for i in sorted(order[n_train:n_train + n_val]))
    test = tuple(sequences[i] for i in sorted(order[n_train + n_val:]))
    return Split(train=train, val=val, test=test)


def attack_pairs(sequences, severity: str, seed: int):
    """(attacked, clean) pairs for one severity, deterministically seeded."""
    spec = preset(Severity(severity), seed=stable_seed("bench-attack", seed))
    return [(apply_attack(seq, spec), seq) for seq in sequences]


def _filled(series: np.ndarray) -> np.ndarray:
    return fill_forward(series) if not np.all(np.isfinite(series)) else series


def _score(pred: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
    pred = _filled(np.asarray(pred, dtype=float))
    return rmse(pred, ref), mae(pred, ref)


@dataclass
class EvalReport:
    """Aggregated benchmark results, JSON- and CSV-serializable."""

    config: dict
    split_ids: dict
    alignment: dict
    recovery: dict  # method -> severity -> {"rmse","mae"}
    clean: dict  # method -> rmse on uncorrupted test data
    diagnostics: dict  # severity -> {"auroc_xs",...}
    summary: dict  # {"bd": {...}, "rgr": {...}}
    ablation: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def _config_echo(cfg: EvalConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def _severity_items(sequences, sev: str, alignment, backend, cfg: EvalConfig):
    return [(attacked, clean,
             compute_features(attacked, alignment, backend, cfg.feature))
            for attacked, clean in attack_pairs(sequences, sev, cfg.seed)]


def build_train_datasets(cfg: EvalConfig, split: Split, alignment: AlignmentModel,
                         backend):
    """Feature-complete training and validation sets, all severities mixed."""
    train_items, val_items = [], []
    for sev in cfg.severities:
        train_items.extend(_severity_items(list(split.train), sev, alignment,
                                           backend, cfg))
        val_items.extend(_severity_items(list(split.val), sev, alignment,
                                         backend, cfg))
    return build_dataset(train_items), build_dataset(val_items)


def train_eval_head(cfg: EvalConfig, ds_train, ds_val,
                    loss: LossParams | None = None) -> DeltaHead:
    """Train one correction head; the eval seed pins initialization/shuffling."""
    tcfg = dataclasses.replace(cfg.train, seed=stable_seed("train", cfg.seed))
    head, _ = train_head(ds_train, ds_val, loss_params=loss or cfg.loss, cfg=tcfg)
    return head


def _dataset(cfg: EvalConfig) -> list[SensorSequence]:
    return generate_dataset(dataclasses.replace(cfg.synth, seed=cfg.seed))


def run_eval(cfg: EvalConfig = EvalConfig(), backend=None) -> EvalReport:
    """Full benchmark: generate, split, align, train, score every method."""
    backend = backend if backend is not None else BootstrapForecaster()
    sequences = _dataset(cfg)
    split = split_dataset(sequences, cfg.train_frac, cfg.val_frac, cfg.seed)

    alignment = fit_from_sequences(list(split.train))
    ds_train, ds_val = build_train_datasets(cfg, split, alignment, backend)
    head = train_eval_head(cfg, ds_train, ds_val)

    recovery: dict = {m: {} for m in METHODS}
    diagnostics: dict = {}
    for sev in cfg.severities:
        pairs = attack_pairs(list(split.test), sev, cfg.seed)
        feats_gated = [compute_features(a, alignment, backend, cfg.feature)
                       for a, _ in pairs]
        plain_cfg = dataclasses.replace(cfg.feature, subst_threshold=None)
        feats_plain = [compute_features(a, alignment, backend, plain_cfg)
                       for a, _ in pairs]

        preds: dict[str, list[np.ndarray]] = {m: [] for m in METHODS}
        refs: list[np.ndarray] = []
        xs_parts, chg_parts, label_parts = [], [], []
        for (attacked, clean), fg, fp in zip(pairs, feats_gated, feats_plain):
            refs.append(clean.channel("depth"))
            preds["passthrough"].append(run_baseline("passthrough", attacked, alignment))
            preds["lidar_only"].append(run_baseline("lidar_only", attacked, alignment))
            preds["ekf"].append(kalman_depth(attacked, alignment, cfg.kalman))
            preds["forecast_replace"].append(
                run_baseline("forecast_replace", attacked, alignment,
                             backend=backend, cfg=plain_cfg, features=fp))
            run = run_sequence(attacked, head, alignment, backend, cfg.feature,
                               cfg.gate, features=fg)
            preds["odca"].append(run.d_fused)
            xs_parts.append(run.r_xs)
            chg_parts.append(np.abs(run.d_fused - run.d_tilde))
            label_parts.append(attacked.label_array())

        ref_all = np.concatenate(refs)
        for m in METHODS:
            r, a = _score(np.concatenate(preds[m]), ref_all)
            recovery[m][sev] = {"rmse": r, "mae": a}

        streams = score_streams(np.concatenate(xs_parts), np.concatenate(chg_parts),
                                np.concatenate(label_parts))
        diagnostics[sev] = {
            "auroc_xs": auroc(*streams["xs"]),
            "auprc_xs": auprc(*streams["xs"]),
            "auroc_chg": auroc(*streams["chg"]),
            "auprc_chg": auprc(*streams["chg"]),
        }

    clean_scores = {}
    clean_refs = np.concatenate([s.channel("depth") for s in split.test])
    clean_pass = np.concatenate([run_baseline("passthrough", s, alignment)
                                 for s in split.test])
    clean_odca = np.concatenate([
        run_sequence(s, head, alignment, backend, cfg.feature, cfg.gate,
                     features=compute_features(s, alignment, backend, cfg.feature)).d_fused
        for s in split.test
    ])
    clean_scores["passthrough"] = rmse(clean_pass, clean_refs)
    clean_scores["odca"] = rmse(clean_odca, clean_refs)

    summary = {
        "bd": {m: breakdown_degradation(recovery[m]["strong"]["rmse"],
                                        recovery[m]["weak"]["rmse"])
               for m in METHODS if {"weak", "strong"} <= set(recovery[m])},
        "rgr": _rgr_block(recovery, cfg.severities),
    }

    return EvalReport(
        config=_config_echo(cfg),
        split_ids={part: [s.id for s in getattr(split, part)]
                   for part in ("train", "val", "test")},
        alignment={"alpha": alignment.alpha, "beta": alignment.beta,
                   "n_pairs": alignment.n_pairs},
        recovery=recovery,
        clean=clean_scores,
        diagnostics=diagnostics,
        summary=summary,
    )


def _rgr_block(recovery: dict, severities) -> dict:
    block = {}
    vals = []
    for sev in severities:
        g = relative_gain(recovery["odca"][sev]["rmse"],
                          recovery["forecast_replace"][sev]["rmse"])
        block[sev] = g
        vals.append(g)
    block["mean"] = float(np.mean(vals))
    return block


def _zeroed(loss: LossParams, names: tuple[str, ...]) -> LossParams:
    return dataclasses.replace(loss, **{f"lam_{n}": 0.0 for n in names})


def run_ablation(cfg: EvalConfig = EvalConfig(), backend=None) -> list[dict]:
    """Retrain with loss-term subsets on one fixed data seed; score strong attacks.

    Reports the repaired-signal RMSE (before gating) plus the detection
    quality of the applied correction, per variant.
    """
    backend = backend if backend is not None else BootstrapForecaster()
    sequences = _dataset(cfg)
    split = split_dataset(sequences, cfg.train_frac, cfg.val_frac, cfg.seed)
    alignment = fit_from_sequences(list(split.train))
    ds_train, ds_val = build_train_datasets(cfg, split, alignment, backend)

    pairs = attack_pairs(list(split.test), "strong", cfg.seed)
    feats = [compute_features(a, alignment, backend, cfg.feature) for a, _ in pairs]
    ref_all = np.concatenate([c.channel("depth") for _, c in pairs])
    labels = np.concatenate([a.label_array() for a, _ in pairs])

    rows = []
    for name, dropped in ABLATION_VARIANTS:
        loss = _zeroed(cfg.loss, dropped)
        head = train_eval_head(cfg, ds_train, ds_val, loss=loss)
        reps, chgs = [], []
        for (attacked, _), ft in zip(pairs, feats):
            run = run_sequence(attacked, head, alignment, backend, cfg.feature,
                               cfg.gate, features=ft)
            reps.append(run.d_rep)
            chgs.append(np.abs(run.d_fused - run.d_tilde))
        rows.append({
            "variant": name,
            "rmse_rep": rmse(np.concatenate(reps), ref_all),
            "auroc_chg": auroc(np.concatenate(chgs), labels),
        })
    return rows


# -- artifact emission ------------------------------------------------------

def write_report(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    """Emit the report as JSON plus flat CSV tables; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    p = out / "eval_report.json"
    p.write_text(report.to_json() + "\n")
    paths["json"] = p

    lines = ["method,severity,rmse,mae"]
    for m in METHODS:
        for sev, cell in report.recovery.get(m, {}).items():
            lines.append(f"{m},{sev},{cell['rmse']!r},{cell['mae']!r}")
    p = out / "recovery.csv"
    p.write_text("\n".join(lines) + "\n")
    paths["recovery"] = p

    lines = ["severity,auroc_xs,auprc_xs,auroc_chg,auprc_chg"]
    for sev, cell in report.diagnostics.items():
        lines.append(f"{sev},{cell['auroc_xs']!r},{cell['auprc_xs']!r},"
                     f"{cell['auroc_chg']!r},{cell['auprc_chg']!r}")
    p = out / "diagnostics.csv"
    p.write_text("\n".join(lines) + "\n")
    paths["diagnostics"] = p

    lines = ["stat,key,value"]
    for m, v in report.summary["bd"].items():
        lines.append(f"bd,{m},{v!r}")
    for k, v in report.summary["rgr"].items():
        lines.append(f"rgr,{k},{v!r}")
    for m, v in report.clean.items():
        lines.append(f"clean_rmse,{m},{v!r}")
    p = out / "summary.csv"
    p.write_text("\n".join(lines) + "\n")
    paths["summary"] = p

    if report.ablation:
        lines = ["variant,rmse_rep,auroc_chg"]
        for row in report.ablation:
            lines.append(f"{row['variant']},{row['rmse_rep']!r},{row['auroc_chg']!r}")
        p = out / "ablation.csv"
        p.write_text("\n".join(lines) + "\n")
        paths["ablation"] = p
    return paths
