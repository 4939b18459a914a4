"""Render benchmark artifacts into a Markdown report plus figure files.

Consumes the JSON/CSV tables written by the evaluation pipeline (and, when
present, the persistence sweep and a per-frame repair trace) and emits
``report.md`` alongside PNG figures.  Rendering is deterministic: fixed
figure sizes, fixed DPI, pinned PNG metadata, and no timestamps, so repeated
runs over identical inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 - backend must be pinned first
import numpy as np  # noqa: E402

DPI = 120
PNG_METADATA = {"Software": "odca-report"}
SEVERITY_ORDER = ("weak", "mid", "strong")


class ReportError(RuntimeError):
    """Raised when required inputs for the report are missing or malformed."""


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=DPI, metadata=PNG_METADATA)
    plt.close(fig)
    return path


def _read_csv_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- figures ------------------------------------------------------------------


def fig_recovery(recovery: dict, path: Path) -> Path:
    """Grouped bars: recovery RMSE per method and severity."""
    methods = list(recovery)
    sevs = [s for s in SEVERITY_ORDER if s in next(iter(recovery.values()))]
    x = np.arange(len(sevs))
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for k, m in enumerate(methods):
        vals = [recovery[m][s]["rmse"] for s in sevs]
        ax.bar(x + (k - (len(methods) - 1) / 2) * width, vals, width, label=m)
    ax.set_xticks(x, sevs)
    ax.set_ylabel("RMSE vs clean reference (m)")
    ax.set_xlabel("attack severity")
    ax.set_title("Recovery error by method")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def fig_diagnostics(diagnostics: dict, path: Path) -> Path:
    """Heatmap of detection quality per severity and score stream."""
    sevs = [s for s in SEVERITY_ORDER if s in diagnostics]
    cols = ["auroc_xs", "auprc_xs", "auroc_chg", "auprc_chg"]
    grid = np.array([[diagnostics[s][c] for c in cols] for s in sevs])
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(cols)), cols, rotation=20)
    ax.set_yticks(range(len(sevs)), sevs)
    for i in range(len(sevs)):
        for j in range(len(cols)):
            ax.text(j, i, f"{grid[i, j]:.3f}", ha="center", va="center",
                    color="white" if grid[i, j] < 0.6 else "black", fontsize=8)
    fig.colorbar(im, ax=ax, label="score")
    ax.set_title("Attack-detection quality")
    fig.tight_layout()
    return _save(fig, path)


def fig_radar(recovery: dict, bd: dict, path: Path) -> Path:
    """Radar of per-method quality; every axis is 1/(1+x), larger is better."""
    methods = list(recovery)
    sevs = [s for s in SEVERITY_ORDER if s in next(iter(recovery.values()))]
    axes = [f"rmse {s}" for s in sevs] + ["degradation"]
    angles = np.linspace(0.0, 2.0 * np.pi, len(axes), endpoint=False)
    loop = np.concatenate([angles, angles[:1]])
    fig, ax = plt.subplots(figsize=(5.0, 5.0), subplot_kw={"polar": True})
    for m in methods:
        vals = [1.0 / (1.0 + recovery[m][s]["rmse"]) for s in sevs]
        vals.append(1.0 / (1.0 + max(bd.get(m, 0.0), 0.0)))
        ax.plot(loop, vals + vals[:1], label=m, linewidth=1.2)
    ax.set_xticks(angles, axes, fontsize=8)
    ax.set_ylim(0.0, 1.0)
    ax.set_title("Method profile (axes are 1/(1+x); outer is better)", fontsize=9)
    ax.legend(fontsize=7, loc="lower right", bbox_to_anchor=(1.15, -0.1))
    fig.tight_layout()
    return _save(fig, path)


def fig_sweep(rows: list[dict], path: Path) -> Path:
    """Attack success versus persistence for both defenses."""
    t = [float(r["t_atk"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(t, [float(r["asr_none"]) for r in rows], "o-", label="no defense")
    ax.plot(t, [float(r["asr_odca"]) for r in rows], "s-", label="gated repair")
    ax.set_xlabel("attack persistence (s)")
    ax.set_ylabel("attack success rate")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title("Closed-loop attack persistence")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def fig_overlay(trace: dict, path: Path) -> Path:
    """Per-frame repair trace: observed vs fused output with attack shading."""
    t = trace["t"]
    fig, ax = plt.subplots(figsize=(7.5, 4.0))
    label = trace["label"].astype(bool)
    if label.any():
        edges = np.flatnonzero(np.diff(np.concatenate([[0], label.view(np.int8), [0]])))
        for lo, hi in zip(edges[::2], edges[1::2]):
            ax.axvspan(t[lo], t[min(hi, len(t) - 1)], color="0.9", zorder=0)
    ax.plot(t, trace["d_clean"], color="0.4", linewidth=1.0, label="clean reference")
    ax.plot(t, trace["d_tilde"], color="tab:red", linewidth=0.9, alpha=0.7,
            label="observed")
    ax.plot(t, trace["d_fused"], color="tab:blue", linewidth=1.1, label="fused output")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("obstacle distance (m)")
    ax.set_title("Gated repair trace (shaded: attacked frames)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


# -- markdown -----------------------------------------------------------------


def _md_table(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines)


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def render_markdown(report: dict, ablation: list[dict], sweep: list[dict],
                    figures: dict[str, Path]) -> str:
    parts = ["# Sensor-resilience benchmark report", ""]

    parts.append("## Recovery error")
    sevs = [s for s in SEVERITY_ORDER
            if s in next(iter(report["recovery"].values()))]
    header = ["method"] + [f"{s} rmse" for s in sevs] + [f"{s} mae" for s in sevs]
    rows = [[m] + [_fmt(report["recovery"][m][s]["rmse"]) for s in sevs]
            + [_fmt(report["recovery"][m][s]["mae"]) for s in sevs]
            for m in report["recovery"]]
    parts += [_md_table(header, rows), ""]
    if "recovery" in figures:
        parts += [f"![recovery]({figures['recovery'].name})", ""]

    parts.append("## Clean-pass fidelity")
    rows = [[m, _fmt(v)] for m, v in report["clean"].items()]
    parts += [_md_table(["method", "rmse on clean data"], rows), ""]

    parts.append("## Attack detection")
    header = ["severity", "auroc_xs", "auprc_xs", "auroc_chg", "auprc_chg"]
    rows = [[s] + [_fmt(report["diagnostics"][s][c]) for c in header[1:]]
            for s in sevs if s in report["diagnostics"]]
    parts += [_md_table(header, rows), ""]
    if "diagnostics" in figures:
        parts += [f"![diagnostics]({figures['diagnostics'].name})", ""]

    parts.append("## Cross-severity summary")
    rows = [["degradation " + m, _fmt(v)]
            for m, v in report["summary"]["bd"].items()]
    rows += [["relative gain " + k, _fmt(v)]
             for k, v in report["summary"]["rgr"].items()]
    parts += [_md_table(["statistic", "value"], rows), ""]
    if "radar" in figures:
        parts += [f"![radar]({figures['radar'].name})", ""]

    if ablation:
        parts.append("## Loss-term ablation")
        header = ["variant", "repaired rmse", "auroc_chg"]
        rows = [[r["variant"], _fmt(float(r["rmse_rep"])),
                 _fmt(float(r["auroc_chg"]))] for r in ablation]
        parts += [_md_table(header, rows), ""]

    if sweep:
        parts.append("## Closed-loop persistence sweep")
        header = ["t_atk (s)", "rho", "lost frames", "asr none", "asr odca"]
        rows = [[f"{float(r['t_atk']):.2f}", f"{float(r['rho']):.2f}",
                 f"{float(r['lost_frames']):.1f}", _fmt(float(r["asr_none"])),
                 _fmt(float(r["asr_odca"]))] for r in sweep]
        parts += [_md_table(header, rows), ""]
        if "sweep" in figures:
            parts += [f"![sweep]({figures['sweep'].name})", ""]

    if "overlay" in figures:
        parts += ["## Example repair trace",
                  f"![overlay]({figures['overlay'].name})", ""]

    parts.append("## Run configuration")
    parts += ["```json", json.dumps(report["config"], indent=2, sort_keys=True),
              "```", ""]
    return "\n".join(parts)


def render_report(in_dir: str | Path, out_dir: str | Path | None = None) -> dict[str, Path]:
    """Render ``report.md`` + figures from artifacts in ``in_dir``."""
    src = Path(in_dir)
    out = Path(out_dir) if out_dir is not None else src
    out.mkdir(parents=True, exist_ok=True)

    report_path = src / "eval_report.json"
    if not report_path.exists():
        raise ReportError(
            f"missing {report_path}; run the eval command first")
    report = json.loads(report_path.read_text())

    ablation = report.get("ablation") or []
    ablation_csv = src / "ablation.csv"
    if not ablation and ablation_csv.exists():
        ablation = _read_csv_rows(ablation_csv)

    sweep_csv = src / "sweep.csv"
    sweep = _read_csv_rows(sweep_csv) if sweep_csv.exists() else []

    figures: dict[str, Path] = {}
    figures["recovery"] = fig_recovery(report["recovery"], out / "recovery.png")
    figures["diagnostics"] = fig_diagnostics(report["diagnostics"],
                                             out / "diagnostics.png")
    figures["radar"] = fig_radar(report["recovery"], report["summary"]["bd"],
                                 out / "radar.png")
    if sweep:
        figures["sweep"] = fig_sweep(sweep, out / "sweep.png")

    trace_csv = src / "results.csv"
    if trace_csv.exists():
        from .gatefuse import read_results_csv

        figures["overlay"] = fig_overlay(read_results_csv(trace_csv),
                                         out / "overlay.png")

    md = render_markdown(report, ablation, sweep, figures)
    md_path = out / "report.md"
    md_path.write_text(md)
    return {"markdown": md_path, **figures}
