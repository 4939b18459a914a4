"""Command-line interface for the gated depth-repair toolkit.

Every command accepts an optional TOML run configuration (``--config``) plus
``--set section.key=value`` overrides, and writes plain-text or JSON artifacts
whose bytes depend only on the resolved configuration — rerunning a command
with the same flags reproduces its output files exactly.  ``--timing`` prints
stage wall times to stderr, never into the artifacts.

The forecaster backend is chosen by the ``ODCA_FORECASTER`` environment
variable when set, falling back to the ``[forecaster]`` config section
(default: the builtin bootstrap model).
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import json
import os
import time
from pathlib import Path

import click
import numpy as np

from odca.align import AlignmentError, AlignmentModel, fit_from_sequences
from odca.attacksim import Severity, apply_attack, preset
from odca.closedloop import persistence_sweep, run_batch, zero_head
from odca.config import ConfigError, RunConfig, load_run_config
from odca.core import (DatasetError, load_sequence, load_sequences,
                       save_sequence, sequence_files, stable_seed)
from odca.evalrun import (EvalError, build_train_datasets, run_ablation,
                          run_eval, split_dataset, train_eval_head,
                          write_report)
from odca.forecast import ForecastError, make_backend
from odca.gatefuse import run_sequence, write_results_csv
from odca.repair import DeltaHead, TrainingError
from odca.reportgen import ReportError, render_report
from odca.synth import generate_dataset

_LIB_ERRORS = (AlignmentError, ConfigError, DatasetError, EvalError,
               ForecastError, ReportError, TrainingError, OSError, ValueError)

SWEEP_COLUMNS = ("t_atk", "rho", "lost_frames", "asr_none", "asr_odca",
                 "latency_none", "latency_odca")


def _common(fn):
    fn = click.option("--timing", is_flag=True,
                      help="Print stage wall times to stderr.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Override the run seed.")(fn)
    fn = click.option("--set", "overrides", multiple=True,
                      metavar="SECTION.KEY=VALUE",
                      help="Override one config value (repeatable; "
                           "wins over the file).")(fn)
    fn = click.option("--config", "config_path",
                      type=click.Path(path_type=Path), default=None,
                      help="TOML run configuration file.")(fn)
    return fn


def _load(config_path, overrides, seed) -> RunConfig:
    try:
        return load_run_config(config_path, overrides, seed)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc


def _backend(run_cfg: RunConfig):
    spec = os.environ.get("ODCA_FORECASTER", "").strip() or run_cfg.forecaster
    try:
        return spec, make_backend(spec)
    except ForecastError as exc:
        raise click.ClickException(str(exc)) from exc


@contextlib.contextmanager
def _stage(name: str, enabled: bool):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        if enabled:
            click.echo(f"[timing] {name}: {time.perf_counter() - t0:.3f} s",
                       err=True)


@contextlib.contextmanager
def _lib_errors():
    """Translate library failures into clean nonzero CLI exits."""
    try:
        yield
    except click.ClickException:
        raise
    except _LIB_ERRORS as exc:
        raise click.ClickException(str(exc)) from exc


def _echo_wrote(paths) -> None:
    for p in paths:
        click.echo(f"wrote {p}")


def _config_dict(run_cfg: RunConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(run_cfg)))


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _load_dir(in_dir: Path, hint: str) -> list:
    files = sequence_files(in_dir)
    if not files:
        raise click.ClickException(
            f"no sequence files in {in_dir} ({hint})")
    return load_sequences(files)


def _load_model(model_dir: Path) -> tuple[DeltaHead, AlignmentModel]:
    head_path = model_dir / "head.json"
    align_path = model_dir / "alignment.json"
    for p in (head_path, align_path):
        if not p.exists():
            raise click.ClickException(
                f"model file not found: {p} (run `odca train` first)")
    return DeltaHead.load(head_path), AlignmentModel.load(align_path)


def _csv_cell(value) -> str:
    if value is None:
        return ""
    value = float(value)
    return "" if not np.isfinite(value) else repr(value)


@click.group()
@click.version_option(package_name="odca", prog_name="odca")
def main() -> None:
    """Gated repair of obstacle-distance signals under depth corruption."""


@main.command()
@_common
@click.option("--out", "out_dir", type=click.Path(path_type=Path),
              required=True, help="Directory for the generated sequences.")
@click.option("--fmt", type=click.Choice(["csv", "jsonl"]), default="csv",
              show_default=True, help="Per-sequence file format.")
def gen(config_path, overrides, seed, timing, out_dir, fmt):
    """Generate a clean synthetic driving dataset."""
    run_cfg = _load(config_path, overrides, seed)
    with _lib_errors(), _stage("gen", timing):
        synth = dataclasses.replace(run_cfg.eval.synth, seed=run_cfg.eval.seed)
        sequences = generate_dataset(synth)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for seq in sequences:
            path = out_dir / f"{seq.id}.{fmt}"
            save_sequence(seq, path, fmt=fmt)
            paths.append(path)
        manifest = {"ids": [seq.id for seq in sequences], "fmt": fmt,
                    "config": _config_dict(run_cfg)}
        _write_json(out_dir / "manifest.json", manifest)
    _echo_wrote(paths + [out_dir / "manifest.json"])


@main.command()
@_common
@click.option("--in", "in_dir", type=click.Path(path_type=Path),
              required=True, help="Directory of clean sequences.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path),
              required=True, help="Directory for the attacked copies.")
@click.option("--severity", type=click.Choice([s.value for s in Severity]),
              default="strong", show_default=True)
def attack(config_path, overrides, seed, timing, in_dir, out_dir, severity):
    """Corrupt the depth channel of every sequence in a directory."""
    run_cfg = _load(config_path, overrides, seed)
    with _lib_errors(), _stage("attack", timing):
        sequences = _load_dir(in_dir, "run `odca gen` first")
        spec = preset(Severity(severity),
                      seed=stable_seed("attack", run_cfg.eval.seed))
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for seq in sequences:
            attacked = apply_attack(seq, spec)
            path = out_dir / f"{attacked.id}.csv"
            save_sequence(attacked, path, fmt="csv")
            paths.append(path)
        manifest = {"ids": [seq.id for seq in sequences],
                    "severity": severity, "config": _config_dict(run_cfg)}
        _write_json(out_dir / "manifest.json", manifest)
    _echo_wrote(paths + [out_dir / "manifest.json"])


@main.command()
@_common
@click.option("--in", "in_dir", type=click.Path(path_type=Path),
              required=True, help="Directory of clean sequences.")
@click.option("--out", "out_path", type=click.Path(path_type=Path),
              required=True, help="Output path for alignment.json.")
def align(config_path, overrides, seed, timing, in_dir, out_path):
    """Fit the range-to-depth affine alignment from clean startup windows."""
    _load(config_path, overrides, seed)
    with _lib_errors(), _stage("align", timing):
        sequences = _load_dir(in_dir, "run `odca gen` first")
        model = fit_from_sequences(sequences)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        model.save(out_path)
    click.echo(f"alpha={model.alpha!r} beta={model.beta!r} "
               f"n_pairs={model.n_pairs}")
    _echo_wrote([out_path])


@main.command()
@_common
@click.option("--out", "out_dir", type=click.Path(path_type=Path),
              required=True, help="Directory for head.json / alignment.json.")
@click.option("--in", "in_dir", type=click.Path(path_type=Path), default=None,
              help="Clean sequence directory (default: regenerate from "
                   "config).")
def train(config_path, overrides, seed, timing, out_dir, in_dir):
    """Train the correction head on attacked copies of a clean dataset."""
    run_cfg = _load(config_path, overrides, seed)
    cfg = run_cfg.eval
    spec, backend = _backend(run_cfg)
    with _lib_errors():
        with _stage("dataset", timing):
            if in_dir is not None:
                sequences = _load_dir(Path(in_dir), "run `odca gen` first")
            else:
                sequences = generate_dataset(
                    dataclasses.replace(cfg.synth, seed=cfg.seed))
            split = split_dataset(sequences, cfg.train_frac, cfg.val_frac,
                                  cfg.seed)
            alignment = fit_from_sequences(list(split.train))
        with _stage("features", timing):
            ds_train, ds_val = build_train_datasets(cfg, split, alignment,
                                                    backend)
        with _stage("train", timing):
            head = train_eval_head(cfg, ds_train, ds_val)
        out_dir.mkdir(parents=True, exist_ok=True)
        head.save(out_dir / "head.json")
        alignment.save(out_dir / "alignment.json")
        meta = {
            "split": {part: [seq.id for seq in getattr(split, part)]
                      for part in ("train", "val", "test")},
            "forecaster": spec,
            "config": _config_dict(run_cfg),
        }
        _write_json(out_dir / "train_meta.json", meta)
    _echo_wrote([out_dir / "head.json", out_dir / "alignment.json",
                 out_dir / "train_meta.json"])


@main.command()
@_common
@click.option("--in", "in_path", type=click.Path(path_type=Path),
              required=True, help="Sequence file to repair (csv or jsonl).")
@click.option("--model", "model_dir", type=click.Path(path_type=Path),
              required=True, help="Directory holding head.json and "
                                  "alignment.json (from `odca train`).")
@click.option("--out", "out_path", type=click.Path(path_type=Path),
              required=True, help="Output path for the results table.")
@click.option("--clean", "clean_path", type=click.Path(path_type=Path),
              default=None, help="Matching clean sequence for the "
                                 "reference column.")
@click.option("--timed", is_flag=True,
              help="Process frames one by one and record per-frame latency "
                   "(the latency column then varies between runs).")
def repair(config_path, overrides, seed, timing, in_path, model_dir,
           out_path, clean_path, timed):
    """Run gated repair over one sequence and write the per-frame table."""
    run_cfg = _load(config_path, overrides, seed)
    _, backend = _backend(run_cfg)
    with _lib_errors(), _stage("repair", timing):
        seq = load_sequence(in_path)
        head, alignment = _load_model(model_dir)
        d_clean = None
        if clean_path is not None:
            clean_seq = load_sequence(clean_path)
            if len(clean_seq) != len(seq):
                raise click.ClickException(
                    "clean reference length does not match the input "
                    f"sequence ({len(clean_seq)} vs {len(seq)} frames)")
            d_clean = clean_seq.channel("depth")
        run = run_sequence(seq, head, alignment, backend,
                           run_cfg.eval.feature, run_cfg.eval.gate,
                           timing=timed)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_results_csv(out_path, run, d_clean=d_clean)
    if timed:
        mean_ms = float(np.nanmean(run.latency_us)) / 1000.0
        click.echo(f"mean step latency: {mean_ms:.3f} ms", err=True)
    _echo_wrote([out_path])


@main.command(name="eval")
@_common
@click.option("--out", "out_dir", type=click.Path(path_type=Path),
              required=True, help="Directory for the report tables.")
@click.option("--ablation", is_flag=True,
              help="Also run the loss-term ablation grid.")
def eval_cmd(config_path, overrides, seed, timing, out_dir, ablation):
    """Run the full benchmark and write its tables."""
    run_cfg = _load(config_path, overrides, seed)
    spec, backend = _backend(run_cfg)
    with _lib_errors():
        with _stage("eval", timing):
            report = run_eval(run_cfg.eval, backend=backend)
            report.config["forecaster"] = spec
        if ablation:
            with _stage("ablation", timing):
                report.ablation = run_ablation(run_cfg.eval, backend=backend)
        with _stage("write", timing):
            paths = write_report(report, out_dir)
    _echo_wrote(paths.values())


@main.command()
@_common
@click.option("--out", "out_dir", type=click.Path(path_type=Path),
              required=True, help="Directory for trial logs and aggregate.")
@click.option("--t-atk", type=float, default=1.0, show_default=True,
              help="Attack hold duration in seconds (0 disables the attack).")
@click.option("--rho", type=float, default=1.0, show_default=True,
              help="Fraction of attack frames actually corrupted.")
@click.option("--trials", type=int, default=30, show_default=True,
              help="Paired trials per defense.")
@click.option("--model", "model_dir", type=click.Path(path_type=Path),
              default=None, help="Trained model directory; defaults to the "
                                 "zero correction head.")
def closedloop(config_path, overrides, seed, timing, out_dir, t_atk, rho,
               trials, model_dir):
    """Simulate braking trials with and without the repair defense."""
    run_cfg = _load(config_path, overrides, seed)
    head = _load_model(model_dir)[0] if model_dir else zero_head()
    hold = None if t_atk <= 0 else t_atk
    results = {}
    with _lib_errors():
        for defense in ("none", "odca"):
            with _stage(f"closedloop[{defense}]", timing):
                results[defense] = run_batch(run_cfg.scenario, defense, hold,
                                             trials, run_cfg.eval.seed,
                                             rho=rho, head=head)
        out_dir.mkdir(parents=True, exist_ok=True)
        trials_path = out_dir / "closedloop_trials.jsonl"
        with open(trials_path, "w", encoding="utf-8") as fh:
            for defense, batch in results.items():
                for k, trial in enumerate(batch.trials):
                    row = {"trial": k, **dataclasses.asdict(trial)}
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
            trailer = {"aggregate": {
                d: {"summary": dataclasses.asdict(b.summary),
                    "lost_frames_mean": b.lost_frames_mean}
                for d, b in results.items()}}
            fh.write(json.dumps(trailer, sort_keys=True) + "\n")
        agg_path = out_dir / "closedloop.json"
        _write_json(agg_path, {
            "t_atk": t_atk, "rho": rho, "trials": trials,
            "results": {d: {"summary": dataclasses.asdict(b.summary),
                            "lost_frames_mean": b.lost_frames_mean}
                        for d, b in results.items()},
            "config": _config_dict(run_cfg),
        })
    for defense, batch in results.items():
        click.echo(f"{defense}: attack_success_rate="
                   f"{batch.summary.attack_success_rate!r} "
                   f"lost_frames_mean={batch.lost_frames_mean!r}")
    _echo_wrote([trials_path, agg_path])


@main.command()
@_common
@click.option("--out", "out_path", type=click.Path(path_type=Path),
              required=True, help="Output CSV path.")
@click.option("--t-atk", "t_atks", type=float, multiple=True,
              help="Attack durations to sweep (repeatable; default "
                   "0.5 1.0 3.0).")
@click.option("--rho", type=float, default=1.0, show_default=True,
              help="Fraction of attack frames actually corrupted.")
@click.option("--trials", type=int, default=30, show_default=True,
              help="Paired trials per sweep point.")
@click.option("--model", "model_dir", type=click.Path(path_type=Path),
              default=None, help="Trained model directory; defaults to the "
                                 "zero correction head.")
def sweep(config_path, overrides, seed, timing, out_path, t_atks, rho,
          trials, model_dir):
    """Sweep attack duration and tabulate closed-loop outcomes."""
    run_cfg = _load(config_path, overrides, seed)
    head = _load_model(model_dir)[0] if model_dir else zero_head()
    durations = tuple(t_atks) if t_atks else (0.5, 1.0, 3.0)
    with _lib_errors(), _stage("sweep", timing):
        rows = persistence_sweep(run_cfg.scenario, durations, trials,
                                 run_cfg.eval.seed, rho, head=head)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SWEEP_COLUMNS)
            for row in rows:
                writer.writerow([_csv_cell(row[c]) for c in SWEEP_COLUMNS])
    _echo_wrote([out_path])


@main.command()
@_common
@click.option("--in", "in_dir", type=click.Path(path_type=Path),
              required=True, help="Directory of eval tables "
                                  "(from `odca eval`).")
@click.option("--out", "out_dir", type=click.Path(path_type=Path),
              default=None, help="Output directory (default: same as --in).")
def report(config_path, overrides, seed, timing, in_dir, out_dir):
    """Render the Markdown report and its figures from eval tables."""
    _load(config_path, overrides, seed)
    with _lib_errors(), _stage("report", timing):
        paths = render_report(in_dir, out_dir)
    _echo_wrote(paths.values())


if __name__ == "__main__":
    main()
