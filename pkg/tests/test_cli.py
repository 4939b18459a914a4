"""End-to-end command-line workflows over a small synthetic run."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from odca.align import AlignmentModel
from odca.cli import SWEEP_COLUMNS, main
from odca.gatefuse import read_results_csv
from odca.repair import DeltaHead

SMALL_TOML = """\
[eval]
seed = 0
severities = ["strong"]

[synth]
n_sequences = 6
duration_s = 4.0

[train]
epochs = 8
patience = 8

[scenario]
max_duration_s = 8.0
"""


def invoke(*args, env=None):
    runner = CliRunner()
    return runner.invoke(main, list(args), env=env, catch_exceptions=False)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One full pipeline run: gen, attack, train, repair, eval, sweep."""
    root = tmp_path_factory.mktemp("cliwork")
    cfg = root / "run.toml"
    cfg.write_text(SMALL_TOML)
    c = str(cfg)

    steps = [
        ("gen", "--config", c, "--out", str(root / "clean")),
        ("attack", "--config", c, "--in", str(root / "clean"),
         "--out", str(root / "attacked"), "--severity", "strong"),
        ("align", "--config", c, "--in", str(root / "clean"),
         "--out", str(root / "alignment.json")),
        ("train", "--config", c, "--out", str(root / "model")),
        ("repair", "--config", c,
         "--in", str(root / "attacked" / "synth-000-000.csv"),
         "--model", str(root / "model"),
         "--clean", str(root / "clean" / "synth-000-000.csv"),
         "--out", str(root / "eval" / "results.csv")),
        ("eval", "--config", c, "--out", str(root / "eval"), "--ablation"),
        ("sweep", "--config", c, "--out", str(root / "eval" / "sweep.csv"),
         "--trials", "4", "--t-atk", "0.5", "--t-atk", "1.5"),
        ("closedloop", "--config", c, "--out", str(root / "cl"),
         "--trials", "4"),
        ("report", "--config", c, "--in", str(root / "eval"),
         "--out", str(root / "report")),
    ]
    for step in steps:
        result = invoke(*step)
        assert result.exit_code == 0, f"{step[0]} failed: {result.output}"
    return root


class TestArtifacts:
    def test_gen_writes_sequences_and_manifest(self, workdir):
        files = sorted((workdir / "clean").glob("*.csv"))
        assert len(files) == 6
        manifest = json.loads((workdir / "clean" / "manifest.json").read_text())
        assert manifest["ids"] == [f"synth-000-{k:03d}" for k in range(6)]
        assert manifest["config"]["eval"]["synth"]["n_sequences"] == 6

    def test_attack_corrupts_labels(self, workdir):
        from odca.core import load_sequence
        seq = load_sequence(workdir / "attacked" / "synth-000-000.csv")
        assert seq.labels is not None
        assert seq.label_array().sum() > 0

    def test_align_model_loads(self, workdir):
        model = AlignmentModel.load(workdir / "alignment.json")
        assert 0.9 < model.alpha < 1.05
        assert model.n_pairs > 0

    def test_train_outputs(self, workdir):
        head = DeltaHead.load(workdir / "model" / "head.json")
        assert head.n_params == 921
        meta = json.loads((workdir / "model" / "train_meta.json").read_text())
        assert set(meta["split"]) == {"train", "val", "test"}
        assert meta["forecaster"] == "builtin"

    def test_repair_results_table(self, workdir):
        data = read_results_csv(workdir / "eval" / "results.csv")
        assert data["t"].size == 200  # 4 s at 50 Hz
        assert np.isfinite(data["d_clean"]).all()
        assert np.isfinite(data["d_fused"]).all()
        assert np.isnan(data["step_latency_us"]).all()

    def test_eval_tables(self, workdir):
        names = {p.name for p in (workdir / "eval").iterdir()}
        assert {"eval_report.json", "recovery.csv", "diagnostics.csv",
                "summary.csv", "ablation.csv"} <= names
        report = json.loads((workdir / "eval" / "eval_report.json").read_text())
        assert report["config"]["forecaster"] == "builtin"
        assert set(report["recovery"]) == {"passthrough", "lidar_only", "ekf",
                                           "forecast_replace", "odca"}

    def test_sweep_columns(self, workdir):
        header = (workdir / "eval" / "sweep.csv").read_text().splitlines()[0]
        assert tuple(header.split(",")) == SWEEP_COLUMNS

    def test_closedloop_logs(self, workdir):
        lines = (workdir / "cl" / "closedloop_trials.jsonl").read_text() \
            .splitlines()
        assert len(lines) == 2 * 4 + 1  # both defenses plus a trailer
        trailer = json.loads(lines[-1])
        assert set(trailer["aggregate"]) == {"none", "odca"}
        agg = json.loads((workdir / "cl" / "closedloop.json").read_text())
        assert agg["results"]["none"]["summary"]["n"] == 4

    def test_report_files(self, workdir):
        names = {p.name for p in (workdir / "report").iterdir()}
        assert {"report.md", "recovery.png", "diagnostics.png", "radar.png",
                "sweep.png", "overlay.png"} <= names


class TestDeterminism:
    def test_eval_and_report_reruns_are_byte_identical(self, workdir,
                                                       tmp_path):
        cfg = str(workdir / "run.toml")
        result = invoke("eval", "--config", cfg, "--out", str(tmp_path / "e"),
                        "--ablation")
        assert result.exit_code == 0
        for name in ("eval_report.json", "recovery.csv", "diagnostics.csv",
                     "summary.csv", "ablation.csv"):
            assert (tmp_path / "e" / name).read_bytes() == \
                (workdir / "eval" / name).read_bytes(), name
        result = invoke("report", "--in", str(workdir / "eval"),
                        "--out", str(tmp_path / "r"))
        assert result.exit_code == 0
        for name in ("report.md", "recovery.png", "diagnostics.png",
                     "radar.png", "sweep.png", "overlay.png"):
            assert (tmp_path / "r" / name).read_bytes() == \
                (workdir / "report" / name).read_bytes(), name

    def test_gen_rerun_identical(self, workdir, tmp_path):
        cfg = str(workdir / "run.toml")
        result = invoke("gen", "--config", cfg, "--out", str(tmp_path / "g"))
        assert result.exit_code == 0
        for src in sorted((workdir / "clean").iterdir()):
            assert (tmp_path / "g" / src.name).read_bytes() == \
                src.read_bytes(), src.name


class TestOverridesAndSeeds:
    def test_seed_flag_changes_ids(self, tmp_path):
        result = invoke("gen", "--set", "synth.n_sequences=2",
                        "--set", "synth.duration_s=4.0", "--seed", "5",
                        "--out", str(tmp_path / "g"))
        assert result.exit_code == 0
        manifest = json.loads((tmp_path / "g" / "manifest.json").read_text())
        assert manifest["ids"] == ["synth-005-000", "synth-005-001"]
        assert manifest["config"]["eval"]["seed"] == 5


class TestErrors:
    def test_missing_config_file(self, tmp_path):
        result = invoke("gen", "--config", str(tmp_path / "no.toml"),
                        "--out", str(tmp_path / "g"))
        assert result.exit_code != 0
        assert "config file not found" in result.output

    def test_unknown_override_key(self, tmp_path):
        result = invoke("gen", "--set", "synth.bogus=1",
                        "--out", str(tmp_path / "g"))
        assert result.exit_code != 0
        assert "bogus" in result.output

    def test_missing_model_suggests_train(self, workdir, tmp_path):
        result = invoke("repair",
                        "--in", str(workdir / "attacked" /
                                    "synth-000-000.csv"),
                        "--model", str(tmp_path / "nomodel"),
                        "--out", str(tmp_path / "r.csv"))
        assert result.exit_code != 0
        assert "odca train" in result.output

    def test_empty_sequence_dir_suggests_gen(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        result = invoke("align", "--in", str(empty),
                        "--out", str(tmp_path / "a.json"))
        assert result.exit_code != 0
        assert "odca gen" in result.output

    def test_report_before_eval(self, tmp_path):
        result = invoke("report", "--in", str(tmp_path))
        assert result.exit_code != 0
        assert "run the eval command first" in result.output

    def test_clean_reference_length_mismatch(self, workdir, tmp_path):
        result = invoke("gen", "--set", "synth.n_sequences=1",
                        "--set", "synth.duration_s=3.0",
                        "--out", str(tmp_path / "short"))
        assert result.exit_code == 0
        result = invoke("repair",
                        "--in", str(workdir / "attacked" /
                                    "synth-000-000.csv"),
                        "--model", str(workdir / "model"),
                        "--clean", str(tmp_path / "short" /
                                       "synth-000-000.csv"),
                        "--out", str(tmp_path / "r.csv"))
        assert result.exit_code != 0
        assert "does not match" in result.output

    def test_unknown_forecaster_env(self, workdir, tmp_path):
        result = invoke("repair",
                        "--in", str(workdir / "attacked" /
                                    "synth-000-000.csv"),
                        "--model", str(workdir / "model"),
                        "--out", str(tmp_path / "r.csv"),
                        env={"ODCA_FORECASTER": "warpdrive"})
        assert result.exit_code != 0
        assert "warpdrive" in result.output
