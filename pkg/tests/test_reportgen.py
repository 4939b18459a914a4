"""Markdown + figure rendering from evaluation artifacts."""

import csv
import dataclasses

import pytest

from odca.evalrun import EvalConfig, run_ablation, run_eval, write_report
from odca.gatefuse import RESULT_COLUMNS
from odca.repair import TrainConfig
from odca.reportgen import ReportError, render_report
from odca.synth import SynthConfig

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

SMALL_CFG = EvalConfig(
    seed=0,
    synth=SynthConfig(n_sequences=6, duration_s=4.0),
    severities=("strong",),
    train=TrainConfig(epochs=8, patience=8),
)


def _write_sweep_csv(path):
    cols = ["t_atk", "rho", "lost_frames", "asr_none", "asr_odca",
            "latency_none", "latency_odca"]
    rows = [
        [0.0, 0.0, 0.0, 0.0, 0.0, 1.2, 1.2],
        [0.5, 1.0, 8.0, 0.3, 0.0, 1.1, 1.2],
        [3.0, 1.0, 48.0, 1.0, 0.1, "", 1.3],
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        writer.writerows(rows)


def _write_results_csv(path, n=60):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for i in range(n):
            t = i * 0.02
            label = 1 if 20 <= i < 35 else 0
            clean = 4.0 - 0.02 * i
            tilde = clean + (0.5 if label else 0.0)
            writer.writerow([t, clean, tilde, clean, clean,
                             1.0 if label else 0.0,
                             0.5 if label else 0.01, 0.0, 0.01, label, ""])


@pytest.fixture(scope="module")
def eval_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("evalout")
    report = run_eval(SMALL_CFG)
    report.ablation = run_ablation(SMALL_CFG)
    write_report(report, out)
    _write_sweep_csv(out / "sweep.csv")
    _write_results_csv(out / "results.csv")
    return out


class TestRenderReport:
    def test_full_render(self, eval_dir, tmp_path):
        paths = render_report(eval_dir, tmp_path)
        assert set(paths) == {"markdown", "recovery", "diagnostics", "radar",
                              "sweep", "overlay"}
        for key, path in paths.items():
            assert path.exists(), key
            if key != "markdown":
                assert path.read_bytes()[:8] == PNG_MAGIC, key

    def test_markdown_sections(self, eval_dir, tmp_path):
        paths = render_report(eval_dir, tmp_path)
        text = paths["markdown"].read_text()
        for heading in ("## Recovery error", "## Clean-pass fidelity",
                        "## Attack detection", "## Cross-severity summary",
                        "## Loss-term ablation",
                        "## Closed-loop persistence sweep",
                        "## Example repair trace", "## Run configuration"):
            assert heading in text, heading
        for method in ("passthrough", "lidar_only", "ekf",
                       "forecast_replace", "odca"):
            assert method in text
        for variant in ("id+delta0+cons", "full"):
            assert variant in text

    def test_default_out_dir_is_in_dir(self, eval_dir):
        paths = render_report(eval_dir)
        assert paths["markdown"].parent == eval_dir

    def test_render_is_byte_deterministic(self, eval_dir, tmp_path):
        a = render_report(eval_dir, tmp_path / "a")
        b = render_report(eval_dir, tmp_path / "b")
        for key in a:
            assert a[key].read_bytes() == b[key].read_bytes(), key

    def test_optional_inputs_can_be_absent(self, eval_dir, tmp_path):
        bare = tmp_path / "bare"
        bare.mkdir()
        for name in ("eval_report.json",):
            bare.joinpath(name).write_bytes(
                eval_dir.joinpath(name).read_bytes())
        paths = render_report(bare, tmp_path / "out")
        assert "sweep" not in paths
        assert "overlay" not in paths
        text = paths["markdown"].read_text()
        assert "## Recovery error" in text
        assert "## Closed-loop persistence sweep" not in text
        assert "## Example repair trace" not in text

    def test_missing_eval_report_is_an_error(self, tmp_path):
        with pytest.raises(ReportError, match="run the eval command first"):
            render_report(tmp_path)

    def test_ablation_falls_back_to_csv(self, eval_dir, tmp_path):
        stripped = tmp_path / "stripped"
        stripped.mkdir()
        import json
        payload = json.loads(
            eval_dir.joinpath("eval_report.json").read_text())
        payload["ablation"] = []
        stripped.joinpath("eval_report.json").write_text(
            json.dumps(payload))
        stripped.joinpath("ablation.csv").write_bytes(
            eval_dir.joinpath("ablation.csv").read_bytes())
        paths = render_report(stripped, tmp_path / "out2")
        text = paths["markdown"].read_text()
        assert "## Loss-term ablation" in text
        assert "id+delta0+kin" in text
