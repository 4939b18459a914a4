"""Self-checks for the synthetic scenario generator."""

from __future__ import annotations

import numpy as np
import pytest

from odca.align import fit_alignment
from odca.synth import SynthConfig, generate_dataset, generate_sequence


class TestGenerator:
    def test_shape_and_count(self):
        seqs = generate_dataset(SynthConfig(seed=1))
        assert len(seqs) == 13
        assert all(len(s) == 400 for s in seqs)
        assert len({s.id for s in seqs}) == 13

    def test_deterministic_per_seed(self):
        a = generate_dataset(SynthConfig(seed=5))
        b = generate_dataset(SynthConfig(seed=5))
        c = generate_dataset(SynthConfig(seed=6))
        assert all(x.frames == y.frames for x, y in zip(a, b))
        assert a[0].frames != c[0].frames

    def test_command_grid_covered(self):
        seqs = generate_dataset(SynthConfig(seed=0))
        combos = {(s.meta.speed_cmd, s.meta.steering_cmd) for s in seqs}
        assert combos == {(v, st) for v in (1.0, 1.5, 2.0) for st in (0.0, 15.0, -15.0)}

    def test_kinematic_consistency(self):
        # pooled signed residual of the depth/speed relation on cruise frames:
        # sensor noise averages out, so any systematic offset would show up
        cfg = SynthConfig(seed=3)
        residuals = []
        for seq in generate_dataset(cfg):
            depth = seq.channel("depth")
            speed = seq.channel("speed")
            dt = 1.0 / cfg.rate_hz
            cruise = slice(int((cfg.hold_s + cfg.ramp_s) * cfg.rate_hz) + 5, len(seq) - 1)
            dd = np.diff(depth)[cruise]
            residuals.extend(dd + speed[cruise] * dt)
        residuals = np.asarray(residuals)
        assert abs(residuals.mean()) < 1e-3
        assert np.abs(residuals).mean() < 0.05

    def test_final_distance_positive(self):
        for seq in generate_dataset(SynthConfig(seed=7)):
            assert seq.frames[-1].depth > 0.5

    def test_channels_valid(self):
        seq = generate_sequence(SynthConfig(seed=2), 0)
        conf = seq.channel("conf")
        assert ((conf >= 0) & (conf <= 1)).all()
        assert (seq.channel("depth") > 0).all()
        assert (seq.channel("lidar") > 0).all()
        assert (seq.channel("speed") >= 0).all()
        assert seq.attack_kind == "none"
        assert not seq.label_array().any()

    def test_range_map_recoverable(self):
        # calibrating range against depth must recover the generating map
        cfg = SynthConfig(seed=4)
        lidar, depth = [], []
        for seq in generate_dataset(cfg)[:4]:
            lidar.extend(seq.channel("lidar")[:250])
            depth.extend(seq.channel("depth")[:250])
        model = fit_alignment(np.array(lidar), np.array(depth))
        assert model.alpha == pytest.approx(cfg.alpha_true, abs=0.02)
        assert model.beta == pytest.approx(cfg.beta_true, abs=0.02)

    def test_hold_then_approach(self):
        cfg = SynthConfig(seed=0)
        seq = generate_sequence(cfg, 0)
        depth = seq.channel("depth")
        hold_frames = int(cfg.hold_s * cfg.rate_hz)
        # during hold the depth stays flat; afterwards it falls
        assert abs(depth[hold_frames - 1] - depth[0]) < 0.05
        assert depth[-1] < depth[0] - 1.0

    def test_config_validation(self):
        with pytest.raises(ValueError, match="duration"):
            SynthConfig(duration_s=1.0, hold_s=1.0, ramp_s=0.5)
        with pytest.raises(ValueError, match="n_sequences"):
            SynthConfig(n_sequences=0)
