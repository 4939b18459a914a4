"""Synthetic approach-scenario generator.

Each sequence is a straight approach toward a static obstacle: a short hold,
a ramp up to the commanded speed, then a cruise.  The true depth integrates
the true speed exactly (d[i+1] = d[i] - v[i] * dt), the camera depth adds
small Gaussian noise, and the range channel observes the true depth through
the inverse of a fixed affine map, so downstream calibration has a known
ground truth to recover.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from odca.core import SensorFrame, SensorSequence, SequenceMeta, stable_seed


@dataclass(frozen=True)
class SynthConfig:
    """Scenario and noise parameters for generated sequences."""

    n_sequences: int = 13
    duration_s: float = 8.0
    rate_hz: float = 50.0
    seed: int = 0
    speeds: tuple[float, ...] = (1.0, 1.5, 2.0)
    steerings: tuple[float, ...] = (0.0, 15.0, -15.0)
    depth_noise: float = 0.01
    lidar_noise: float = 0.02
    speed_noise: float = 0.005
    conf_center: float = 0.9
    conf_noise: float = 0.05
    alpha_true: float = 0.97
    beta_true: float = 0.08
    hold_s: float = 1.0
    ramp_s: float = 0.5
    final_margin_m: float = 1.0

    def __post_init__(self) -> None:
        if self.n_sequences < 1:
            raise ValueError("n_sequences must be >= 1")
        if self.duration_s <= self.hold_s + self.ramp_s:
            raise ValueError("duration must exceed hold + ramp time")


def _velocity_profile(cfg: SynthConfig, v_cmd: float, n: int, dt: float) -> np.ndarray:
    t = np.arange(n) * dt
    ramp = np.clip((t - cfg.hold_s) / cfg.ramp_s, 0.0, 1.0)
    return v_cmd * ramp


def generate_sequence(cfg: SynthConfig, index: int) -> SensorSequence:
    """One deterministic approach sequence; the id encodes the index."""
    combos = list(itertools.product(cfg.speeds, cfg.steerings))
    v_cmd, steer_cmd = combos[index % len(combos)]
    rng = np.random.default_rng(stable_seed("synth", cfg.seed, index))

    dt = 1.0 / cfg.rate_hz
    n = int(round(cfg.duration_s * cfg.rate_hz))
    v_true = _velocity_profile(cfg, v_cmd, n, dt)
    travel = float(v_true.sum() * dt)
    d0 = travel + cfg.final_margin_m + float(rng.uniform(0.0, 0.5))

    d_true = np.empty(n)
    d_true[0] = d0
    for i in range(n - 1):
        d_true[i + 1] = d_true[i] - v_true[i] * dt

    depth = d_true + rng.normal(0, cfg.depth_noise, size=n)
    conf = np.clip(cfg.conf_center + rng.normal(0, cfg.conf_noise, size=n), 0.0, 1.0)
    lidar = (d_true - cfg.beta_true) / cfg.alpha_true + rng.normal(0, cfg.lidar_noise, size=n)
    speed = np.clip(v_true + rng.normal(0, cfg.speed_noise, size=n), 0.0, None)
    throttle = np.clip(v_true / max(cfg.speeds), 0.0, 1.0)

    frames = tuple(
        SensorFrame(
            t=round(i * dt, 9),
            depth=float(max(depth[i], 1e-3)),
            conf=float(conf[i]),
            lidar=float(max(lidar[i], 1e-3)),
            speed=float(speed[i]),
            throttle=float(throttle[i]),
            steering=float(steer_cmd),
        )
        for i in range(n)
    )
    return SensorSequence(
        id=f"synth-{cfg.seed:03d}-{index:03d}",
        frames=frames,
        labels=(False,) * n,
        attack_kind="none",
        meta=SequenceMeta(speed_cmd=float(v_cmd), steering_cmd=float(steer_cmd)),
    )


def generate_dataset(cfg: SynthConfig = SynthConfig()) -> list[SensorSequence]:
    """The full set of clean sequences for one seed."""
    return [generate_sequence(cfg, k) for k in range(cfg.n_sequences)]
