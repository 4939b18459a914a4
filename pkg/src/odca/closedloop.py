"""Closed-loop braking trials under detection-suppression attacks.

A vehicle approaches a stop obstacle at constant speed.  Its camera pipeline
reports the obstacle's distance once within detector range; a simple
controller latches the brake after ``k_confirm`` consecutive reports at or
below the trigger distance.  The attacker suppresses camera detections
(per-frame Bernoulli with probability ``rho``) inside a timed window armed
shortly before the critical braking region.  A trial succeeds when the
vehicle comes to rest past the trigger but within ``d_safe`` of the obstacle;
running it over counts as an attacker win.

Two defenses are compared on identical noise and attack realizations:
``none`` feeds raw camera readings to the controller, ``odca`` feeds the
gated repair's fused estimate, whose forecast carries the distance through
suppressed frames.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from odca.core import stable_seed
from odca.forecast import BootstrapForecaster, run_forecast
from odca.gatefuse import GateParams, fuse, gate_weight
from odca.metrics import TrialOutcome, TrialSummary, summarize_trials
from odca.repair import DeltaHead

DEFENSES = ("none", "odca")


@dataclass(frozen=True)
class SimConfig:
    """Geometry, dynamics, and noise for one trial setup."""

    fps: float = 16.0
    v_cruise: float = 2.0
    d0: float = 6.0
    detect_dist: float = 3.5
    trigger_dist: float = 2.4
    d_safe: float = 0.6
    decel: float = 1.18
    k_confirm: int = 3
    depth_noise: float = 0.01
    lidar_noise: float = 0.02
    conf_clean: float = 0.9
    arm_earliest_s: float = 1.0
    arm_latest_s: float = 1.9
    max_duration_s: float = 12.0
    forecast_window: int = 32
    forecast_horizon: int = 4
    forecast_samples: int = 8

    def __post_init__(self) -> None:
        if self.trigger_dist <= self.d_safe:
            raise ValueError("trigger_dist must exceed d_safe")
        if not self.arm_earliest_s <= self.arm_latest_s:
            raise ValueError("arm window is inverted")


@dataclass(frozen=True)
class AttackWindow:
    """Suppression window: frames in [start_s, start_s + duration_s)."""

    start_s: float
    duration_s: float
    rho: float = 1.0

    def active(self, t: float) -> bool:
        return self.start_s <= t < self.start_s + self.duration_s


@dataclass
class TrialResult:
    outcome: TrialOutcome
    defense: str
    braked: bool
    stop_distance: float | None  # rest distance, None if never stopped
    lost_detection_frames: int
    n_frames: int


class _OdcaEstimator:
    """Per-frame gated repair over the trial's sensor stream."""

    def __init__(self, cfg: SimConfig, head: DeltaHead, seed: int) -> None:
        self.cfg = cfg
        self.head = head
        self.seed = seed
        self.backend = BootstrapForecaster()
        self.gate = GateParams()
        self.work: list[float] = []
        self.seen_depth = False

    def step(self, i: int, reading: float | None, conf: float, lidar: float,
             speed: float) -> float:
        cfg = self.cfg
        if not self.work:
            mu1, sigma1 = (reading if reading is not None else lidar), 0.0
        else:
            ctx = np.asarray(self.work[-cfg.forecast_window:])
            if ctx.size < 2:
                ctx = np.concatenate([[ctx[0]], ctx])
            res = run_forecast(self.backend, ctx, horizon=cfg.forecast_horizon,
                               n_samples=cfg.forecast_samples,
                               seed=stable_seed(self.seed, "fc", i))
            mu1, sigma1 = float(res.mu[0]), float(res.sigma[0])
        if reading is not None:
            self.seen_depth = True
            d_tilde = reading
        elif self.seen_depth:
            d_tilde = mu1
        else:
            # camera has produced nothing yet: monitor via the range sensor
            # so the forecast context tracks the approach from the start
            d_tilde = lidar
        conf_work = conf if reading is not None else 0.0
        row = np.array([d_tilde, conf_work, mu1, sigma1, speed, 0.0, 0.0,
                        1.0 / cfg.fps])
        d_rep = d_tilde + float(self.head.delta(row)[0])
        r_xs = abs(d_tilde - lidar)
        w = 1.0 if reading is None else gate_weight(r_xs, self.gate)
        fused = fuse(d_tilde, d_rep, w)
        suspect = reading is not None and r_xs > self.gate.tau_low
        self.work.append(mu1 if (suspect and self.work) else d_tilde)
        return fused


def zero_head() -> DeltaHead:
    head = DeltaHead(seed=0)
    head.W2 = np.zeros_like(head.W2)
    head.b2 = 0.0
    return head


def run_trial(cfg: SimConfig, defense: str, window: AttackWindow | None,
              seed: int, head: DeltaHead | None = None) -> TrialResult:
    """One braking trial; all randomness is a pure function of ``seed``.

    Noise and suppression draws are indexed by frame, not by simulation
    state, so both defenses see identical realizations for the same seed.
    """
    if defense not in DEFENSES:
        raise ValueError(f"unknown defense {defense!r}")
    n_max = int(cfg.max_duration_s * cfg.fps)
    dt = 1.0 / cfg.fps
    rng = np.random.default_rng(stable_seed("trial", seed))
    depth_eps = rng.normal(0, cfg.depth_noise, size=n_max)
    lidar_eps = rng.normal(0, cfg.lidar_noise, size=n_max)
    suppress_draw = rng.random(n_max)

    estimator = _OdcaEstimator(cfg, head if head is not None else zero_head(),
                               seed) if defense == "odca" else None

    d = cfg.d0
    v = cfg.v_cruise
    braking = False
    consec = 0
    lost = 0
    t_trigger_true: float | None = None
    t_safe_true: float | None = None
    stopped_at: float | None = None
    frames_run = 0

    for i in range(n_max):
        t = i * dt
        frames_run = i + 1
        if t_trigger_true is None and d <= cfg.trigger_dist:
            t_trigger_true = t
        if t_safe_true is None and d <= cfg.d_safe:
            t_safe_true = t

        detectable = d <= cfg.detect_dist
        suppressed = (detectable and window is not None and window.active(t)
                      and suppress_draw[i] < window.rho)
        if suppressed:
            lost += 1
        reading = float(d + depth_eps[i]) if detectable and not suppressed else None
        lidar = float(d + lidar_eps[i])

        if estimator is not None:
            estimate = estimator.step(i, reading, cfg.conf_clean, lidar, v)
        else:
            estimate = reading

        if not braking:
            if estimate is not None and estimate <= cfg.trigger_dist:
                consec += 1
            else:
                consec = 0
            if consec >= cfg.k_confirm:
                braking = True

        if braking and v > 0:
            v = max(0.0, v - cfg.decel * dt)
        d -= v * dt

        if v == 0.0 and stopped_at is None:
            stopped_at = d
        window_done = window is None or t >= window.start_s + window.duration_s
        if stopped_at is not None and window_done:
            break

    safe = (braking and stopped_at is not None
            and 0.0 < stopped_at <= cfg.d_safe)
    latency = (t_safe_true - t_trigger_true
               if t_safe_true is not None and t_trigger_true is not None else None)
    return TrialResult(
        outcome=TrialOutcome(stopped_safely=safe, latency_s=latency),
        defense=defense, braked=braking, stop_distance=stopped_at,
        lost_detection_frames=lost, n_frames=frames_run,
    )


def draw_window(cfg: SimConfig, duration_s: float, rho: float,
                seed: int) -> AttackWindow:
    """Arm time drawn uniformly from the configured band."""
    rng = np.random.default_rng(stable_seed("arm", seed))
    start = float(rng.uniform(cfg.arm_earliest_s, cfg.arm_latest_s))
    return AttackWindow(start_s=start, duration_s=duration_s, rho=rho)


@dataclass(frozen=True)
class BatchResult:
    defense: str
    t_atk: float | None
    rho: float
    summary: TrialSummary
    lost_frames_mean: float
    trials: tuple[TrialResult, ...]


def run_batch(cfg: SimConfig, defense: str, t_atk: float | None,
              n_trials: int, seed: int, rho: float = 1.0,
              head: DeltaHead | None = None) -> BatchResult:
    """A batch of paired trials; trial k shares its realization across defenses."""
    results = []
    for k in range(n_trials):
        trial_seed = stable_seed(seed, k)
        window = None if t_atk is None else draw_window(cfg, t_atk, rho, trial_seed)
        results.append(run_trial(cfg, defense, window, trial_seed, head=head))
    summary = summarize_trials([r.outcome for r in results])
    lost = float(np.mean([r.lost_detection_frames for r in results]))
    return BatchResult(defense=defense, t_atk=t_atk, rho=rho, summary=summary,
                       lost_frames_mean=lost, trials=tuple(results))


def persistence_sweep(cfg: SimConfig, t_atks: tuple[float, ...] = (0.5, 1.0, 3.0),
                      n_trials: int = 30, seed: int = 0, rho: float = 1.0,
                      head: DeltaHead | None = None) -> list[dict]:
    """Attack-duration sweep, both defenses paired, plus a clean reference row."""
    rows = []
    clean = {d: run_batch(cfg, d, None, n_trials, seed, head=head) for d in DEFENSES}
    rows.append({
        "t_atk": 0.0, "rho": 0.0,
        "lost_frames": 0.0,
        "asr_none": clean["none"].summary.attack_success_rate,
        "asr_odca": clean["odca"].summary.attack_success_rate,
        "latency_none": clean["none"].summary.latency_mean,
        "latency_odca": clean["odca"].summary.latency_mean,
    })
    for t_atk in t_atks:
        batches = {d: run_batch(cfg, d, t_atk, n_trials, seed, rho=rho, head=head)
                   for d in DEFENSES}
        rows.append({
            "t_atk": t_atk, "rho": rho,
            "lost_frames": batches["none"].lost_frames_mean,
            "asr_none": batches["none"].summary.attack_success_rate,
            "asr_odca": batches["odca"].summary.attack_success_rate,
            "latency_none": batches["none"].summary.latency_mean,
            "latency_odca": batches["odca"].summary.latency_mean,
        })
    return rows
