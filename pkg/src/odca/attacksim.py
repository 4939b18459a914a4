"""Seeded corruption of clean sequences into attacked variants with labels.

Corruption is injected as intermittent temporal segments.  Inside a segment
the depth channel is shifted by a per-segment constant bias and the confidence
is pulled down toward a severity-specific floor; at the strongest severity a
segment may instead black out (depth absent, confidence near zero).  Frames
outside segments are bit-identical to the input and the LiDAR channel is never
touched.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from odca.core import SensorFrame, SensorSequence, stable_seed


class Severity(str, enum.Enum):
    NONE = "none"
    WEAK = "weak"
    MID = "mid"
    STRONG = "strong"


@dataclass(frozen=True)
class AttackSpec:
    """Corruption knobs for one severity setting."""

    severity: Severity = Severity.MID
    seed: int = 0
    segment_density: float = 0.25
    segment_len_min: float = 0.3
    segment_len_max: float = 3.0
    bias_min: float = 0.30
    bias_max: float = 0.80
    conf_floor: float = 0.4
    blackout_prob: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 <= self.segment_density <= 1.0:
            raise ValueError(f"segment_density must be in [0, 1], got {self.segment_density}")
        if self.bias_min > self.bias_max:
            raise ValueError("bias_min must be <= bias_max")
        if not 0.0 <= self.conf_floor <= 1.0:
            raise ValueError(f"conf_floor must be in [0, 1], got {self.conf_floor}")


_PRESETS: dict[Severity, dict[str, float]] = {
    Severity.NONE: dict(segment_density=0.0, bias_min=0.0, bias_max=0.0, conf_floor=1.0, blackout_prob=0.0),
    Severity.WEAK: dict(segment_density=0.15, bias_min=0.10, bias_max=0.30, conf_floor=0.7, blackout_prob=0.0),
    Severity.MID: dict(segment_density=0.25, bias_min=0.30, bias_max=0.80, conf_floor=0.4, blackout_prob=0.1),
    Severity.STRONG: dict(segment_density=0.35, bias_min=0.80, bias_max=2.00, conf_floor=0.1, blackout_prob=0.5),
}


def preset(severity: Severity | str, seed: int = 0, **overrides) -> AttackSpec:
    """Default AttackSpec for a severity level, with optional field overrides."""
    severity = Severity(severity)
    fields = dict(_PRESETS[severity])
    fields.update(overrides)
    return AttackSpec(severity=severity, seed=seed, **fields)


def generate_segments(duration: float, spec: AttackSpec) -> list[tuple[float, float]]:
    """Non-overlapping attack intervals covering ~``segment_density`` of ``[0, duration]``.

    Deterministic for a fixed spec.  Segment lengths are drawn uniformly from
    the configured range; the last one is trimmed so the total covered
    fraction lands on the target.
    """
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if spec.severity is Severity.NONE or spec.segment_density == 0.0:
        return []
    rng = np.random.default_rng(stable_seed("segments", spec.seed))
    target = spec.segment_density * duration
    lengths: list[float] = []
    total = 0.0
    while total < target:
        length = float(rng.uniform(spec.segment_len_min, spec.segment_len_max))
        if total + length > target:
            length = target - total
            if length < 0.05 and lengths:
                lengths[-1] += length
                total = target
                break
        lengths.append(length)
        total += length
    free = duration - total
    if free < 0:
        # density too high for the draw; scale lengths down proportionally
        scale = duration / total
        lengths = [l * scale for l in lengths]
        free = 0.0
    gaps = rng.dirichlet(np.ones(len(lengths) + 1)) * free
    segments: list[tuple[float, float]] = []
    cursor = 0.0
    for gap, length in zip(gaps, lengths):
        start = cursor + gap
        segments.append((start, start + length))
        cursor = start + length
    return segments


def apply_attack(clean: SensorSequence, spec: AttackSpec) -> SensorSequence:
    """Corrupt a clean sequence according to ``spec``; labels mark exactly the attacked frames.

    Pure in (clean, spec): the RNG stream is derived from the spec seed and the
    sequence id, so different sequences receive independent corruption while
    repeated calls are identical.
    """
    depth = clean.channel("depth")
    if np.isfinite(depth).mean() < 0.9:
        raise ValueError("sequence too sparse: valid depth on < 90% of frames")
    if spec.severity is Severity.NONE:
        return clean.with_labels([False] * len(clean), attack_kind=Severity.NONE.value)

    ts = clean.timestamps
    t0 = ts[0]
    duration = clean.duration()
    seg_spec = replace(spec, seed=stable_seed("attack", spec.seed, clean.id))
    segments = generate_segments(max(duration, 1e-9), seg_spec)
    rng = np.random.default_rng(stable_seed("corrupt", spec.seed, clean.id))

    labels = np.zeros(len(clean), dtype=bool)
    frames = list(clean.frames)
    for start, end in segments:
        in_seg = (ts - t0 >= start) & (ts - t0 < end)
        if not in_seg.any():
            continue
        labels |= in_seg
        bias_mag = float(rng.uniform(spec.bias_min, spec.bias_max))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        blackout = spec.severity is Severity.STRONG and rng.random() < spec.blackout_prob
        # larger injected bias couples to a deeper confidence drop
        span = spec.bias_max - spec.bias_min
        rel = 0.0 if span == 0 else (bias_mag - spec.bias_min) / span
        conf_mult = spec.conf_floor + 0.2 * (1.0 - rel)
        for i in np.flatnonzero(in_seg):
            f = frames[i]
            if blackout:
                frames[i] = replace(f, depth=None, conf=float(rng.uniform(0.0, 0.05)))
            else:
                new_depth = None if f.depth is None else max(f.depth + sign * bias_mag, 0.05)
                new_conf = None if f.conf is None else float(np.clip(f.conf * conf_mult, 0.0, 1.0))
                frames[i] = replace(f, depth=new_depth, conf=new_conf)
    return SensorSequence(
        id=clean.id, frames=tuple(frames), labels=tuple(bool(x) for x in labels),
        attack_kind=spec.severity.value, meta=clean.meta,
    )


def covered_fraction(segments: list[tuple[float, float]], duration: float) -> float:
    return sum(e - s for s, e in segments) / duration
