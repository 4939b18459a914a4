"""Domain types, windowing, timestamp handling, and dataset file I/O.

A sequence is an ordered series of synchronized sensor frames from one driving
run.  Depth, confidence, and LiDAR channels may be absent on individual frames;
absence is an explicit state (``None`` in memory, empty cell in CSV, omitted
key in JSONL), never a sentinel number.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CSV_COLUMNS = ["t", "depth", "conf", "lidar", "speed", "throttle", "steering", "attack_label"]


class DatasetError(ValueError):
    """Raised for malformed dataset files or invariant violations."""


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise DatasetError(msg)


@dataclass(frozen=True)
class SensorFrame:
    """One synchronized sample: depth distance, confidence, LiDAR range, vehicle state.

    ``depth``, ``conf`` and ``lidar`` are ``None`` when the channel is absent
    on this frame (e.g. during a blackout).
    """

    t: float
    depth: float | None = None
    conf: float | None = None
    lidar: float | None = None
    speed: float = 0.0
    throttle: float = 0.0
    steering: float = 0.0

    def __post_init__(self) -> None:
        _check(math.isfinite(self.t), f"timestamp must be finite, got {self.t!r}")
        if self.depth is not None:
            _check(math.isfinite(self.depth) and self.depth > 0,
                   f"depth must be positive when present, got {self.depth!r}")
        if self.conf is not None:
            _check(math.isfinite(self.conf) and 0.0 <= self.conf <= 1.0,
                   f"conf must be in [0, 1] when present, got {self.conf!r}")
        if self.lidar is not None:
            _check(math.isfinite(self.lidar) and self.lidar > 0,
                   f"lidar must be positive when present, got {self.lidar!r}")


@dataclass(frozen=True)
class SequenceMeta:
    """Commanded operating point of the run."""

    speed_cmd: float = 0.0
    steering_cmd: float = 0.0


@dataclass(frozen=True)
class SensorSequence:
    """Ordered frames of one run, with optional per-frame attack labels."""

    id: str
    frames: tuple[SensorFrame, ...]
    labels: tuple[bool, ...] | None = None
    attack_kind: str | None = None
    meta: SequenceMeta = field(default_factory=SequenceMeta)

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(bool(x) for x in self.labels))
            _check(len(self.labels) == len(self.frames),
                   f"labels length {len(self.labels)} != frames length {len(self.frames)}")
        ts = [f.t for f in self.frames]
        for i in range(1, len(ts)):
            _check(ts[i] > ts[i - 1],
                   f"timestamps must be strictly increasing (frame {i}: {ts[i]} <= {ts[i-1]})")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.t for f in self.frames], dtype=float)

    def channel(self, name: str) -> np.ndarray:
        """Return a channel as a float array; absent values become NaN."""
        out = np.empty(len(self.frames))
        for i, f in enumerate(self.frames):
            v = getattr(f, name)
            out[i] = np.nan if v is None else v
        return out

    def label_array(self) -> np.ndarray:
        if self.labels is None:
            return np.zeros(len(self.frames), dtype=bool)
        return np.array(self.labels, dtype=bool)

    def duration(self) -> float:
        if not self.frames:
            return 0.0
        return self.frames[-1].t - self.frames[0].t

    def with_labels(self, labels: Sequence[bool], attack_kind: str | None) -> "SensorSequence":
        return replace(self, labels=tuple(bool(x) for x in labels), attack_kind=attack_kind)

    def truncated(self, n: int) -> "SensorSequence":
        labels = None if self.labels is None else self.labels[:n]
        return replace(self, frames=self.frames[:n], labels=labels)


@dataclass(frozen=True)
class ContextWindow:
    """Gap-filled trailing window of depth observations plus aligned aux channels."""

    values: np.ndarray           # (W,) depth, gap-filled, finite
    conf: np.ndarray             # (W,) confidence, gap-filled
    speed: np.ndarray            # (W,)
    dt: float

    def __post_init__(self) -> None:
        _check(np.all(np.isfinite(self.values)), "context window contains non-finite values")

    def __len__(self) -> int:
        return len(self.values)


def estimate_dt(timestamps: Sequence[float], force_fixed: bool = False, fixed_value: float = 0.02) -> float:
    """Median inter-sample interval of a strictly increasing timestamp series.

    ``force_fixed`` bypasses estimation and returns ``fixed_value`` (the
    nominal 50 Hz period by default).
    """
    if force_fixed:
        return fixed_value
    ts = np.asarray(timestamps, dtype=float)
    if ts.size < 2:
        raise DatasetError("insufficient timestamps: need at least 2")
    diffs = np.diff(ts)
    if np.any(diffs <= 0):
        raise DatasetError("timestamps must be strictly increasing")
    return float(np.median(diffs))


def fill_forward(values: np.ndarray) -> np.ndarray:
    """LOCF gap fill; leading NaNs are back-filled with the first valid value.

    Raises if the series contains no valid value at all.
    """
    v = np.asarray(values, dtype=float)
    valid = np.isfinite(v)
    if not valid.any():
        raise DatasetError("no valid context")
    idx = np.where(valid, np.arange(v.size), -1)
    idx = np.maximum.accumulate(idx)
    first = int(np.argmax(valid))
    idx[idx < 0] = first
    return v[idx]


def make_window(seq: SensorSequence, t_index: int, w: int) -> ContextWindow:
    """The ``w`` most recent depth values ending at ``t_index``, gap-filled.

    Missing depth is carried forward from the last observation; positions
    before the start of the sequence are left-padded with the earliest valid
    value.  Fails with "no valid context" if no depth was ever observed at or
    before ``t_index``.
    """
    if t_index < 0 or t_index >= len(seq):
        raise DatasetError(f"t_index {t_index} out of range")
    if w < 1:
        raise DatasetError(f"window length must be >= 1, got {w}")
    depth = seq.channel("depth")[: t_index + 1]
    if not np.isfinite(depth).any():
        raise DatasetError("no valid context")
    filled = fill_forward(depth)
    conf = fill_forward_or_zero(seq.channel("conf")[: t_index + 1])
    speed = seq.channel("speed")[: t_index + 1]
    start = t_index + 1 - w
    if start < 0:
        pad = -start
        values = np.concatenate([np.full(pad, filled[0]), filled])
        conf_w = np.concatenate([np.full(pad, conf[0]), conf])
        speed_w = np.concatenate([np.full(pad, speed[0]), speed])
    else:
        values = filled[start:]
        conf_w = conf[start:]
        speed_w = speed[start:]
    ts = seq.timestamps
    dt = estimate_dt(ts) if len(ts) >= 2 else 0.02
    return ContextWindow(values=values[-w:], conf=conf_w[-w:], speed=speed_w[-w:], dt=dt)


def fill_forward_or_zero(values: np.ndarray) -> np.ndarray:
    """LOCF fill that tolerates an all-NaN series (returns zeros)."""
    v = np.asarray(values, dtype=float)
    if not np.isfinite(v).any():
        return np.zeros_like(v)
    return fill_forward(v)


def stable_seed(*parts: object) -> int:
    """Deterministic 63-bit seed derived from arbitrary parts (order-sensitive)."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "big") >> 1


# ---------------------------------------------------------------------------
# File I/O
#
# CSV: optional '#'-prefixed metadata lines, then a header row with the
# canonical column order. Empty cell encodes an absent value.
# JSONL: one header record {"kind": "header", ...} then one frame per line;
# absent channels are omitted keys.
# ---------------------------------------------------------------------------


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def _parse_opt(cell: str, row: int, col: str) -> float | None:
    cell = cell.strip()
    if cell == "":
        return None
    try:
        return float(cell)
    except ValueError:
        raise DatasetError(f"row {row}: malformed value {cell!r} in column {col!r}") from None


def save_sequence(seq: SensorSequence, path: str | Path, fmt: str | None = None) -> None:
    """Write a sequence as CSV or JSONL; the format defaults to the file suffix."""
    path = Path(path)
    fmt = fmt or _format_from_suffix(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        _save_csv(seq, path)
    elif fmt == "jsonl":
        _save_jsonl(seq, path)
    else:
        raise DatasetError(f"unknown format {fmt!r} (expected 'csv' or 'jsonl')")


def load_sequence(path: str | Path, fmt: str | None = None) -> SensorSequence:
    """Read a sequence from CSV or JSONL, validating all invariants."""
    path = Path(path)
    fmt = fmt or _format_from_suffix(path)
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "jsonl":
        return _load_jsonl(path)
    raise DatasetError(f"unknown format {fmt!r} (expected 'csv' or 'jsonl')")


def _format_from_suffix(path: Path) -> str:
    suffix = path.suffix.lower().lstrip(".")
    return suffix if suffix in ("csv", "jsonl") else "csv"


def _save_csv(seq: SensorSequence, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# id={seq.id}\n")
        fh.write(f"# speed_cmd={seq.meta.speed_cmd!r} steering_cmd={seq.meta.steering_cmd!r}\n")
        if seq.attack_kind is not None:
            fh.write(f"# attack_kind={seq.attack_kind}\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for i, f in enumerate(seq.frames):
            label = "" if seq.labels is None else str(int(seq.labels[i]))
            writer.writerow([
                repr(f.t), _fmt(f.depth), _fmt(f.conf), _fmt(f.lidar),
                repr(f.speed), repr(f.throttle), repr(f.steering), label,
            ])


def _load_csv(path: Path) -> SensorSequence:
    seq_id = path.stem
    meta = SequenceMeta()
    attack_kind = None
    frames: list[SensorFrame] = []
    labels: list[bool] = []
    any_label = False
    with open(path, newline="", encoding="utf-8") as fh:
        header: list[str] | None = None
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if line.startswith("#"):
                seq_id, meta, attack_kind = _parse_meta_comment(line, seq_id, meta, attack_kind)
                continue
            if not line.strip():
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = [c.strip() for c in cells]
                if header != CSV_COLUMNS:
                    raise DatasetError(f"row {lineno}: bad header {header!r}")
                continue
            if len(cells) != len(CSV_COLUMNS):
                raise DatasetError(f"row {lineno}: expected {len(CSV_COLUMNS)} cells, got {len(cells)}")
            try:
                frame = SensorFrame(
                    t=float(cells[0]),
                    depth=_parse_opt(cells[1], lineno, "depth"),
                    conf=_parse_opt(cells[2], lineno, "conf"),
                    lidar=_parse_opt(cells[3], lineno, "lidar"),
                    speed=float(cells[4]),
                    throttle=float(cells[5]),
                    steering=float(cells[6]),
                )
            except DatasetError as exc:
                raise DatasetError(f"row {lineno}: {exc}") from None
            except ValueError as exc:
                raise DatasetError(f"row {lineno}: {exc}") from None
            frames.append(frame)
            cell = cells[7].strip()
            if cell == "":
                labels.append(False)
            else:
                any_label = True
                labels.append(bool(int(cell)))
    return SensorSequence(
        id=seq_id, frames=tuple(frames),
        labels=tuple(labels) if any_label else None,
        attack_kind=attack_kind, meta=meta,
    )


def _parse_meta_comment(
    line: str, seq_id: str, meta: SequenceMeta, attack_kind: str | None
) -> tuple[str, SequenceMeta, str | None]:
    body = line.lstrip("#").strip()
    fields = dict(part.split("=", 1) for part in body.split() if "=" in part)
    if "id" in fields:
        seq_id = fields["id"]
    if "speed_cmd" in fields or "steering_cmd" in fields:
        meta = SequenceMeta(
            speed_cmd=float(fields.get("speed_cmd", meta.speed_cmd)),
            steering_cmd=float(fields.get("steering_cmd", meta.steering_cmd)),
        )
    if "attack_kind" in fields:
        attack_kind = fields["attack_kind"]
    return seq_id, meta, attack_kind


def _save_jsonl(seq: SensorSequence, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "kind": "header", "id": seq.id,
            "speed_cmd": seq.meta.speed_cmd, "steering_cmd": seq.meta.steering_cmd,
        }
        if seq.attack_kind is not None:
            header["attack_kind"] = seq.attack_kind
        fh.write(json.dumps(header) + "\n")
        for i, f in enumerate(seq.frames):
            rec: dict[str, object] = {"t": f.t}
            for key in ("depth", "conf", "lidar"):
                v = getattr(f, key)
                if v is not None:
                    rec[key] = v
            rec["speed"] = f.speed
            rec["throttle"] = f.throttle
            rec["steering"] = f.steering
            if seq.labels is not None:
                rec["label"] = int(seq.labels[i])
            fh.write(json.dumps(rec) + "\n")


def _load_jsonl(path: Path) -> SensorSequence:
    seq_id = path.stem
    meta = SequenceMeta()
    attack_kind = None
    frames: list[SensorFrame] = []
    labels: list[bool] = []
    any_label = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"row {lineno}: invalid JSON ({exc.msg})") from None
            if rec.get("kind") == "header":
                seq_id = rec.get("id", seq_id)
                meta = SequenceMeta(
                    speed_cmd=float(rec.get("speed_cmd", 0.0)),
                    steering_cmd=float(rec.get("steering_cmd", 0.0)),
                )
                attack_kind = rec.get("attack_kind")
                continue
            try:
                frame = SensorFrame(
                    t=float(rec["t"]),
                    depth=_opt_float(rec.get("depth")),
                    conf=_opt_float(rec.get("conf")),
                    lidar=_opt_float(rec.get("lidar")),
                    speed=float(rec.get("speed", 0.0)),
                    throttle=float(rec.get("throttle", 0.0)),
                    steering=float(rec.get("steering", 0.0)),
                )
            except (DatasetError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"row {lineno}: {exc}") from None
            frames.append(frame)
            if "label" in rec:
                any_label = True
                labels.append(bool(rec["label"]))
            else:
                labels.append(False)
    return SensorSequence(
        id=seq_id, frames=tuple(frames),
        labels=tuple(labels) if any_label else None,
        attack_kind=attack_kind, meta=meta,
    )


def _opt_float(value: object) -> float | None:
    return None if value is None else float(value)


def load_sequences(paths: Iterable[str | Path]) -> list[SensorSequence]:
    return [load_sequence(p) for p in sorted(Path(p) for p in paths)]


def sequence_files(directory: str | Path) -> list[Path]:
    """All dataset files (csv/jsonl) directly inside a directory, sorted by name."""
    d = Path(directory)
    out = [p for p in d.iterdir() if p.suffix.lower() in (".csv", ".jsonl")]
    return sorted(out)
