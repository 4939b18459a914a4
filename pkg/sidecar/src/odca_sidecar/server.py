"""Line-oriented request loop for the odca-forecast/1 protocol.

One JSON object per line, responses strictly in request order, a single
request in flight at a time.  The first line written is the handshake; if
the model cannot be loaded the handshake carries an ``error`` field and the
process exits nonzero.  A line that is not a JSON object gets the reply
``{"id": null, "error": "parse"}`` and service continues — a bad client line
must never kill the server.
"""

from __future__ import annotations

import dataclasses
import json
import math
import select

from odca_sidecar import PROTOCOL
from odca_sidecar.model import ModelLoadError, load_model


@dataclasses.dataclass(frozen=True)
class SidecarConfig:
    """Serving limits and model selection for one sidecar process."""

    model: str = "statistical"
    device: str = "cpu"
    max_samples: int = 256
    max_horizon: int = 512
    idle_timeout_s: float | None = None

    def __post_init__(self) -> None:
        if self.max_samples < 1:
            raise ValueError(f"max_samples must be >= 1, got {self.max_samples}")
        if self.max_horizon < 1:
            raise ValueError(f"max_horizon must be >= 1, got {self.max_horizon}")
        if self.idle_timeout_s is not None and self.idle_timeout_s <= 0:
            raise ValueError(
                f"idle_timeout_s must be positive, got {self.idle_timeout_s}")


class RequestError(ValueError):
    """A syntactically valid request that cannot be served."""


def _require_int(obj: dict, key: str) -> int:
    value = obj.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise RequestError(f"field {key!r} must be an integer")
    return value


def parse_request(obj: dict, cfg: SidecarConfig) -> tuple[int, list[float], int, int, int]:
    """Validate one request object against the protocol and serving caps.

    Field errors after a valid ``id`` carry that id on the exception so the
    error reply can still be correlated by the client.
    """
    request_id = _require_int(obj, "id")
    try:
        context = obj.get("context")
        if not isinstance(context, list) or len(context) < 2:
            raise RequestError("field 'context' must be a list of >= 2 numbers")
        values = []
        for x in context:
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                raise RequestError("field 'context' must contain only numbers")
            x = float(x)
            if not math.isfinite(x):
                raise RequestError("field 'context' contains non-finite values")
            values.append(x)
        horizon = _require_int(obj, "horizon")
        if horizon < 1:
            raise RequestError(f"horizon must be >= 1, got {horizon}")
        if horizon > cfg.max_horizon:
            raise RequestError(
                f"horizon {horizon} exceeds serving cap {cfg.max_horizon}")
        n_samples = _require_int(obj, "n_samples")
        if n_samples < 1:
            raise RequestError(f"n_samples must be >= 1, got {n_samples}")
        if n_samples > cfg.max_samples:
            raise RequestError(
                f"n_samples {n_samples} exceeds serving cap {cfg.max_samples}")
        seed = _require_int(obj, "seed")
    except RequestError as exc:
        exc.request_id = request_id
        raise
    return request_id, values, horizon, n_samples, seed


def handle_line(line: str, model, cfg: SidecarConfig) -> dict | None:
    """One request line in, one response object out (None for blank lines)."""
    if not line.strip():
        return None
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return {"id": None, "error": "parse"}
    if not isinstance(obj, dict):
        return {"id": None, "error": "parse"}
    try:
        request_id, context, horizon, n_samples, seed = parse_request(obj, cfg)
    except RequestError as exc:
        return {"id": getattr(exc, "request_id", None), "error": str(exc)}
    try:
        samples = model.forecast(context, horizon, n_samples, seed)
    except Exception as exc:  # noqa: BLE001 - any model failure becomes a reply
        return {"id": request_id, "error": f"forecast failed: {exc}"}
    return {"id": request_id, "samples": samples.tolist()}


def _write(stream, obj: dict) -> None:
    stream.write(json.dumps(obj, separators=(",", ":")) + "\n")
    stream.flush()


def _read_line(stdin, idle_timeout_s: float | None) -> str | None:
    """Next line, or None on EOF / idle timeout."""
    if idle_timeout_s is not None and hasattr(stdin, "fileno"):
        ready, _, _ = select.select([stdin], [], [], idle_timeout_s)
        if not ready:
            return None
    line = stdin.readline()
    return line if line else None


def serve(stdin, stdout, cfg: SidecarConfig = SidecarConfig()) -> int:
    """Run the protocol loop until EOF (or idle timeout); returns exit code."""
    try:
        model = load_model(cfg.model, cfg.device)
    except ModelLoadError as exc:
        _write(stdout, {"protocol": PROTOCOL, "error": str(exc)})
        return 1
    _write(stdout, {"protocol": PROTOCOL})
    while True:
        line = _read_line(stdin, cfg.idle_timeout_s)
        if line is None:
            return 0
        reply = handle_line(line, model, cfg)
        if reply is not None:
            _write(stdout, reply)
