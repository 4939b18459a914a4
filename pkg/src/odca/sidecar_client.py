"""Client for external forecaster processes speaking line-delimited JSON.

The child process is spawned on first use, must greet with a protocol line,
and then answers exactly one response line per request line, in order.  A
request carries the context window plus horizon/sample/seed parameters; the
child replies with an ``(n_samples, horizon)`` sample matrix or an ``error``
field.  Requests are serialized under a lock, so one backend instance can be
shared by concurrent sequence evaluations.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import threading
from select import select

import numpy as np

from .forecast import ForecastError

PROTOCOL = "odca-forecast/1"


class SidecarBackend:
    """Forecast backend that proxies requests to a child process over stdio."""

    name = "sidecar"

    def __init__(self, cmd: str, timeout_s: float = 30.0) -> None:
        if not cmd.strip():
            raise ForecastError("sidecar command is empty")
        if timeout_s <= 0:
            raise ForecastError(f"timeout must be positive, got {timeout_s}")
        self.cmd = cmd
        self.timeout_s = timeout_s
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()
        self._next_id = 0

    # -- lifecycle ------------------------------------------------------

    def _start(self) -> None:
        try:
            self._proc = subprocess.Popen(
                shlex.split(self.cmd),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ForecastError(f"cannot launch sidecar {self.cmd!r}: {exc}") from exc
        greeting = self._read_line()
        if "error" in greeting:
            self.close()
            raise ForecastError(f"sidecar failed to start: {greeting['error']}")
        if greeting.get("protocol") != PROTOCOL:
            self.close()
            raise ForecastError(
                f"sidecar handshake failed: expected protocol {PROTOCOL!r}, "
                f"got {greeting!r}"
            )

    def close(self) -> None:
        """Terminate the child process; the next forecast restarts it."""
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            if proc.stdin is not None:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self) -> "SidecarBackend":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass

    # -- wire handling ----------------------------------------------------

    def _read_line(self) -> dict:
        proc = self._proc
        assert proc is not None and proc.stdout is not None
        ready, _, _ = select([proc.stdout], [], [], self.timeout_s)
        if not ready:
            self.close()
            raise ForecastError(
                f"sidecar did not answer within {self.timeout_s:g} s")
        line = proc.stdout.readline()
        if line == "":
            code = proc.poll()
            self.close()
            raise ForecastError(f"sidecar exited (code {code}) mid-conversation")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            self.close()
            raise ForecastError(
                f"sidecar sent invalid JSON: {line[:120]!r}") from exc
        if not isinstance(obj, dict):
            self.close()
            raise ForecastError(f"sidecar sent a non-object line: {line[:120]!r}")
        return obj

    # -- backend interface --------------------------------------------------

    def forecast(self, context: np.ndarray, horizon: int,
                 n_samples: int, seed: int) -> np.ndarray:
        context = np.asarray(context, dtype=float)
        with self._lock:
            if self._proc is None or self._proc.poll() is not None:
                self.close()
                self._start()
            req_id = self._next_id
            self._next_id += 1
            request = {
                "id": req_id,
                "context": [float(x) for x in context],
                "horizon": int(horizon),
                "n_samples": int(n_samples),
                "seed": int(seed),
            }
            proc = self._proc
            try:
                proc.stdin.write(json.dumps(request) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                code = proc.poll()
                self.close()
                raise ForecastError(
                    f"sidecar pipe closed (exit code {code})") from exc
            reply = self._read_line()

        if reply.get("id") != req_id:
            self.close()
            raise ForecastError(
                f"sidecar answered id {reply.get('id')!r} to request {req_id}")
        if "error" in reply:
            raise ForecastError(f"sidecar error: {reply['error']}")
        try:
            samples = np.asarray(reply.get("samples"), dtype=float)
        except (TypeError, ValueError) as exc:
            raise ForecastError("sidecar returned malformed samples") from exc
        if samples.shape != (n_samples, horizon):
            raise ForecastError(
                f"sidecar returned shape {samples.shape}, "
                f"expected {(n_samples, horizon)}"
            )
        return samples
