"""Probabilistic short-horizon forecasting of the depth channel.

A forecaster turns a recent context window into ``n_samples`` Monte-Carlo
future paths of length ``horizon``.  The built-in backend is a causal block
bootstrap: it estimates a per-step drift from the context's first differences
and stacks resampled residual blocks on top, so forecasts stay cheap, fully
seeded, and free of any look-ahead.

All backends are wrapped by :func:`run_forecast`, which validates shapes and
finiteness and reduces the sample paths to per-step mean and spread.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_HORIZON = 16
DEFAULT_SAMPLES = 20
DEFAULT_BLOCK_LEN = 4
POSITIVITY_FLOOR = 1e-3


class ForecastError(RuntimeError):
    """Raised when a forecast backend fails or returns malformed output."""


@dataclass(frozen=True)
class ForecastResult:
    """Sample paths plus their per-step summary statistics."""

    samples: np.ndarray  # (n_samples, horizon)
    mu: np.ndarray  # (horizon,)
    sigma: np.ndarray  # (horizon,)


def summarize(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-step mean and population standard deviation across sample paths."""
    samples = np.asarray(samples, dtype=float)
    return samples.mean(axis=0), samples.std(axis=0)


class BootstrapForecaster:
    """Drift + causal block bootstrap over context first differences."""

    name = "builtin"

    def __init__(self, block_len: int = DEFAULT_BLOCK_LEN,
                 positivity_floor: float = POSITIVITY_FLOOR) -> None:
        if block_len < 1:
            raise ValueError(f"block_len must be >= 1, got {block_len}")
        self.block_len = block_len
        self.positivity_floor = positivity_floor

    def forecast(self, context: np.ndarray, horizon: int,
                 n_samples: int, seed: int) -> np.ndarray:
        context = np.asarray(context, dtype=float)
        diffs = np.diff(context)
        drift = diffs.mean()
        residuals = diffs - drift
        rng = np.random.default_rng(seed)

        block = min(self.block_len, residuals.size)
        n_starts = residuals.size - block + 1
        n_blocks = -(-horizon // block)
        starts = rng.integers(0, n_starts, size=(n_samples, n_blocks))
        idx = starts[..., None] + np.arange(block)
        draws = residuals[idx].reshape(n_samples, -1)[:, :horizon]

        steps = drift + draws
        paths = context[-1] + np.cumsum(steps, axis=1)
        return np.maximum(paths, self.positivity_floor)


def run_forecast(backend, context: np.ndarray, horizon: int = DEFAULT_HORIZON,
                 n_samples: int = DEFAULT_SAMPLES, seed: int = 0) -> ForecastResult:
    """Call a backend and validate its output into a :class:`ForecastResult`."""
    context = np.asarray(context, dtype=float)
    if context.ndim != 1 or context.size < 2:
        raise ForecastError(f"context must be 1-D with >= 2 points, got shape {context.shape}")
    if not np.isfinite(context).all():
        raise ForecastError("context contains non-finite values")
    if horizon < 1:
        raise ForecastError(f"horizon must be >= 1, got {horizon}")
    if n_samples < 1:
        raise ForecastError(f"n_samples must be >= 1, got {n_samples}")

    name = getattr(backend, "name", type(backend).__name__)
    try:
        samples = backend.forecast(context, horizon, n_samples, seed)
    except ForecastError:
        raise
    except Exception as exc:  # noqa: BLE001 - surface backend identity
        raise ForecastError(f"backend {name!r} failed: {exc}") from exc

    samples = np.asarray(samples, dtype=float)
    if samples.shape != (n_samples, horizon):
        raise ForecastError(
            f"backend {name!r} returned shape {samples.shape}, "
            f"expected {(n_samples, horizon)}"
        )
    if not np.isfinite(samples).all():
        raise ForecastError(f"backend {name!r} returned non-finite samples")
    mu, sigma = summarize(samples)
    return ForecastResult(samples=samples, mu=mu, sigma=sigma)


def make_backend(spec: str):
    """Build a forecast backend from a spec string.

    ``"builtin"`` selects the block-bootstrap backend; ``"sidecar:<cmd>"``
    launches an external child process speaking the line-JSON protocol.
    """
    if spec == "builtin":
        return BootstrapForecaster()
    if spec.startswith("sidecar:"):
        cmd = spec[len("sidecar:"):].strip()
        if not cmd:
            raise ForecastError("sidecar spec is missing a command")
        from odca.sidecar_client import SidecarBackend

        return SidecarBackend(cmd)
    raise ForecastError(f"unknown forecaster spec {spec!r}")
