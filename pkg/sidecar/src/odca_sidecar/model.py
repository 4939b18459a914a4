"""Forecast models the sidecar can serve.

The ``statistical`` model is the default and the only one bundled: a drift
plus causal-block-bootstrap sampler over context first differences.  It is
written to be numerically identical to the host pipeline's builtin
forecaster — same operations, same ``numpy.random.default_rng`` stream per
seed — so a run that swaps the in-process backend for this sidecar
reproduces the host's numbers bit for bit.

Wrappers for heavyweight pretrained forecasters can be added to
``MODEL_FACTORIES``; anything unknown fails fast at load time so the host
sees the failure in the handshake instead of mid-run.
"""

from __future__ import annotations

import numpy as np

BLOCK_LEN = 4
POSITIVITY_FLOOR = 1e-3


class ModelLoadError(RuntimeError):
    """Raised when the requested model cannot be constructed."""


class StatisticalModel:
    """Drift + causal block bootstrap over context first differences."""

    name = "statistical"

    def __init__(self, block_len: int = BLOCK_LEN,
                 positivity_floor: float = POSITIVITY_FLOOR) -> None:
        if block_len < 1:
            raise ModelLoadError(f"block_len must be >= 1, got {block_len}")
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


MODEL_FACTORIES = {
    "statistical": StatisticalModel,
}


def load_model(spec: str, device: str = "cpu"):
    """Construct the model named by ``spec``; unknown names fail at load time."""
    del device  # hint only; the bundled model is device-free
    try:
        factory = MODEL_FACTORIES[spec]
    except KeyError:
        known = ", ".join(sorted(MODEL_FACTORIES))
        raise ModelLoadError(
            f"unknown model {spec!r}; available: {known}") from None
    return factory()
