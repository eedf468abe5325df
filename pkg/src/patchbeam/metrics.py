"""Image-quality and model statistics for live plotting and CSV sinks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bpfa import GibbsState
from .patches import ShapeError


@dataclass
class FrameMetrics:
    frame_id: int
    psnr_db: float | None = None     # None when no reference is available
    mse: float | None = None
    sampling_ratio: float = 0.0
    atoms_per_patch: float = 0.0
    pi_histogram: np.ndarray = field(default_factory=lambda: np.zeros(0))
    epoch_time_ms: float = 0.0
    epochs_run: int = 0


def mse(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(diff * diff))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) in dB; +inf when the tensors are identical."""
    if peak <= 0:
        raise ValueError("peak must be > 0")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def model_stats(state: GibbsState) -> tuple[float, np.ndarray, float, float]:
    """(mean atoms per patch, pi vector copy, gamma_s, gamma_eps)."""
    atoms_per_patch = float(state.usage.sum()) / state.num_patches
    return (
        atoms_per_patch,
        state.dictionary.pi.copy(),
        state.weight_precision,
        state.noise_precision,
    )
