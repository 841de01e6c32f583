"""Class activation maps from last-layer features and classifier weights."""
from __future__ import annotations

import numpy as np

from .grid import BinaryMask, FeatureMap, ScoreMap


def _check_weights(f: FeatureMap, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size != f.channels:
        raise ValueError(f"classifier has {w.size} weights but features have {f.channels} channels")
    if not np.all(np.isfinite(w)):
        raise ValueError("classifier weights must be finite")
    return w


def raw_cam(f: FeatureMap, w) -> np.ndarray:
    """ReLU of the per-pixel dot product between features and classifier weights."""
    w = _check_weights(f, w)
    return np.maximum(f.values @ w, 0.0)


def normalize_cam(raw) -> ScoreMap:
    """Divide by the global maximum.

    An all-zero activation map (nothing supports the change class) maps to an
    all-zero score map instead of dividing by zero.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError(f"expected an (H, W) activation map, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("activations must be finite")
    if raw.min(initial=0.0) < 0.0:
        raise ValueError("activations must be nonnegative")
    peak = raw.max(initial=0.0)
    if peak == 0.0:
        return ScoreMap(np.zeros_like(raw))
    return ScoreMap(raw / peak)


def compute_cam(f: FeatureMap, w) -> ScoreMap:
    return normalize_cam(raw_cam(f, w))


def predict_change(c: ScoreMap, cam_score: float = 0.45) -> BinaryMask:
    if not 0.0 <= cam_score <= 1.0:
        raise ValueError(f"cam_score must be in [0, 1], got {cam_score}")
    return BinaryMask(c.values >= cam_score)
