"""Changed / unchanged localization masks from CAM scores or ground truth."""
from __future__ import annotations

from dataclasses import dataclass

from .grid import BinaryMask, ScoreMap


@dataclass(frozen=True)
class ThresholdConfig:
    t_high: float = 0.60
    t_low: float = 0.40
    cam_score: float = 0.45

    def __post_init__(self):
        for name in ("t_high", "t_low", "cam_score"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.t_low > self.t_high:
            raise ValueError(f"t_low ({self.t_low}) must not exceed t_high ({self.t_high})")


def changed_localization(c: ScoreMap, cfg: ThresholdConfig) -> BinaryMask:
    """Reliably changed pixels: score >= t_high."""
    return BinaryMask(c.values >= cfg.t_high)


def unchanged_localization(c: ScoreMap, cfg: ThresholdConfig) -> BinaryMask:
    """Reliably unchanged pixels: score <= t_low.

    Pixels strictly between the two thresholds belong to neither mask.
    """
    return BinaryMask(c.values <= cfg.t_low)


def masks_from_ground_truth(y: BinaryMask) -> tuple[BinaryMask, BinaryMask]:
    """Fully-supervised variant: the pixel labels are the localization."""
    return BinaryMask(y.values), BinaryMask(~y.values)
