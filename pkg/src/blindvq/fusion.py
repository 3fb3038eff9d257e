"""Fusing the sharpness and motion feature streams into clip scores.

Sharpness features arrive at full frame rate, motion features at half;
fusion keeps every other sharpness row (even indices) and concatenates
along the channel axis.  A single fully connected unit scores each fused
row and the clip score is the temporal mean, so it is invariant to frame
order and differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tk
from .networks import FeatureSequence
from .tensor import ShapeError, Tensor

__all__ = ["FusedSequence", "QualityHead", "build_head", "fuse", "predict_quality", "predict_batch"]


class FusedSequence(FeatureSequence):
    """Fused per-frame features: width = sharpness width + motion width,
    temporal length = motion temporal length."""


@dataclass
class QualityHead:
    """Single-output linear scorer over fused feature rows."""

    w: Tensor
    b: Tensor

    def __post_init__(self):
        if self.w.ndim != 2 or self.w.shape[1] != 1:
            raise ShapeError(f"quality head weight must be (D, 1), got {self.w.shape}")
        if self.b.shape != (1,):
            raise ShapeError(f"quality head bias must be (1,), got {self.b.shape}")

    @property
    def width(self) -> int:
        return self.w.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]


def build_head(width: int, seed: int) -> QualityHead:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    w = Tensor(tk.he_uniform(rng, (width, 1), width), requires_grad=True, name="head.w")
    b = Tensor(np.zeros(1), requires_grad=True, name="head.b")
    return QualityHead(w, b)


def fuse(sharp: FeatureSequence, motion: FeatureSequence) -> FusedSequence:
    """Subsample sharpness rows 1-of-2 (even indices) and concatenate with
    the motion rows channel-wise."""
    if sharp.length != 2 * motion.length:
        raise ShapeError(
            f"temporal mismatch: sharpness length {sharp.length} is not twice "
            f"motion length {motion.length}"
        )
    sharp_half = tk.temporal_subsample(sharp.features, 2, axis=0)
    return FusedSequence(tk.concat([sharp_half, motion.features], axis=1))


def predict_quality(fused: FusedSequence, head: QualityHead) -> Tensor:
    """Clip score: temporal mean of per-row linear scores (scalar tensor)."""
    if fused.width != head.width:
        raise ShapeError(
            f"feature width {fused.width} does not match head width {head.width}"
        )
    per_frame = tk.linear(fused.features, head.w, head.b)  # (T_f, 1)
    return tk.tmean(per_frame)


def predict_batch(fused_list: list[FusedSequence], head: QualityHead) -> Tensor:
    """Scores for a batch of clips, order preserving: shape (N,)."""
    if len(fused_list) == 0:
        raise ShapeError("predict_batch needs at least one clip")
    scores = [tk.reshape(predict_quality(f, head), (1,)) for f in fused_list]
    return tk.concat(scores, axis=0)
