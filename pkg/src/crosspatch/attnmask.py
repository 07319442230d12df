"""Foreground masks from CLS->patch attention rows.

Raw attention values vary wildly across backbones, so each row is min-max
normalized before thresholding; patches at or above the threshold keep
weight 1.0 and the rest are down-weighted to 0.5 (not zeroed, so defects
in low-attention regions stay detectable).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scoring import PatchScoreMap

FOREGROUND_WEIGHT = 1.0
BACKGROUND_WEIGHT = 0.5
DEFAULT_THRESHOLD = 0.05


@dataclass
class AttentionMask:
    weights: np.ndarray  # (L,) with values in {0.5, 1.0}


def attention_to_mask(attn_row: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> AttentionMask:
    """Binarize a raw attention row into {0.5, 1.0} patch weights."""
    a = np.asarray(attn_row, dtype=np.float64)
    if a.ndim != 1 or a.size < 2:
        raise ValueError("attention row must be a vector of length >= 2")
    if not np.all(np.isfinite(a)):
        raise ValueError("attention row contains non-finite values")
    lo, hi = a.min(), a.max()
    if hi == lo:
        weights = np.full(a.shape, FOREGROUND_WEIGHT)
    else:
        norm = (a - lo) / (hi - lo)
        weights = np.where(norm >= threshold, FOREGROUND_WEIGHT, BACKGROUND_WEIGHT)
    return AttentionMask(weights=weights)


def apply_mask(score_map: PatchScoreMap, mask: AttentionMask) -> PatchScoreMap:
    """Multiply patch scores by the mask weights."""
    m = np.asarray(score_map.scores, dtype=np.float64)
    if mask.weights.shape != m.shape:
        raise ValueError(f"mask length {mask.weights.shape} != scores {m.shape}")
    return PatchScoreMap(
        scores=m * mask.weights, grid=score_map.grid, query_name=score_map.query_name
    )


def head_average(cls_rows: np.ndarray) -> np.ndarray:
    """Average per-head CLS->patch attention rows (H x L) into one row."""
    rows = np.asarray(cls_rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("expected a non-empty H x L array")
    return rows.mean(axis=0)
