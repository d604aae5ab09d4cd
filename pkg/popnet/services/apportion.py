"""
Integer apportionment helpers shared by GQ splits, commute integerization
and staff counts.
"""
import math
from typing import Sequence

import numpy as np


def largest_remainder(weights: Sequence[float], total: int) -> np.ndarray:
    """
    Split ``total`` into integers proportional to ``weights``.

    Floors first, then hands the leftover units to the largest fractional
    remainders; ties go to the lower index. The result always sums to
    ``total``.

    Args:
        weights: non-negative weights (need not be normalized)
        total: non-negative integer to distribute

    Returns:
        np.ndarray of int64, same length as weights
    """
    w = np.asarray(weights, dtype=float)
    total = int(total)
    if total < 0:
        raise ValueError(f"total must be >= 0, got {total}")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    out = np.zeros(len(w), dtype=np.int64)
    if total == 0 or len(w) == 0:
        return out
    s = w.sum()
    if s <= 0:
        raise ValueError("cannot apportion a positive total over zero weights")
    quotas = w * (total / s)
    out = np.floor(quotas).astype(np.int64)
    # floor can overshoot by float error when quotas are integral
    while out.sum() > total:
        out[np.argmax(out)] -= 1
    leftover = total - int(out.sum())
    if leftover > 0:
        remainders = quotas - out
        # stable sort on -remainder keeps lower index first among ties
        order = np.argsort(-remainders, kind="stable")
        out[order[:leftover]] += 1
    return out


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from zero for x >= 0."""
    return int(math.floor(x + 0.5))
