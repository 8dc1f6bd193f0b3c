"""Dynamic time warping with per-step normalization."""

from __future__ import annotations

import numpy as np

from .._kernels import dtw_accumulate


class EmptySequence(ValueError):
    pass


def _as_2d(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def pairwise_cost(a, b, cost: str = "euclidean") -> np.ndarray:
    a, b = _as_2d(a), _as_2d(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("sequences have different element widths")
    diff = a[:, None, :] - b[None, :, :]
    if cost == "euclidean":
        return np.sqrt((diff * diff).sum(-1))
    if cost == "abs":
        return np.abs(diff).sum(-1)
    if cost == "hamming":
        return (diff != 0).sum(-1).astype(np.float64)
    raise ValueError(f"unknown cost {cost!r}")


def dtw(a, b, cost: str = "euclidean") -> tuple[float, float]:
    """Return ``(total_cost, total_cost / alignment_length)``.

    Steps are (i-1, j), (i, j-1) and (i-1, j-1). When several alignments reach
    the optimal total, the longest is used for normalization.
    """
    if len(a) == 0 or len(b) == 0:
        raise EmptySequence("dtw needs two non-empty sequences")
    total, length = dtw_accumulate(pairwise_cost(a, b, cost))
    return float(total), float(total) / float(length)
