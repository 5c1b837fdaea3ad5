"""Segment reductions over contiguous groups, shared by the solver and the net.

All helpers take an offsets array of length (num_segments + 1); segment k covers
values[offsets[k]:offsets[k+1]].  Empty segments are legal (isolated nodes).
Reductions are computed by numpy reduceat on a fixed layout, so results are
deterministic for identical inputs.
"""

from __future__ import annotations

import numpy as np


def offsets_from_sizes(sizes) -> np.ndarray:
    out = np.zeros(len(sizes) + 1, dtype=np.int64)
    np.cumsum(sizes, out=out[1:])
    return out


def segment_sum(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Per-segment sums; empty segments yield 0.

    reduceat cannot express empty segments directly: a clipped start would
    steal elements from the preceding segment.  Reducing over the non-empty
    starts alone is exact because consecutive non-empty starts span any empty
    segments in between.
    """
    nseg = len(offsets) - 1
    out = np.zeros((nseg,) + values.shape[1:], dtype=np.float64)
    if nseg == 0 or values.shape[0] == 0:
        return out
    live = offsets[:-1] < offsets[1:]
    if live.any():
        out[live] = np.add.reduceat(values, offsets[:-1][live], axis=0)
    return out


def segment_max(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Per-segment maxima; empty segments yield -inf."""
    nseg = len(offsets) - 1
    out = np.full((nseg,) + values.shape[1:], -np.inf, dtype=np.float64)
    if nseg == 0 or values.shape[0] == 0:
        return out
    live = offsets[:-1] < offsets[1:]
    if live.any():
        out[live] = np.maximum.reduceat(values, offsets[:-1][live], axis=0)
    return out


def expand(per_segment: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Broadcast one value per segment back to the element layout."""
    sizes = np.diff(offsets)
    return np.repeat(per_segment, sizes, axis=0)


def segment_softmax(scores: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax within each segment."""
    if scores.shape[0] == 0:
        return scores.copy()
    shifted = scores - expand(segment_max(scores, offsets), offsets)
    e = np.exp(shifted)
    denom = expand(segment_sum(e, offsets), offsets)
    return e / denom


def segment_softmax_backward(softmax: np.ndarray, d_out: np.ndarray,
                             offsets: np.ndarray) -> np.ndarray:
    """d scores given d softmax-outputs: s * (g - sum_seg(s * g))."""
    inner = expand(segment_sum(softmax * d_out, offsets), offsets)
    return softmax * (d_out - inner)


def segment_normalize(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Divide each segment by its sum (exact renormalization of weights)."""
    return values / expand(segment_sum(values, offsets), offsets)


def segment_normalize_backward(values: np.ndarray, d_out: np.ndarray,
                               offsets: np.ndarray) -> np.ndarray:
    total = expand(segment_sum(values, offsets), offsets)
    inner = expand(segment_sum(d_out * values, offsets), offsets)
    return d_out / total - inner / (total * total)
