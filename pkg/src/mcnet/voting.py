"""Neighborhood voting over two prediction heads.

Per point, the head whose softmax is more peaked (higher max probability;
the point head wins ties) proposes a candidate label. Neighbors proposing
the same label then pool their point-head probability vectors, and the
argmax of that sum is the final label. A point with no agreeing neighbor
other than itself keeps its candidate.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, NumericError
from .nn import linear

MATCH_MODES = ("candidate", "nei")


@dataclass
class VoteInputs:
    logits_point: np.ndarray
    logits_nei: np.ndarray
    neighbors: object  # NeighborIndex

    def __post_init__(self):
        self.logits_point = np.asarray(self.logits_point, dtype=np.float64)
        self.logits_nei = np.asarray(self.logits_nei, dtype=np.float64)
        if self.logits_point.shape != self.logits_nei.shape or self.logits_point.ndim != 2:
            raise DimensionError(
                f"head logits {list(self.logits_point.shape)} and {list(self.logits_nei.shape)} "
                "must both be [N, C]"
            )
        if not (np.all(np.isfinite(self.logits_point)) and np.all(np.isfinite(self.logits_nei))):
            raise NumericError("vote inputs contain non-finite logits")


@dataclass
class VoteResult:
    final_labels: np.ndarray
    candidate_labels: np.ndarray
    support_counts: np.ndarray


def _softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def head_point(features, weight, bias):
    return linear(features, weight, bias)


def head_nei(features, neighbors, weight, bias):
    """Mean-pool features over each neighborhood, then a pointwise FC."""
    pooled = T.mean_over_neighbors(T.gather_neighbors(features, neighbors.indices))
    return linear(pooled, weight, bias)


def argmax_baseline(logits_point):
    """Per-point argmax; ties go to the lowest class index."""
    return np.argmax(np.asarray(logits_point), axis=1)


def vote(inputs, match_mode="candidate"):
    """Refine per-point labels by agreement among neighbors.

    ``match_mode="candidate"`` matches neighbors on their own candidate label;
    ``"nei"`` matches on the argmax of their neighborhood head instead.
    """
    if match_mode not in MATCH_MODES:
        raise ValueError(f"unknown match mode {match_mode!r}; expected one of {MATCH_MODES}")
    p_pt = _softmax_rows(inputs.logits_point)
    p_ne = _softmax_rows(inputs.logits_nei)
    use_nei = p_ne.max(axis=1) > p_pt.max(axis=1)
    candidate = np.where(use_nei, p_ne.argmax(axis=1), p_pt.argmax(axis=1))
    label_of = candidate if match_mode == "candidate" else p_ne.argmax(axis=1)

    idx = inputs.neighbors.indices
    match = label_of[idx] == candidate[:, None]
    # The point itself always supports its own candidate.
    match |= idx == np.arange(idx.shape[0])[:, None]
    support = match.sum(axis=1)
    pooled = (p_pt[idx] * match[:, :, None]).sum(axis=1)
    final = np.where(support > 1, pooled.argmax(axis=1), candidate)
    return VoteResult(final, candidate, support)
