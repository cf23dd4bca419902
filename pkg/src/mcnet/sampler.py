"""Semantic-weighted patch sampling and per-level decimation.

Each point's draw weight is its class weight (inverse square root of the
class frequency) times a Gaussian kernel on its distance to the patch
center. Points are drawn without replacement using exponential keys
(``log(u) / w``, keep the largest), which makes a draw depend on the
weights only through their ratios.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

FREQ_EPS = 1e-4


@dataclass(frozen=True)
class ClassWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ContractError("class weights must be a vector of positive finite reals")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, num_classes):
        return cls(np.ones(num_classes))

    def __len__(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class PatchDraw:
    center_id: int
    point_ids: np.ndarray
    probabilities_used: np.ndarray


def class_weights_from_frequencies(freq, eps=FREQ_EPS):
    """``w_c ∝ 1 / sqrt(max(freq_c, eps))``, normalized to mean 1."""
    freq = np.asarray(freq, dtype=np.float64)
    if freq.ndim != 1 or freq.size == 0 or np.any(freq < 0):
        raise ContractError("frequencies must be a non-empty vector of non-negative values")
    if not freq.sum() > 0:
        raise ContractError("frequencies are all zero")
    if abs(freq.sum() - 1.0) > 1e-6:
        raise ContractError(f"frequencies must sum to 1, got {freq.sum()}")
    raw = 1.0 / np.sqrt(np.maximum(freq, eps))
    return ClassWeights(raw / raw.mean())


def default_sigma(cloud, patch_size):
    """Rough patch radius: ``(P / N) ** (1/3)`` of the bounding-box diagonal."""
    pos = cloud.positions
    diag = float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0)))
    sigma = (patch_size / len(cloud)) ** (1.0 / 3.0) * diag
    return sigma if sigma > 0 else 1.0


def point_probabilities(cloud, weights, center_id, sigma):
    """Unnormalized per-point draw weights around ``center_id``."""
    if not sigma > 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    if cloud.labels is None:
        class_w = np.ones(len(cloud))
    else:
        if len(weights) < cloud.num_classes:
            raise ContractError(
                f"{len(weights)} class weights for {cloud.num_classes} classes"
            )
        class_w = weights.weights[cloud.labels]
    d = np.linalg.norm(cloud.positions - cloud.positions[center_id], axis=1)
    # Floor keeps far-away points drawable (last) when the kernel underflows.
    return np.maximum(class_w * np.exp(-((d / sigma) ** 2)), np.finfo(np.float64).tiny)


def weighted_draw_without_replacement(p, size, rng):
    """Exponential-key weighted sampling; returns ids in draw order."""
    n = p.shape[0]
    u = rng.random(n)
    with np.errstate(divide="ignore", over="ignore"):
        keys = np.log(u) / p
    order = np.argsort(-keys, kind="stable")
    return order[:size]


def draw_patch(cloud, weights, patch_size, sigma, rng):
    """Draw ``patch_size`` distinct point ids around a uniformly chosen center."""
    n = len(cloud)
    if patch_size > n or patch_size < 1:
        raise ContractError(f"patch size {patch_size} must lie in [1, {n}]")
    center = int(rng.integers(n))
    p = point_probabilities(cloud, weights, center, sigma)
    ids = weighted_draw_without_replacement(p, patch_size, rng)
    return PatchDraw(center, ids, p[ids])


def decimate(point_ids, ratio, rng):
    """Uniform random subset of size ``ceil(N / ratio)``, kept in input order."""
    point_ids = np.asarray(point_ids)
    if ratio < 1:
        raise ContractError(f"decimation ratio must be >= 1, got {ratio}")
    n = point_ids.shape[0]
    keep = math.ceil(n / ratio)
    chosen = np.sort(rng.choice(n, size=keep, replace=False))
    return point_ids[chosen]
