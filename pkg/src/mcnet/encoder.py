"""MCAE encoder blocks.

A block sees a level of the point pyramid (positions ``P``, colors ``F``,
features ``Fea`` and a K-neighborhood per point) and produces:

* per-neighbor relative position codes ``[P_k, P_i - P_k, |P_i - P_k|]``
  (7 wide) and relative color codes ``[F_k, F_i - F_k]`` (6 wide), each
  lifted by its own CBL;
* a fused per-neighbor feature (gathered ``CBL(Fea)`` plus both codes)
  refined by residual CBL blocks;
* attention pooling over the neighborhood: per-channel softmax over the K
  neighbors of a linear score, then a weighted sum;
* the pooled feature concatenated with the raw ``P_i`` and ``F_i`` and sent
  through a final CBL (this is the skip output);
* the next, decimated level whose features are max-pooled over each kept
  point's fine-level neighborhood and whose raw ``P``/``F`` are selected by id.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .nn import CBLParams, ResidualParams, cbl, init_weight, linear, residual_block
from .sampler import decimate
from .spatial import NeighborIndex, knn_self, subsample_index

POS_CODE_WIDTH = 7
COLOR_CODE_WIDTH = 6


@dataclass
class LevelState:
    point_ids: np.ndarray
    positions: np.ndarray
    colors: np.ndarray
    features: T.Tensor
    neighbors: NeighborIndex


@dataclass
class PyramidLevel:
    """Geometry of one scale, computed once per patch before the forward pass."""

    point_ids: np.ndarray  # ids into the level-0 point set
    positions: np.ndarray
    colors: np.ndarray
    neighbors: NeighborIndex
    sampled: np.ndarray | None = None  # local ids kept for the next level
    up_map: np.ndarray | None = None  # local id -> next-level slot of nearest kept point


def build_pyramid(positions, colors, num_levels, k, ratio, rng, knn_method="auto"):
    positions = np.asarray(positions, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    ids = np.arange(positions.shape[0])
    levels = []
    for level in range(num_levels):
        pos = positions[ids]
        col = colors[ids]
        kk = min(k, len(ids))
        nbrs = knn_self(pos, kk, method=knn_method)
        lvl = PyramidLevel(ids, pos, col, nbrs)
        if level + 1 < num_levels:
            local = decimate(np.arange(len(ids)), ratio, rng)
            lvl.sampled = local
            lvl.up_map = subsample_index(pos, local, method=knn_method)
            ids = ids[local]
        levels.append(lvl)
    return levels


def relative_position_codes(positions, neighbors):
    """Raw ``[P_k (3), P_i - P_k (3), |P_i - P_k| (1)]`` per (point, neighbor)."""
    positions = np.asarray(positions, dtype=np.float64)
    if neighbors.indices.shape[0] != positions.shape[0]:
        raise ContractError(
            f"neighbor index has {neighbors.indices.shape[0]} rows for {positions.shape[0]} points"
        )
    if neighbors.indices.size and neighbors.indices.max() >= positions.shape[0]:
        raise ContractError("neighbor index refers past the end of the position array")
    nb = positions[neighbors.indices]
    diff = positions[:, None, :] - nb
    dist = np.sqrt((diff * diff).sum(axis=-1, keepdims=True))
    return np.concatenate([nb, diff, dist], axis=-1)


def relative_color_codes(colors, neighbors):
    """Raw ``[F_k (3), F_i - F_k (3)]`` per (point, neighbor)."""
    colors = np.asarray(colors, dtype=np.float64)
    if neighbors.indices.shape[0] != colors.shape[0]:
        raise ContractError(
            f"neighbor index has {neighbors.indices.shape[0]} rows for {colors.shape[0]} points"
        )
    if neighbors.indices.size and neighbors.indices.max() >= colors.shape[0]:
        raise ContractError("neighbor index refers past the end of the color array")
    nb = colors[neighbors.indices]
    return np.concatenate([nb, colors[:, None, :] - nb], axis=-1)


def encode_relative_position(positions, neighbors, pos_fc, training):
    return cbl(T.Tensor(relative_position_codes(positions, neighbors)), pos_fc, training)


def encode_relative_color(colors, neighbors, col_fc, training):
    return cbl(T.Tensor(relative_color_codes(colors, neighbors)), col_fc, training)


def attention_pool(fea_k, attn_weight, attn_bias):
    """Softmax over the neighbor axis of a linear score, then a weighted sum."""
    if fea_k.data.ndim != 3:
        raise DimensionError(f"attention_pool expects [N,K,C], got {list(fea_k.shape)}")
    scores = T.softmax(linear(fea_k, attn_weight, attn_bias), axis=1)
    return T.weighted_sum_over_neighbors(fea_k, scores)


@dataclass
class MCAEParams:
    pre_cbl: CBLParams
    pos_fc: CBLParams
    col_fc: CBLParams
    fuse_cbl: CBLParams
    residual: list
    attn_weight: T.Tensor
    attn_bias: T.Tensor
    post_cbl: CBLParams

    @classmethod
    def create(cls, rng, c_in, c_out, blocks=1, slope=0.2, name="mcae"):
        if c_out % 2:
            raise DimensionError(f"MCAE output width must be even, got {c_out}")
        half = c_out // 2
        return cls(
            pre_cbl=CBLParams.create(rng, c_in, half, slope, f"{name}.pre_cbl"),
            pos_fc=CBLParams.create(rng, POS_CODE_WIDTH, half, slope, f"{name}.pos_fc"),
            col_fc=CBLParams.create(rng, COLOR_CODE_WIDTH, half, slope, f"{name}.col_fc"),
            fuse_cbl=CBLParams.create(rng, 3 * half, c_out, slope, f"{name}.fuse_cbl"),
            residual=[
                ResidualParams.create(rng, c_out, slope, f"{name}.residual{b}")
                for b in range(blocks)
            ],
            attn_weight=T.Tensor(init_weight(rng, c_out, c_out, slope), True,
                                 f"{name}.attn_weight"),
            attn_bias=T.Tensor(np.zeros(c_out), True, f"{name}.attn_bias"),
            post_cbl=CBLParams.create(rng, c_out + 6, c_out, slope, f"{name}.post_cbl"),
        )

    @property
    def c_in(self):
        return self.pre_cbl.c_in

    @property
    def c_out(self):
        return self.post_cbl.c_out

    def cbls(self):
        out = {"pre_cbl": self.pre_cbl, "pos_fc": self.pos_fc, "col_fc": self.col_fc,
               "fuse_cbl": self.fuse_cbl, "post_cbl": self.post_cbl}
        for b, r in enumerate(self.residual):
            out[f"residual{b}.first"] = r.first
            out[f"residual{b}.second"] = r.second
        return out

    def parameters(self):
        ps = []
        for p in self.cbls().values():
            ps += p.parameters()
        return ps + [self.attn_weight, self.attn_bias]


@dataclass
class PointwiseMaxParams:
    """Ablation stand-in for MCAE: one shared CBL per neighbor, then max-pool."""

    shared: CBLParams

    @classmethod
    def create(cls, rng, c_in, c_out, slope=0.2, name="lfa"):
        return cls(CBLParams.create(rng, c_in + POS_CODE_WIDTH, c_out, slope, f"{name}.shared"))

    @property
    def c_in(self):
        return self.shared.c_in - POS_CODE_WIDTH

    @property
    def c_out(self):
        return self.shared.c_out

    def cbls(self):
        return {"shared": self.shared}

    def parameters(self):
        return self.shared.parameters()


def _check_width(stage, got, want):
    if got != want:
        raise DimensionError(f"{stage}: expected {want} channels, got {got}")


def mcae_features(state, params, training):
    """Steps (a)-(f): the per-point skip feature of an MCAE block."""
    _check_width("mcae input", state.features.shape[-1], params.c_in)
    nbrs = state.neighbors
    fea = cbl(state.features, params.pre_cbl, training)
    gathered = T.gather_neighbors(fea, nbrs.indices)
    geo = encode_relative_position(state.positions, nbrs, params.pos_fc, training)
    col = encode_relative_color(state.colors, nbrs, params.col_fc, training)
    fused = T.concat([gathered, geo, col], axis=-1)
    _check_width("mcae fuse", fused.shape[-1], params.fuse_cbl.c_in)
    h = cbl(fused, params.fuse_cbl, training)
    for block in params.residual:
        h = residual_block(h, block, training)
    att = attention_pool(h, params.attn_weight, params.attn_bias)
    raw = T.Tensor(np.concatenate([state.positions, state.colors], axis=1))
    return cbl(T.concat([att, raw], axis=-1), params.post_cbl, training)


def pointwise_max_features(state, params, training):
    _check_width("substitute input", state.features.shape[-1], params.c_in)
    nbrs = state.neighbors
    gathered = T.gather_neighbors(state.features, nbrs.indices)
    codes = T.Tensor(relative_position_codes(state.positions, nbrs))
    h = cbl(T.concat([gathered, codes], axis=-1), params.shared, training)
    return T.max_over_neighbors(h)


def encoder_features(state, params, training):
    if isinstance(params, PointwiseMaxParams):
        return pointwise_max_features(state, params, training)
    return mcae_features(state, params, training)


def pool_to_next(state, fea_out, sampled, next_neighbors):
    """Max-pool ``fea_out`` over each kept point's fine-level neighbors."""
    pooled = T.max_over_neighbors(T.gather_neighbors(fea_out, state.neighbors.indices[sampled]))
    return LevelState(
        point_ids=state.point_ids[sampled],
        positions=state.positions[sampled],
        colors=state.colors[sampled],
        features=pooled,
        neighbors=next_neighbors,
    )


def mcae_block(state, params, training, sampled=None, next_neighbors=None, ratio=4, rng=None):
    """Run one encoder block; returns ``(skip_features, next_level_state)``.

    ``sampled`` (local ids kept for the next level) is drawn with
    :func:`decimate` when not given; the next level's neighborhoods are
    computed over the kept points when not given.
    """
    if state.neighbors is None:
        raise ContractError("mcae_block needs a neighbor index on the level state")
    fea_out = encoder_features(state, params, training)
    if sampled is None:
        if rng is None:
            rng = np.random.default_rng(0)
        sampled = decimate(np.arange(len(state.point_ids)), ratio, rng)
    if next_neighbors is None:
        next_neighbors = knn_self(
            state.positions[sampled], min(state.neighbors.k, len(sampled)), method="auto"
        )
    return fea_out, pool_to_next(state, fea_out, sampled, next_neighbors)


def level_state(level, features):
    return LevelState(level.point_ids, level.positions, level.colors, features, level.neighbors)

