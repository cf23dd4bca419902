"""P-CSP decoder: upsampling, skip fusion and cross-stage-partial blocks."""

from dataclasses import dataclass

from . import tensor as T
from .errors import ContractError, DimensionError
from .nn import CBLParams, ResidualParams, cbl, residual_block


@dataclass
class PCSPParams:
    up_fc: CBLParams | None
    branch_a_cbl: CBLParams
    branch_b_cbl: CBLParams
    branch_b_residual: ResidualParams
    merge_cbl: CBLParams

    @classmethod
    def create(cls, rng, c_in, c_out, c_up=None, slope=0.2, name="pcsp"):
        if c_in % 2:
            raise DimensionError(f"P-CSP input width must be even to halve, got {c_in}")
        half = c_in // 2
        return cls(
            up_fc=None if c_up is None else CBLParams.create(rng, c_up, c_up, slope, f"{name}.up_fc"),
            branch_a_cbl=CBLParams.create(rng, c_in, half, slope, f"{name}.branch_a_cbl"),
            branch_b_cbl=CBLParams.create(rng, c_in, half, slope, f"{name}.branch_b_cbl"),
            branch_b_residual=ResidualParams.create(rng, half, slope, f"{name}.branch_b_residual"),
            merge_cbl=CBLParams.create(rng, c_in, c_out, slope, f"{name}.merge_cbl"),
        )

    @property
    def c_in(self):
        return self.branch_a_cbl.c_in

    @property
    def c_out(self):
        return self.merge_cbl.c_out

    def cbls(self):
        out = {
            "branch_a_cbl": self.branch_a_cbl,
            "branch_b_cbl": self.branch_b_cbl,
            "branch_b_residual.first": self.branch_b_residual.first,
            "branch_b_residual.second": self.branch_b_residual.second,
            "merge_cbl": self.merge_cbl,
        }
        if self.up_fc is not None:
            out["up_fc"] = self.up_fc
        return out

    def parameters(self):
        return [p for c in self.cbls().values() for p in c.parameters()]


@dataclass
class MLPDecoderParams:
    """Ablation stand-in for P-CSP: a single pointwise CBL."""

    up_fc: CBLParams | None
    mlp: CBLParams

    @classmethod
    def create(cls, rng, c_in, c_out, c_up=None, slope=0.2, name="mlp"):
        return cls(
            up_fc=None if c_up is None else CBLParams.create(rng, c_up, c_up, slope, f"{name}.up_fc"),
            mlp=CBLParams.create(rng, c_in, c_out, slope, f"{name}.mlp"),
        )

    @property
    def c_in(self):
        return self.mlp.c_in

    @property
    def c_out(self):
        return self.mlp.c_out

    def cbls(self):
        out = {"mlp": self.mlp}
        if self.up_fc is not None:
            out["up_fc"] = self.up_fc
        return out

    def parameters(self):
        return [p for c in self.cbls().values() for p in c.parameters()]


def upsample(coarse_features, fine_to_coarse, up_fc, training):
    """Copy each fine point's nearest coarse feature row, then a pointwise CBL."""
    copied = T.take_rows(coarse_features, fine_to_coarse)
    return cbl(copied, up_fc, training)


def pcsp_block(x, neighbors, params, training):
    """Two half-width branches, merged, max-pooled over neighbors, then a CBL."""
    if x.shape[-1] != params.c_in:
        raise DimensionError(f"pcsp_block: input has {x.shape[-1]} channels, expected {params.c_in}")
    a = cbl(x, params.branch_a_cbl, training)
    b = residual_block(cbl(x, params.branch_b_cbl, training), params.branch_b_residual, training)
    y = T.concat([a, b], axis=-1)
    assert y.shape[-1] == x.shape[-1]
    local = T.max_over_neighbors(T.gather_neighbors(y, neighbors.indices))
    return cbl(local, params.merge_cbl, training)


def decoder_block(x, neighbors, params, training):
    if isinstance(params, MLPDecoderParams):
        if x.shape[-1] != params.c_in:
            raise DimensionError(f"mlp decoder: input has {x.shape[-1]} channels, expected {params.c_in}")
        return cbl(x, params.mlp, training)
    return pcsp_block(x, neighbors, params, training)


def decode(levels, skips, params, training, head=None):
    """Fuse encoder skips from the coarsest level to the finest.

    ``levels`` are the pyramid levels (each with ``neighbors`` and, except the
    last, ``up_map``); ``skips[l]`` is the encoder output at level ``l``;
    ``params[l]`` the decoder block of that level. ``head``, if given, is a
    final CBL producing the per-point features fed to the prediction heads.
    """
    if not (len(levels) == len(skips) == len(params)):
        raise ContractError(
            f"decode needs one skip and one block per level: {len(levels)} levels, "
            f"{len(skips)} skips, {len(params)} blocks"
        )
    top = len(levels) - 1
    x = decoder_block(skips[top], levels[top].neighbors, params[top], training)
    for l in range(top - 1, -1, -1):
        up = upsample(x, levels[l].up_map, params[l].up_fc, training)
        x = decoder_block(T.concat([up, skips[l]], axis=-1), levels[l].neighbors, params[l], training)
    if head is not None:
        x = cbl(x, head, training)
    return x
