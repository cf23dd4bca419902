"""Model configuration and assembly of the full segmentation network."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import tensor as T
from .decoder import MLPDecoderParams, PCSPParams, decode
from .encoder import (
    MCAEParams,
    PointwiseMaxParams,
    build_pyramid,
    encoder_features,
    level_state,
    pool_to_next,
)
from .errors import ConfigError
from .nn import CBLParams, cbl, init_weight, linear
from .voting import MATCH_MODES, head_nei


@dataclass
class Ablation:
    sws: bool = True
    mcae: bool = True
    pcsp: bool = True
    nv: bool = True


@dataclass
class ModelConfig:
    num_levels: int = 4
    channels: list = field(default_factory=lambda: [16, 64, 128, 256])
    k_neighbors: int = 25
    decimation: int = 4
    patch_size: int = 4096
    num_classes: int = 13
    blocks_per_level: int = 1
    leaky_slope: float = 0.2
    learning_rate: float = 1e-2
    batch_size: int = 4
    epochs: int = 100
    steps_per_epoch: int = 1
    seed: int = 0
    ablation: Ablation = field(default_factory=Ablation)
    vote_match_mode: str = "candidate"
    stem_channels: int = 8
    head_channels: int = 32
    sigma: float | None = None
    eval_overlap: float = 0.25

    def __post_init__(self):
        if isinstance(self.ablation, dict):
            self.ablation = Ablation(**self.ablation)
        self.channels = [int(c) for c in self.channels]

    @classmethod
    def test_profile(cls, num_classes, **overrides):
        """Small 3-level network used for tests and desk-scale benchmarks."""
        base = dict(num_levels=3, channels=[8, 16, 32], k_neighbors=9, num_classes=num_classes)
        base.update(overrides)
        return cls(**base)

    def validate(self):
        if self.num_levels < 1:
            raise ConfigError("num_levels must be >= 1")
        if len(self.channels) != self.num_levels:
            raise ConfigError(
                f"{len(self.channels)} channel widths for {self.num_levels} levels"
            )
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise ConfigError(f"channels must be strictly increasing, got {self.channels}")
        if any(c < 2 or c % 2 for c in self.channels):
            raise ConfigError(f"channel widths must be even and >= 2, got {self.channels}")
        if self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be >= 1")
        if self.decimation < 1:
            raise ConfigError("decimation must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if min(self.patch_size, self.batch_size, self.blocks_per_level, self.stem_channels,
               self.head_channels) < 1:
            raise ConfigError("patch_size, batch_size, blocks_per_level and widths must be >= 1")
        if self.epochs < 0 or self.steps_per_epoch < 1:
            raise ConfigError("epochs must be >= 0 and steps_per_epoch >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.vote_match_mode not in MATCH_MODES:
            raise ConfigError(f"vote_match_mode must be one of {MATCH_MODES}")
        if not 0 <= self.eval_overlap < 1:
            raise ConfigError("eval_overlap must lie in [0, 1)")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **changes):
        if "ablation" in changes and isinstance(changes["ablation"], dict):
            changes["ablation"] = replace(self.ablation, **changes["ablation"])
        return replace(self, **changes)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class MCNet:
    """Encoder (MCAE or stand-in) -> decoder (P-CSP or MLP) -> two heads."""

    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
        slope = config.leaky_slope
        ch = config.channels
        top = config.num_levels - 1
        self.stem = CBLParams.create(rng, 6, config.stem_channels, slope, "stem")
        self.encoders = []
        for l in range(config.num_levels):
            c_in = config.stem_channels if l == 0 else ch[l - 1]
            name = f"enc{l}"
            if config.ablation.mcae:
                self.encoders.append(
                    MCAEParams.create(rng, c_in, ch[l], config.blocks_per_level, slope, name)
                )
            else:
                self.encoders.append(PointwiseMaxParams.create(rng, c_in, ch[l], slope, name))
        self.decoders = []
        block = PCSPParams if config.ablation.pcsp else MLPDecoderParams
        for l in range(config.num_levels):
            if l == top:
                c_in, c_up = ch[l], None
            else:
                c_in, c_up = ch[l + 1] + ch[l], ch[l + 1]
            if config.ablation.pcsp and c_in % 2:
                raise ConfigError(f"decoder level {l} input width {c_in} cannot be halved")
            self.decoders.append(block.create(rng, c_in, ch[l], c_up, slope, f"dec{l}"))
        self.head = CBLParams.create(rng, ch[0], config.head_channels, slope, "head")
        hc, nc = config.head_channels, config.num_classes
        self.point_weight = T.Tensor(init_weight(rng, hc, nc, 1.0), True, "point_head.weight")
        self.point_bias = T.Tensor(np.zeros(nc), True, "point_head.bias")
        self.nei_weight = T.Tensor(init_weight(rng, hc, nc, 1.0), True, "nei_head.weight")
        self.nei_bias = T.Tensor(np.zeros(nc), True, "nei_head.bias")

    def cbls(self):
        out = [self.stem]
        for block in self.encoders + self.decoders:
            out += list(block.cbls().values())
        out.append(self.head)
        return out

    def parameters(self):
        ps = []
        for c in self.cbls():
            ps += c.parameters()
        ps += [self.point_weight, self.point_bias, self.nei_weight, self.nei_bias]
        return ps

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self):
        """Ordered ``name -> array`` of parameters followed by BN running statistics."""
        state = {p.name: p.data for p in self.parameters()}
        for c in self.cbls():
            for key, buf in c.buffers().items():
                state[f"{c.name}.{key}"] = buf
        return state

    def load_state_dict(self, state):
        current = self.state_dict()
        missing = set(current) - set(state)
        if missing:
            raise ConfigError(f"checkpoint lacks entries: {sorted(missing)[:5]}")
        for name, arr in current.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ConfigError(f"{name}: checkpoint shape {list(src.shape)} != {list(arr.shape)}")
            arr[...] = src

    def pyramid(self, positions, colors, rng):
        c = self.config
        return build_pyramid(positions, colors, c.num_levels, c.k_neighbors, c.decimation, rng)

    def features(self, levels, training):
        """Per-point head features ``[N_0, head_channels]`` for a prepared pyramid."""
        raw = np.concatenate([levels[0].positions, levels[0].colors], axis=1)
        fea = cbl(T.Tensor(raw), self.stem, training)
        state = level_state(levels[0], fea)
        skips = []
        for l, enc in enumerate(self.encoders):
            out = encoder_features(state, enc, training)
            skips.append(out)
            if l + 1 < len(self.encoders):
                state = pool_to_next(state, out, levels[l].sampled, levels[l + 1].neighbors)
        return decode(levels, skips, self.decoders, training, head=self.head)

    def forward(self, levels, training):
        """Return ``(point_logits, neighborhood_logits)``, both ``[N_0, num_classes]``."""
        feats = self.features(levels, training)
        logits_point = linear(feats, self.point_weight, self.point_bias)
        logits_nei = head_nei(feats, levels[0].neighbors, self.nei_weight, self.nei_bias)
        return logits_point, logits_nei


def build_model(config):
    config.validate()
    return MCNet(config)
