"""Pointwise network layers: CBL (linear + batch norm + LeakyReLU) and residual blocks."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DegenerateBatchError, DimensionError

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.99


def init_weight(rng, fan_in, fan_out, slope=LEAKY_SLOPE):
    """Kaiming-style uniform initialization scaled by fan-in."""
    bound = np.sqrt(6.0 / ((1.0 + slope**2) * fan_in))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class CBLParams:
    weight: T.Tensor
    bias: T.Tensor
    bn_gamma: T.Tensor
    bn_beta: T.Tensor
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    leaky_slope: float = LEAKY_SLOPE
    name: str = ""

    @classmethod
    def create(cls, rng, c_in, c_out, slope=LEAKY_SLOPE, name=""):
        return cls(
            weight=T.Tensor(init_weight(rng, c_in, c_out, slope), True, f"{name}.weight"),
            bias=T.Tensor(np.zeros(c_out), True, f"{name}.bias"),
            bn_gamma=T.Tensor(np.ones(c_out), True, f"{name}.bn_gamma"),
            bn_beta=T.Tensor(np.zeros(c_out), True, f"{name}.bn_beta"),
            bn_running_mean=np.zeros(c_out),
            bn_running_var=np.ones(c_out),
            leaky_slope=slope,
            name=name,
        )

    @property
    def c_in(self):
        return self.weight.shape[0]

    @property
    def c_out(self):
        return self.weight.shape[1]

    def parameters(self):
        return [self.weight, self.bias, self.bn_gamma, self.bn_beta]

    def buffers(self):
        return {"bn_running_mean": self.bn_running_mean, "bn_running_var": self.bn_running_var}


def cbl(x, p, training, activate=True):
    """``leaky_relu(batchnorm(x @ W + b))`` on ``[N, C_in]`` or ``[N, K, C_in]`` input.

    In training mode batch statistics are used and the running statistics are
    updated in place with momentum ``BN_MOMENTUM``.
    """
    lead = x.shape[:-1]
    if x.shape[-1] != p.c_in:
        raise DimensionError(
            f"cbl: input has {x.shape[-1]} channels but weight is {list(p.weight.shape)}"
        )
    flat = T.reshape(x, (-1, p.c_in)) if x.data.ndim != 2 else x
    h = T.add_bias(T.matmul(flat, p.weight), p.bias)
    if training:
        if h.shape[0] < 2:
            raise DegenerateBatchError("batch norm in training mode needs at least 2 points")
        h, mu, var = T.batch_norm(h, p.bn_gamma, p.bn_beta, None, None, BN_EPS)
        p.bn_running_mean *= BN_MOMENTUM
        p.bn_running_mean += (1.0 - BN_MOMENTUM) * mu
        p.bn_running_var *= BN_MOMENTUM
        p.bn_running_var += (1.0 - BN_MOMENTUM) * var
    else:
        h, _, _ = T.batch_norm(
            h, p.bn_gamma, p.bn_beta, p.bn_running_mean, p.bn_running_var, BN_EPS
        )
    if activate:
        h = T.leaky_relu(h, p.leaky_slope)
    if x.data.ndim != 2:
        h = T.reshape(h, (*lead, p.c_out))
    return h


@dataclass
class ResidualParams:
    first: CBLParams
    second: CBLParams

    @classmethod
    def create(cls, rng, channels, slope=LEAKY_SLOPE, name=""):
        return cls(
            CBLParams.create(rng, channels, channels, slope, f"{name}.first"),
            CBLParams.create(rng, channels, channels, slope, f"{name}.second"),
        )

    def parameters(self):
        return self.first.parameters() + self.second.parameters()


def residual_block(x, params, training):
    """``leaky_relu(x + BN(CBL(x) @ W2 + b2))`` with an identity shortcut."""
    if x.shape[-1] != params.first.c_in or params.second.c_out != x.shape[-1]:
        raise DimensionError(
            f"residual_block: input has {x.shape[-1]} channels, block maps "
            f"{params.first.c_in} -> {params.second.c_out}"
        )
    h = cbl(x, params.first, training)
    h = cbl(h, params.second, training, activate=False)
    return T.leaky_relu(T.add(x, h), params.second.leaky_slope)


def linear(x, weight, bias):
    """Pointwise fully connected layer over the last axis of ``x``."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input has {x.shape[-1]} channels but weight is {list(weight.shape)}"
        )
    lead = x.shape[:-1]
    flat = T.reshape(x, (-1, weight.shape[0])) if x.data.ndim != 2 else x
    out = T.add_bias(T.matmul(flat, weight), bias)
    if x.data.ndim != 2:
        out = T.reshape(out, (*lead, weight.shape[1]))
    return out
