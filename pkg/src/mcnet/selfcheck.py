"""Named finite-difference checks for every differentiable building block.

Each check builds a small random problem from a seed and returns the max
relative error between tape and central-difference gradients. The CLI's
``gradcheck`` command and the acceptance suite both run these.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gradcheck import check_gradients, check_gradients_sampled, projected, random_projection

OP_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3


@dataclass
class CheckResult:
    module: str
    name: str
    seed: int
    error: float
    tolerance: float

    @property
    def passed(self):
        return self.error < self.tolerance


def _leaf(rng, *shape):
    return T.Tensor(rng.normal(size=shape), requires_grad=True)


def _matmul(rng):
    a, b = _leaf(rng, 4, 5), _leaf(rng, 5, 3)
    w = random_projection(rng, (4, 3))
    return check_gradients(lambda: projected(T.matmul(a, b), w), [a, b])


def _concat(rng):
    a, b = _leaf(rng, 3, 2), _leaf(rng, 3, 4)
    w = random_projection(rng, (3, 6))
    return check_gradients(lambda: projected(T.concat([a, b], axis=1), w), [a, b])


def _gather(rng):
    x = _leaf(rng, 6, 3)
    idx = rng.integers(6, size=(5, 4))
    w = random_projection(rng, (5, 4, 3))
    return check_gradients(lambda: projected(T.gather_neighbors(x, idx), w), [x])


def _max_pool(rng):
    # Well-separated entries keep the finite difference away from argmax switches.
    x = T.Tensor(rng.permutation(60).reshape(5, 4, 3) * 0.1, requires_grad=True)
    w = random_projection(rng, (5, 3))
    return check_gradients(lambda: projected(T.max_over_neighbors(x), w), [x])


def _softmax(rng):
    x = _leaf(rng, 4, 5, 3)
    w = random_projection(rng, (4, 5, 3))
    return check_gradients(lambda: projected(T.softmax(x, axis=1), w), [x])


def _weighted_sum(rng):
    x, s = _leaf(rng, 4, 5, 3), _leaf(rng, 4, 5, 3)
    w = random_projection(rng, (4, 3))
    return check_gradients(lambda: projected(T.weighted_sum_over_neighbors(x, s), w), [x, s])


def _cbl(rng):
    from .nn import CBLParams, cbl

    x = _leaf(rng, 6, 4)
    p = CBLParams.create(rng, 4, 3)
    w = random_projection(rng, (6, 3))
    return check_gradients(lambda: projected(cbl(x, p, True), w), [x] + p.parameters())


def _residual(rng):
    from .nn import ResidualParams, residual_block

    x = _leaf(rng, 6, 4)
    p = ResidualParams.create(rng, 4)
    w = random_projection(rng, (6, 4))
    return check_gradients(lambda: projected(residual_block(x, p, True), w), [x] + p.parameters())


def _attention(rng):
    from .encoder import attention_pool

    x, a, b = _leaf(rng, 4, 3, 5), _leaf(rng, 5, 5), _leaf(rng, 5)
    w = random_projection(rng, (4, 5))
    return check_gradients(lambda: projected(attention_pool(x, a, b), w), [x, a, b])


def _mcae(rng):
    from .encoder import LevelState, MCAEParams, mcae_block
    from .spatial import knn_self

    pos = rng.uniform(-1, 1, size=(32, 3))
    state = LevelState(np.arange(32), pos, rng.uniform(size=(32, 3)), _leaf(rng, 32, 4),
                       knn_self(pos, 9))
    p = MCAEParams.create(rng, 4, 8)
    sampled = np.sort(rng.choice(32, 8, replace=False))
    nxt = knn_self(pos[sampled], 4)
    w1, w2 = random_projection(rng, (32, 8)), random_projection(rng, (8, 8))

    def loss():
        fea, down = mcae_block(state, p, True, sampled=sampled, next_neighbors=nxt)
        return T.add(projected(fea, w1), projected(down.features, w2))

    return check_gradients(loss, [state.features] + p.parameters())


def _upsample(rng):
    from .decoder import upsample
    from .nn import CBLParams

    x = _leaf(rng, 4, 3)
    mapping = rng.integers(4, size=10)
    p = CBLParams.create(rng, 3, 5)
    w = random_projection(rng, (10, 5))
    return check_gradients(lambda: projected(upsample(x, mapping, p, True), w), [x] + p.parameters())


def _pcsp(rng):
    from .decoder import PCSPParams, pcsp_block
    from .spatial import knn_self

    nbrs = knn_self(rng.normal(size=(16, 3)), 5)
    x = _leaf(rng, 16, 8)
    p = PCSPParams.create(rng, 8, 6)
    w = random_projection(rng, (16, 6))
    return check_gradients(lambda: projected(pcsp_block(x, nbrs, p, True), w), [x] + p.parameters())


def _head_nei(rng):
    from .spatial import knn_self
    from .voting import head_nei

    f, a, b = _leaf(rng, 8, 4), _leaf(rng, 4, 3), _leaf(rng, 3)
    nbrs = knn_self(rng.normal(size=(8, 3)), 3)
    w = random_projection(rng, (8, 3))
    return check_gradients(lambda: projected(head_nei(f, nbrs, a, b), w), [f, a, b])


def _loss(rng):
    from .harness import weighted_cross_entropy

    logits = _leaf(rng, 6, 4)
    truth = rng.integers(4, size=6)
    weights = rng.uniform(0.2, 3.0, size=4)
    return check_gradients(lambda: weighted_cross_entropy(logits, truth, weights), [logits])


def _network(rng):
    from .harness import weighted_cross_entropy
    from .model import ModelConfig, build_model

    model = build_model(ModelConfig.test_profile(3, seed=int(rng.integers(2**31))))
    levels = model.pyramid(rng.normal(size=(64, 3)), rng.uniform(size=(64, 3)), rng)
    truth = rng.integers(3, size=64)
    weights = rng.uniform(0.5, 2.0, size=3)

    def loss():
        lp, ln = model.forward(levels, training=True)
        return T.add(weighted_cross_entropy(lp, truth, weights),
                     weighted_cross_entropy(ln, truth, weights))

    return check_gradients_sampled(loss, model.parameters(), rng, per_tensor=3)


CHECKS = {
    "tensor": {
        "matmul": _matmul,
        "concat": _concat,
        "gather": _gather,
        "max_pool": _max_pool,
        "softmax": _softmax,
        "weighted_sum": _weighted_sum,
    },
    "nn": {"cbl": _cbl, "residual_block": _residual},
    "encoder": {"attention_pool": _attention, "mcae_block": _mcae},
    "decoder": {"upsample": _upsample, "pcsp_block": _pcsp},
    "voting": {"head_nei": _head_nei},
    "harness": {"weighted_cross_entropy": _loss},
    "model": {"network": _network},
}


def run(module=None, seeds=range(3)):
    """Run the checks of one module (or all) for each seed; returns CheckResults."""
    if module is not None and module not in CHECKS:
        raise KeyError(f"unknown module {module!r}; choose from {sorted(CHECKS)}")
    results = []
    for mod, checks in CHECKS.items():
        if module is not None and mod != module:
            continue
        tol = NETWORK_TOLERANCE if mod == "model" else OP_TOLERANCE
        for name, fn in checks.items():
            for seed in seeds:
                err = fn(np.random.default_rng(seed))
                results.append(CheckResult(mod, name, seed, err, tol))
    return results
