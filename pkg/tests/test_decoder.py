import numpy as np
import numpy.testing as npt
import pytest

from mcnet import tensor as T
from mcnet.decoder import MLPDecoderParams, PCSPParams, decode, pcsp_block, upsample
from mcnet.encoder import build_pyramid
from mcnet.errors import ContractError, DimensionError
from mcnet.gradcheck import check_gradients, check_gradients_sampled, projected, random_projection
from mcnet.harness import weighted_cross_entropy
from mcnet.model import ModelConfig, build_model
from mcnet.nn import CBLParams, cbl, residual_block
from mcnet.sampler import ClassWeights
from mcnet.spatial import knn_self


# ------------------------------------------------------------ upsample

def test_identity_mapping_is_plain_cbl(rng):
    x = T.Tensor(rng.normal(size=(10, 6)))
    p = CBLParams.create(rng, 6, 6)
    out = upsample(x, np.arange(10), p, training=True)
    npt.assert_array_equal(out.data, cbl(x, p, training=True).data)


def test_single_coarse_point_shares_one_row(rng):
    x = T.Tensor(rng.normal(size=(1, 4)))
    copied = T.take_rows(x, np.zeros(7, dtype=np.int64))
    npt.assert_array_equal(copied.data, np.repeat(x.data, 7, axis=0))
    p = CBLParams.create(rng, 4, 4)
    out = upsample(x, np.zeros(7, dtype=np.int64), p, training=False)
    assert np.all(out.data == out.data[0])


def test_same_coarse_target_gives_identical_rows(rng):
    x = T.Tensor(rng.normal(size=(3, 5)))
    mapping = np.array([2, 0, 2, 1, 2, 0])
    out = upsample(x, mapping, CBLParams.create(rng, 5, 5), training=True).data
    npt.assert_array_equal(out[0], out[2])
    npt.assert_array_equal(out[0], out[4])
    npt.assert_array_equal(out[1], out[5])


def test_invalid_mapping_raises_index_error(rng):
    x = T.Tensor(rng.normal(size=(3, 2)))
    with pytest.raises(IndexError):
        upsample(x, np.array([0, 3]), CBLParams.create(rng, 2, 2), training=True)


@pytest.mark.parametrize("seed", range(5))
def test_upsample_gradcheck(seed):
    rng = np.random.default_rng(seed)
    x = T.Tensor(rng.normal(size=(4, 3)), True)
    mapping = rng.integers(4, size=10)
    p = CBLParams.create(rng, 3, 5)
    w = random_projection(rng, (10, 5))
    err = check_gradients(lambda: projected(upsample(x, mapping, p, True), w), [x] + p.parameters())
    assert err < 1e-4


# ------------------------------------------------------------ pcsp block

def test_pcsp_shapes_and_branch_widths(rng):
    pos = rng.normal(size=(128, 3))
    nbrs = knn_self(pos, 9)
    p = PCSPParams.create(rng, 64, 48)
    assert p.branch_a_cbl.c_out == 32 and p.branch_b_cbl.c_out == 32
    assert p.merge_cbl.c_in == 64
    x = T.Tensor(rng.normal(size=(128, 64)))
    a = cbl(x, p.branch_a_cbl, True)
    b = cbl(x, p.branch_b_cbl, True)
    assert a.shape == b.shape == (128, 32)
    assert pcsp_block(x, nbrs, p, True).shape == (128, 48)


def test_odd_width_rejected(rng):
    with pytest.raises(DimensionError):
        PCSPParams.create(rng, 7, 8)


def test_pcsp_channel_mismatch(rng):
    p = PCSPParams.create(rng, 8, 8)
    with pytest.raises(DimensionError):
        pcsp_block(T.Tensor(np.ones((5, 6))), knn_self(rng.normal(size=(5, 3)), 2), p, True)


def test_zero_residual_reduces_branch_b(rng):
    # Zero residual weights make the inner batch norm see a constant, which it maps to 0.
    p = PCSPParams.create(rng, 8, 8)
    for c in (p.branch_b_residual.first, p.branch_b_residual.second):
        c.weight.data[...] = 0.0
    x = T.Tensor(rng.normal(size=(16, 8)))
    h = cbl(x, p.branch_b_cbl, True)
    out = residual_block(h, p.branch_b_residual, True)
    npt.assert_allclose(out.data, T.leaky_relu(h, 0.2).data, atol=1e-12)
    assert np.all(np.isfinite(pcsp_block(x, knn_self(rng.normal(size=(16, 3)), 4), p, True).data))


@pytest.mark.parametrize("seed", range(5))
def test_pcsp_gradcheck(seed):
    rng = np.random.default_rng(seed)
    nbrs = knn_self(rng.normal(size=(16, 3)), 5)
    x = T.Tensor(rng.normal(size=(16, 8)), True)
    p = PCSPParams.create(rng, 8, 6)
    w = random_projection(rng, (16, 6))
    err = check_gradients(lambda: projected(pcsp_block(x, nbrs, p, True), w), [x] + p.parameters())
    assert err < 1e-4


# ------------------------------------------------------------ decode

def test_single_level_decode_is_one_block(rng):
    pos = rng.normal(size=(20, 3))
    levels = build_pyramid(pos, np.zeros((20, 3)), 1, 4, 4, rng)
    skip = T.Tensor(rng.normal(size=(20, 8)))
    p = PCSPParams.create(rng, 8, 8)
    out = decode(levels, [skip], [p], training=False)
    npt.assert_array_equal(out.data, pcsp_block(skip, levels[0].neighbors, p, False).data)


def test_level_count_mismatch(rng):
    levels = build_pyramid(rng.normal(size=(20, 3)), np.zeros((20, 3)), 2, 4, 4, rng)
    with pytest.raises(ContractError):
        decode(levels, [T.Tensor(np.ones((20, 8)))], [PCSPParams.create(rng, 8, 8)], True)


def decoder_stack(rng, ch, block=PCSPParams):
    top = len(ch) - 1
    out = []
    for l in range(len(ch)):
        if l == top:
            out.append(block.create(rng, ch[l], ch[l]))
        else:
            out.append(block.create(rng, ch[l + 1] + ch[l], ch[l], ch[l + 1]))
    return out


@pytest.mark.parametrize("block", [PCSPParams, MLPDecoderParams])
def test_three_level_decode_shape(rng, block):
    ch = [8, 16, 32]
    levels = build_pyramid(rng.normal(size=(200, 3)), rng.uniform(size=(200, 3)), 3, 9, 4, rng)
    skips = [T.Tensor(rng.normal(size=(len(l.point_ids), c))) for l, c in zip(levels, ch)]
    head = CBLParams.create(rng, 8, 32)
    out = decode(levels, skips, decoder_stack(rng, ch, block), True, head=head)
    assert out.shape == (200, 32)


def test_full_model_no_nan_over_seeds():
    cfg = ModelConfig.test_profile(4)
    for seed in range(100):
        rng = np.random.default_rng(seed)
        model = build_model(cfg.replace(seed=seed))
        n = 64
        pos = rng.normal(scale=rng.uniform(0.01, 100), size=(n, 3))
        levels = model.pyramid(pos, rng.uniform(size=(n, 3)), rng)
        feats = model.features(levels, training=bool(seed % 2))
        assert feats.shape == (n, 32)
        assert np.all(np.isfinite(feats.data)), f"seed {seed}"


def test_full_model_gradcheck():
    rng = np.random.default_rng(0)
    model = build_model(ModelConfig.test_profile(3))
    pos = rng.normal(size=(64, 3))
    col = rng.uniform(size=(64, 3))
    levels = model.pyramid(pos, col, rng)
    truth = rng.integers(3, size=64)
    weights = ClassWeights(np.array([0.5, 1.0, 2.0]))

    def loss():
        lp, ln = model.forward(levels, training=True)
        return T.add(weighted_cross_entropy(lp, truth, weights),
                     weighted_cross_entropy(ln, truth, weights))

    err = check_gradients_sampled(loss, model.parameters(), np.random.default_rng(1), per_tensor=3)
    assert err < 1e-3
