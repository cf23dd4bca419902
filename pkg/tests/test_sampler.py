import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcnet.errors import ContractError
from mcnet.pointcloud import PointCloud
from mcnet.sampler import (
    ClassWeights,
    class_weights_from_frequencies,
    decimate,
    default_sigma,
    draw_patch,
    weighted_draw_without_replacement,
)


def colocated_cloud(n_per_class=50, num_classes=2):
    """Every point at the origin, equal class sizes."""
    n = n_per_class * num_classes
    labels = np.repeat(np.arange(num_classes), n_per_class)
    return PointCloud(np.zeros((n, 3)), np.full((n, 3), 0.5), labels, num_classes)


def random_cloud(rng, n=200, num_classes=3):
    return PointCloud(
        rng.uniform(-1, 1, size=(n, 3)),
        rng.uniform(0, 1, size=(n, 3)),
        rng.integers(num_classes, size=n),
        num_classes,
    )


# ------------------------------------------------------------ class weights

def test_balanced_frequencies_give_unit_weights():
    npt.assert_allclose(class_weights_from_frequencies([0.5, 0.5]).weights, [1.0, 1.0])


def test_rare_to_common_ratio():
    w = class_weights_from_frequencies([0.99, 0.01]).weights
    assert w[1] / w[0] == pytest.approx(np.sqrt(0.99 / 0.01), rel=1e-12)
    assert w[1] / w[0] == pytest.approx(9.95, abs=5e-3)


def test_zero_frequency_clamps_to_eps():
    w = class_weights_from_frequencies([0.6, 0.4, 0.0]).weights
    assert np.all(np.isfinite(w))
    raw = 1.0 / np.sqrt([0.6, 0.4, 1e-4])
    npt.assert_allclose(w, raw / raw.mean(), rtol=1e-12)


def test_all_zero_frequencies_rejected():
    with pytest.raises(ContractError):
        class_weights_from_frequencies([0.0, 0.0])


def test_frequencies_must_sum_to_one():
    with pytest.raises(ContractError):
        class_weights_from_frequencies([0.5, 0.2])


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12).filter(lambda v: sum(v) > 1e-3))
@settings(max_examples=100, deadline=None)
def test_weights_positive_with_mean_one(raw):
    freq = np.array(raw) / np.sum(raw)
    w = class_weights_from_frequencies(freq).weights
    assert np.all(w > 0)
    assert abs(w.mean() - 1.0) < 1e-9


def test_class_weights_reject_nonpositive():
    with pytest.raises(ContractError):
        ClassWeights(np.array([1.0, 0.0]))


# ------------------------------------------------------------ draw_patch

def test_patch_equal_to_cloud_returns_everything(rng):
    cloud = random_cloud(rng, n=40)
    w = ClassWeights(np.array([5.0, 0.1, 1.0]))
    draw = draw_patch(cloud, w, 40, 0.3, rng)
    npt.assert_array_equal(np.sort(draw.point_ids), np.arange(40))
    assert np.all(draw.probabilities_used > 0)


def test_patch_larger_than_cloud_rejected(rng):
    cloud = random_cloud(rng, n=10)
    with pytest.raises(ContractError):
        draw_patch(cloud, ClassWeights.uniform(3), 11, 1.0, rng)


def test_nonpositive_sigma_rejected(rng):
    cloud = random_cloud(rng, n=10)
    with pytest.raises(ContractError):
        draw_patch(cloud, ClassWeights.uniform(3), 5, 0.0, rng)


@given(st.integers(0, 2**32 - 1), st.integers(1, 60))
@settings(max_examples=60, deadline=None)
def test_draw_returns_distinct_ids_of_requested_size(seed, size):
    rng = np.random.default_rng(seed)
    cloud = random_cloud(rng, n=60)
    draw = draw_patch(cloud, ClassWeights(rng.uniform(0.1, 3, 3)), size, 0.5, rng)
    assert draw.point_ids.shape == (size,)
    assert len(np.unique(draw.point_ids)) == size
    assert np.all(draw.probabilities_used > 0)


def test_same_seed_same_draw(rng):
    cloud = random_cloud(rng)
    w = ClassWeights(np.array([1.0, 2.0, 0.5]))
    a = draw_patch(cloud, w, 30, 0.4, np.random.default_rng(9))
    b = draw_patch(cloud, w, 30, 0.4, np.random.default_rng(9))
    assert a.center_id == b.center_id
    npt.assert_array_equal(a.point_ids, b.point_ids)


@pytest.mark.parametrize("scale", [1e-3, 0.5, 7.0, 1e4])
def test_scaling_weights_leaves_draw_unchanged(rng, scale):
    cloud = random_cloud(rng)
    base = np.array([1.0, 2.5, 0.3])
    for seed in range(20):
        a = draw_patch(cloud, ClassWeights(base), 25, 0.6, np.random.default_rng(seed))
        b = draw_patch(cloud, ClassWeights(base * scale), 25, 0.6, np.random.default_rng(seed))
        npt.assert_array_equal(a.point_ids, b.point_ids)


def test_uniform_weights_infinite_sigma_is_uniform():
    # 100k single-point draws over 20 points; each count is Binomial(n, 1/20).
    cloud = PointCloud(
        np.random.default_rng(0).uniform(size=(20, 3)), np.zeros((20, 3)), np.zeros(20, int), 1
    )
    rng = np.random.default_rng(42)
    draws = 100_000
    counts = np.zeros(20)
    for _ in range(draws):
        counts[draw_patch(cloud, ClassWeights.uniform(1), 1, np.inf, rng).point_ids[0]] += 1
    p = 1 / 20
    sd = np.sqrt(draws * p * (1 - p))
    # Among 20 bins a single 3-sigma excursion has ~5% probability; allow one.
    assert np.sum(np.abs(counts - draws * p) >= 3 * sd) <= 1
    assert np.all(np.abs(counts - draws * p) < 4 * sd)


def class0_frequency(draws, seed=7):
    cloud = colocated_cloud(50)
    w = ClassWeights(np.array([2.0, 1.0]))
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(draws):
        hits += cloud.labels[draw_patch(cloud, w, 1, 1.0, rng).point_ids[0]] == 0
    return hits


def test_weighted_classes_drawn_in_proportion():
    draws = 100_000
    hits = class0_frequency(draws)
    p = 2 / 3
    assert abs(hits - draws * p) < 3 * np.sqrt(draws * p * (1 - p))


def test_exponential_keys_first_draw_matches_weights():
    # Vectorized single-draw oracle: P(first = i) = p_i / sum(p).
    p = np.array([1.0, 2.0, 3.0, 4.0])
    rng = np.random.default_rng(3)
    draws = 40_000
    counts = np.bincount(
        [weighted_draw_without_replacement(p, 1, rng)[0] for _ in range(draws)], minlength=4
    )
    expected = draws * p / p.sum()
    sd = np.sqrt(expected * (1 - p / p.sum()))
    assert np.all(np.abs(counts - expected) < 3 * sd)


def test_far_points_still_drawable_when_kernel_underflows():
    pos = np.array([[0.0, 0, 0], [1e6, 0, 0]])
    cloud = PointCloud(pos, np.zeros((2, 3)), np.array([0, 0]), 1)
    draw = draw_patch(cloud, ClassWeights.uniform(1), 2, 1.0, np.random.default_rng(0))
    npt.assert_array_equal(np.sort(draw.point_ids), [0, 1])


def test_default_sigma_formula(rng):
    cloud = random_cloud(rng, n=800)
    pos = cloud.positions
    diag = np.linalg.norm(pos.max(0) - pos.min(0))
    assert default_sigma(cloud, 100) == pytest.approx((100 / 800) ** (1 / 3) * diag)


# ------------------------------------------------------------ decimate

def test_decimate_ratio_one_is_identity(rng):
    ids = np.arange(10, 30)
    npt.assert_array_equal(decimate(ids, 1, rng), ids)


def test_decimate_size_contract(rng):
    out = decimate(np.arange(4096), 4, rng)
    assert out.shape == (1024,)
    assert len(np.unique(out)) == 1024


@given(st.integers(1, 500), st.integers(1, 9), st.integers(0, 2**32 - 1))
@settings(max_examples=80, deadline=None)
def test_decimate_ceil_size_subset(n, r, seed):
    ids = np.arange(n) * 3
    out = decimate(ids, r, np.random.default_rng(seed))
    assert out.shape == (-(-n // r),)
    assert set(out.tolist()) <= set(ids.tolist())
    assert len(np.unique(out)) == out.size


def test_decimate_deterministic_per_seed():
    ids = np.arange(1000)
    a = decimate(ids, 4, np.random.default_rng(5))
    b = decimate(ids, 4, np.random.default_rng(5))
    c = decimate(ids, 4, np.random.default_rng(6))
    npt.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_decimate_rejects_ratio_below_one(rng):
    with pytest.raises(ContractError):
        decimate(np.arange(5), 0.5, rng)
