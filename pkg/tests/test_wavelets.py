import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpgate.errors import ShapeMismatch
from fpgate.surface3d import CoreKind, CorePoint, WeightedSurface
from fpgate.wavelets import (
    HIST_BINS,
    Mlp,
    SubbandPyramid,
    default_selector,
    dump_mlp,
    dwt2,
    feature_length,
    idwt2,
    init_mlp,
    mlp_forward,
    parse_mlp,
    select_top,
    stat_descriptors,
    subband_stats,
    train_mlp,
    wavelet_feature,
)


def _surface(z):
    z = np.asarray(z, dtype=np.float64)
    return WeightedSurface(z, CorePoint(0.0, 0.0, CoreKind.POINCARE), 1.0)


def _energy(pyr):
    return sum(float(np.sum(b * b)) for b in pyr.subbands())


def test_constant_grid():
    pyr = dwt2(np.full((4, 4), 3.0), 1)
    assert all(not band.any() for band in pyr.details[0])
    assert np.allclose(pyr.ll, 6.0)


def test_two_by_two_by_hand():
    pyr = dwt2([[1.0, 2.0], [3.0, 4.0]], 1)
    lh, hl, hh = (float(b[0, 0]) for b in pyr.details[0])
    assert (float(pyr.ll[0, 0]), lh, hl, hh) == (5.0, -2.0, -1.0, 0.0)
    assert _energy(pyr) == 30.0


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(5, 70), st.integers(5, 70))
def test_perfect_reconstruction(seed, levels, h, w):
    x = np.random.default_rng(seed).normal(size=(h, w))
    pyr = dwt2(x, levels)
    assert np.abs(idwt2(pyr) - x).max() < 1e-9
    for level, bands in enumerate(pyr.details):
        side = np.array(bands[0].shape)
        assert all(b.shape == tuple(side) for b in bands)
        assert (side * 2 ** (level + 1) >= (h, w)).all()


def test_energy_preserved_on_aligned_grid():
    x = np.random.default_rng(0).normal(size=(64, 64))
    assert _energy(dwt2(x, 3)) == pytest.approx(float(np.sum(x * x)), rel=1e-9)


def test_zero_pyramid():
    z = np.zeros((2, 2))
    pyr = SubbandPyramid(((z, z, z),), z, (4, 4))
    assert not idwt2(pyr).any()


def test_single_hh_coefficient():
    z = np.zeros((2, 2))
    hh = z.copy()
    hh[1, 0] = 1.0
    out = idwt2(SubbandPyramid(((z, z, hh),), z, (4, 4)))
    expected = np.zeros((4, 4))
    expected[2:4, 0:2] = [[0.5, -0.5], [-0.5, 0.5]]
    assert np.array_equal(out, expected)


def test_forward_zero_weights():
    net = Mlp([np.zeros((2, 3))], [np.array([0.0, 1.5])])
    out = mlp_forward(net, [4.0, -1.0, 2.0])
    assert out[0] == 0.5
    assert out[1] == pytest.approx(1 / (1 + math.exp(-1.5)))


def test_forward_by_hand():
    net = Mlp([np.array([[1.0, -1.0]])], [np.array([0.5])])
    assert mlp_forward(net, [1.0, 1.0])[0] == pytest.approx(0.622459, abs=1e-6)


def test_forward_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        mlp_forward(init_mlp([3, 2, 1], 0), [1.0, 2.0])
    with pytest.raises(ShapeMismatch):
        Mlp([np.zeros((2, 3)), np.zeros((1, 3))], [np.zeros(2), np.zeros(1)])


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_forward_bounded(seed, x):
    out = mlp_forward(init_mlp([4, 5, 3], seed), x)
    assert ((out >= 0) & (out <= 1)).all()


def test_train_and_truth_table():
    xs = [[0, 0], [0, 1], [1, 0], [1, 1]]
    ys = [0, 0, 0, 1]
    net = train_mlp(xs, ys, epochs=2000, rate=0.5, seed=7, hidden=(4,))
    pred = mlp_forward(net, xs)[:, 0] >= 0.5
    assert list(pred) == [False, False, False, True]


def test_train_rejects_zero_epochs():
    with pytest.raises(ValueError):
        train_mlp([[0.0]], [0.0], epochs=0, rate=0.1, seed=0)
    with pytest.raises(ShapeMismatch):
        train_mlp([[0.0], [1.0]], [0.0], epochs=1, rate=0.1, seed=0)


def test_train_deterministic():
    rng = np.random.default_rng(3)
    xs = rng.normal(size=(30, 3))
    ys = (xs[:, 0] > 0).astype(float)
    a = train_mlp(xs, ys, 50, 0.3, seed=9)
    b = train_mlp(xs, ys, 50, 0.3, seed=9)
    assert a.same_as(b)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 5.0), st.integers(1, 20))
def test_train_never_worse(seed, rate, epochs):
    rng = np.random.default_rng(seed)
    xs = rng.normal(size=(12, 3))
    ys = rng.uniform(size=(12, 2))
    start = init_mlp([3, 4, 2], seed)
    net = train_mlp(xs, ys, epochs, rate, seed, net=start)

    def loss(n):
        return float(np.mean(np.sum((mlp_forward(n, xs) - ys) ** 2, axis=1)))

    assert loss(net) <= loss(start)


def test_mlp_text_round_trip():
    net = init_mlp([11, 8, 1], 5)
    net.biases[0][:] = np.random.default_rng(1).normal(size=8) / 3
    text = dump_mlp(net)
    assert text.startswith("MLP1\n11 8 1\n")
    assert parse_mlp(text).same_as(net)
    with pytest.raises(ValueError):
        parse_mlp("MLP1\n2 1\n0.5\n")


def test_stats_of_constant_input():
    stats = subband_stats(dwt2(np.full((16, 16), 2.0), 2))
    shares = stats[0::2]
    assert shares[-1] == 1.0
    assert not shares[:-1].any()


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_shares_sum_to_one(seed):
    stats = subband_stats(dwt2(np.random.default_rng(seed).normal(size=(32, 32)), 3))
    assert stats[0::2].sum() == pytest.approx(1.0, abs=1e-9)


def _hist_entropy(values):
    """Direct bin counting: 16 equal-width bins of |v| over [0, max|v|]."""
    mags = [abs(v) for v in values]
    peak = max(mags)
    counts = [0] * HIST_BINS
    for m in mags:
        counts[min(int(m / peak * HIST_BINS), HIST_BINS - 1)] += 1
    n = len(mags)
    return -sum(c / n * math.log2(c / n) for c in counts if c)


def test_impulse_entropy():
    x = np.zeros((8, 8))
    x[2, 3] = 4.0
    x[5, 5] = 1.0
    pyr = dwt2(x, 1)
    stats = subband_stats(pyr)
    for idx, band in enumerate(pyr.subbands()):
        expected = _hist_entropy(band.ravel().tolist()) if np.abs(band).max() > 0 else 0.0
        assert stats[2 * idx + 1] == pytest.approx(expected, abs=1e-12)


def test_descriptors():
    desc = stat_descriptors(np.arange(6.0))
    assert desc.shape == (6, 4)
    assert list(desc[:, 0]) == list(range(6))
    assert list(desc[3, 1:]) == [0.0, 1.0, 0.0]


def test_select_top_ties_go_low():
    assert list(select_top(np.array([0.2, 0.5, 0.5, 0.1, 0.5]), 2)) == [1, 2]


def test_select_all():
    z = np.random.default_rng(2).uniform(size=(32, 32))
    feat = wavelet_feature(_surface(z), k=feature_length(3))
    stats = subband_stats(dwt2(z, 3))
    assert np.allclose(feat.vector, stats / np.linalg.norm(stats), atol=1e-15)
    assert feat.selected == tuple(range(20))


def test_zero_surface():
    feat = wavelet_feature(_surface(np.zeros((32, 32))))
    assert not feat.vector.any()


def test_feature_unit_norm_and_deterministic():
    z = np.random.default_rng(8).uniform(size=(40, 40))
    a = wavelet_feature(_surface(z), default_selector())
    b = wavelet_feature(_surface(z), default_selector())
    assert a.vector.tobytes() == b.vector.tobytes()
    assert np.linalg.norm(a.vector) == pytest.approx(1.0, abs=1e-9)
    assert len(a.selected) == 12
    assert np.count_nonzero(a.vector) <= 12
    with pytest.raises(ShapeMismatch):
        wavelet_feature(_surface(z), init_mlp([5, 2, 1], 0))


@settings(max_examples=25)
@given(st.permutations(list(range(7))))
def test_selection_permutation_stable(perm):
    scores = np.array([0.91, 0.12, 0.55, 0.73, 0.08, 0.64, 0.37])
    chosen = set(select_top(scores, 3))
    moved = set(np.array(perm)[select_top(scores[perm], 3)])
    assert chosen == moved == {0, 3, 5}
