import math

import numpy as np
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from fpgate.imaging import GrayImage
from fpgate.quality import (
    LOW_COHERENCE,
    LOW_FOREGROUND,
    QualityConfig,
    assess,
    orientation_field,
)

from conftest import stripes


def _oracle_block(px, y0, x0, b):
    """Straight-line orientation for one block, with its own Sobel sweep."""
    p = np.pad(px.astype(float), 1, mode="edge")
    sxx = syy = sxy = 0.0
    for y in range(y0, y0 + b):
        for x in range(x0, x0 + b):
            w = p[y : y + 3, x : x + 3]
            gx = (w[0, 2] + 2 * w[1, 2] + w[2, 2]) - (w[0, 0] + 2 * w[1, 0] + w[2, 0])
            gy = (w[2, 0] + 2 * w[2, 1] + w[2, 2]) - (w[0, 0] + 2 * w[0, 1] + w[0, 2])
            sxx += gx * gx
            syy += gy * gy
            sxy += gx * gy
    theta = (0.5 * math.atan2(2 * sxy, sxx - syy) + math.pi / 2) % math.pi
    coh = math.hypot(2 * sxy, sxx - syy) / (sxx + syy)
    return theta, coh


def test_constant_image_has_zero_coherence():
    of = orientation_field(GrayImage(np.full((64, 64), 90, np.uint8)), 16)
    assert not of.coherence.any()
    assert not of.theta.any()


def test_vertical_stripes():
    of = orientation_field(stripes(64, 4, vertical=True), 16)
    assert np.allclose(of.theta[1:-1, 1:-1], math.pi / 2, atol=1e-9)
    assert (of.coherence[1:-1, 1:-1] > 0.9).all()


def test_rotated_stripes():
    of = orientation_field(stripes(64, 4, vertical=False), 16)
    inner = of.theta[1:-1, 1:-1]
    # horizontal ridges sit at 0, which wraps with pi
    assert np.allclose(np.minimum(inner, math.pi - inner), 0.0, atol=1e-9)


def test_grid_dimensions():
    of = orientation_field(GrayImage(np.zeros((40, 72), np.uint8)), 16)
    assert (of.rows, of.cols) == (3, 5)


def test_matches_straight_line_oracle():
    rng = np.random.default_rng(11)
    base = ndimage.gaussian_filter(rng.normal(size=(48, 48)), 2)
    px = np.clip(128 + 400 * base, 0, 255).astype(np.uint8)
    of = orientation_field(GrayImage(px), 16)
    for i in range(3):
        for j in range(3):
            theta, coh = _oracle_block(px, 16 * i, 16 * j, 16)
            d = abs(of.theta[i, j] - theta)
            assert min(d, math.pi - d) < 1e-9
            assert abs(of.coherence[i, j] - coh) < 1e-9


def test_half_period_shift_keeps_theta():
    # shifting a stripe pattern by half its period inverts the ridge phase
    a = orientation_field(stripes(64, 4), 16)
    b = orientation_field(GrayImage(255 - stripes(64, 4).pixels), 16)
    assert np.allclose(a.theta, b.theta, atol=1e-6)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 1.0))
def test_coherence_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    px = rng.integers(0, 256, (32, 32)).astype(np.float64)
    a = orientation_field(GrayImage(px.astype(np.uint8)), 8)
    # scale the gradient input directly so no rounding interferes
    from fpgate.quality import _block_sums, sobel_gradients

    gx, gy = sobel_gradients(px * scale)
    sxx, syy, sxy = (_block_sums(v, 8) for v in (gx * gx, gy * gy, gx * gy))
    coh = np.hypot(2 * sxy, sxx - syy) / (sxx + syy)
    assert np.allclose(a.coherence, coh, atol=1e-9)


def test_assess_blank():
    report = assess(GrayImage(np.zeros((64, 64), np.uint8)))
    assert not report.accepted
    assert LOW_FOREGROUND in report.reasons


def test_assess_noise():
    px = np.random.default_rng(42).integers(0, 256, (128, 128), dtype=np.uint8)
    report = assess(GrayImage(px))
    assert report.mean_coherence < 0.35
    assert LOW_COHERENCE in report.reasons
    assert not report.accepted


def test_assess_synthetic(synth_image):
    report = assess(synth_image)
    assert report.accepted
    assert report.reasons == ()


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_never_accepts_below_foreground_threshold(seed, min_fg):
    rng = np.random.default_rng(seed)
    px = np.zeros((64, 64), np.uint8)
    n = rng.integers(0, 5)
    for _ in range(n):
        y, x = rng.integers(0, 4, 2) * 16
        px[y : y + 16, x : x + 16] = np.tile(np.arange(16) // 2 % 2 * 255, (16, 1))
    report = assess(GrayImage(px), QualityConfig(min_foreground=min_fg, min_contrast=0, min_coherence=0))
    assert report.accepted == (report.foreground_ratio >= min_fg)
    assert report.accepted == (not report.reasons)
