"""Perturbation operators: identities, hand values, and frozen kernels."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxrobust import (
    PerturbationSpec,
    apply_blur,
    apply_contrast,
    apply_haze,
    gaussian_kernel,
    perturb,
)


def _rand_image(rng, shape=(6, 5, 3)):
    return rng.uniform(0, 1, size=shape).astype(np.float32)


# ---------------------------------------------------------------------------
# haze
# ---------------------------------------------------------------------------

def test_haze_zero_is_identity():
    rng = np.random.default_rng(10)
    x = _rand_image(rng)
    out = apply_haze(x, 0.0)
    assert out is not x
    assert np.array_equal(out, x)
    assert out.dtype == np.float32


def test_haze_one_is_pure_color():
    rng = np.random.default_rng(11)
    x = _rand_image(rng)
    assert np.array_equal(apply_haze(x, 1.0), np.ones_like(x))
    grey = apply_haze(x, 1.0, color=(0.5, 0.5, 0.5))
    assert np.array_equal(grey, np.full_like(x, 0.5))


def test_haze_hand_value():
    # 0.2 hazed halfway toward white: 0.5*0.2 + 0.5*1.0 = 0.6
    x = np.full((2, 2, 3), 0.2, dtype=np.float32)
    out = apply_haze(x, 0.5)
    assert np.allclose(out, 0.6, atol=1e-7)


def test_haze_per_channel_color():
    x = np.zeros((1, 1, 3), dtype=np.float32)
    out = apply_haze(x, 1.0, color=(1.0, 0.5, 0.0))
    assert np.allclose(out[0, 0], [1.0, 0.5, 0.0], atol=0)


def test_haze_greyscale_needs_uniform_color():
    x = np.full((2, 2, 1), 0.3, dtype=np.float32)
    out = apply_haze(x, 0.5, color=(0.8, 0.8, 0.8))
    assert np.allclose(out, 0.55, atol=1e-7)
    with pytest.raises(ValueError, match="greyscale"):
        apply_haze(x, 0.5, color=(1.0, 0.5, 0.0))


def test_haze_rejects_bad_eps():
    x = np.zeros((1, 1, 3), dtype=np.float32)
    for eps in (-0.1, 1.1, float("nan")):
        with pytest.raises(ValueError):
            apply_haze(x, eps)


@given(
    eps=st.floats(0.0, 1.0, allow_nan=False),
    v=st.floats(0.0, 1.0, allow_nan=False, width=32),
)
@settings(max_examples=100, deadline=None)
def test_haze_stays_between_pixel_and_color(eps, v):
    x = np.full((1, 1, 3), v, dtype=np.float32)
    out = apply_haze(x, eps)
    lo, hi = sorted((float(np.float32(v)), 1.0))
    assert np.all(out >= lo - 1e-6) and np.all(out <= hi + 1e-6)


# ---------------------------------------------------------------------------
# contrast
# ---------------------------------------------------------------------------

def test_contrast_zero_is_identity():
    rng = np.random.default_rng(12)
    x = _rand_image(rng)
    assert np.array_equal(apply_contrast(x, 0.0), x)


def test_contrast_one_thresholds():
    x = np.array([[[0.0], [0.4999], [0.5], [1.0]]], dtype=np.float32)
    out = apply_contrast(x, 1.0)
    assert np.array_equal(out.reshape(-1), [0.0, 0.0, 1.0, 1.0])


def test_contrast_hand_value():
    # (0.3 - 0.25) / 0.5 = 0.1
    x = np.full((1, 1, 1), 0.3, dtype=np.float32)
    assert np.allclose(apply_contrast(x, 0.5), 0.1, atol=1e-7)


def test_contrast_clamps():
    x = np.array([[[0.05], [0.95]]], dtype=np.float32)
    out = apply_contrast(x, 0.5)
    assert np.array_equal(out.reshape(-1), [0.0, 1.0])


def test_contrast_midpoint_fixed():
    x = np.full((3, 3, 1), 0.5, dtype=np.float32)
    for eps in (0.0, 0.25, 0.5, 0.99):
        assert np.allclose(apply_contrast(x, eps), 0.5, atol=1e-6)


@given(
    eps=st.floats(0.0, 0.999, allow_nan=False),
    a=st.floats(0.0, 1.0, allow_nan=False, width=32),
    b=st.floats(0.0, 1.0, allow_nan=False, width=32),
)
@settings(max_examples=100, deadline=None)
def test_contrast_preserves_order(eps, a, b):
    lo, hi = sorted((a, b))
    x = np.array([[[lo], [hi]]], dtype=np.float32)
    out = apply_contrast(x, eps)
    assert out[0, 0, 0] <= out[0, 1, 0] + 1e-7


# ---------------------------------------------------------------------------
# blur
# ---------------------------------------------------------------------------

def test_gaussian_kernel_frozen_values():
    # sigma=1, half_width=1: weights = exp(-d^2/2) / (1 + 4e^{-1/2} + 4e^{-1})
    k = gaussian_kernel(1.0, 1)
    assert k.weights.shape == (3, 3)
    assert np.isclose(k.weights.sum(), 1.0, atol=1e-12)
    assert np.isclose(k.weights[1, 1], 0.20417995557165810, atol=1e-15)
    assert np.isclose(k.weights[0, 1], 0.12384140315297397, atol=1e-15)
    assert np.isclose(k.weights[0, 0], 0.07511360795411150, atol=1e-15)


def test_gaussian_kernel_tiny_sigma_is_delta():
    k = gaussian_kernel(1e-9, 2)
    want = np.zeros((5, 5))
    want[2, 2] = 1.0
    assert np.array_equal(k.weights, want)


def test_gaussian_kernel_symmetry():
    k = gaussian_kernel(0.7, 2).weights
    assert np.allclose(k, k[::-1, :], atol=0)
    assert np.allclose(k, k[:, ::-1], atol=0)
    assert np.allclose(k, k.T, atol=0)


def _blur_reference(x, eps, half_width, sigma_max):
    """Nested-loop clamp-to-edge convolution oracle."""
    sigma = eps * sigma_max
    if sigma < 1e-6:
        return np.asarray(x, dtype=np.float32).copy()
    d = np.arange(-half_width, half_width + 1, dtype=np.float64)
    g = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    x64 = np.asarray(x, dtype=np.float64)
    h, w, c = x64.shape
    out = np.zeros_like(x64)
    for i in range(h):
        for j in range(w):
            for di in range(-half_width, half_width + 1):
                for dj in range(-half_width, half_width + 1):
                    ii = min(max(i + di, 0), h - 1)
                    jj = min(max(j + dj, 0), w - 1)
                    out[i, j] += g[di + half_width, dj + half_width] * x64[ii, jj]
    return out.astype(np.float32)


def test_blur_zero_is_identity():
    rng = np.random.default_rng(13)
    x = _rand_image(rng)
    assert np.array_equal(apply_blur(x, 0.0), x)


def test_blur_matches_reference():
    rng = np.random.default_rng(14)
    x = _rand_image(rng, shape=(7, 6, 3))
    for eps, hw, smax in [(0.25, 2, 2.0), (1.0, 2, 2.0), (0.5, 1, 3.0)]:
        got = apply_blur(x, eps, half_width=hw, sigma_max=smax)
        want = _blur_reference(x, eps, hw, smax)
        assert np.allclose(got, want, atol=1e-6)


def test_blur_uniform_image_unchanged():
    x = np.full((5, 5, 3), 0.37, dtype=np.float32)
    out = apply_blur(x, 0.8)
    assert np.allclose(out, 0.37, atol=1e-6)


def test_blur_preserves_range():
    rng = np.random.default_rng(15)
    x = _rand_image(rng)
    out = apply_blur(x, 1.0)
    assert out.min() >= -1e-7 and out.max() <= 1.0 + 1e-7


# ---------------------------------------------------------------------------
# dispatch + spec validation
# ---------------------------------------------------------------------------

def test_perturb_dispatch():
    rng = np.random.default_rng(16)
    x = _rand_image(rng)
    assert np.array_equal(
        perturb(x, 0.3, PerturbationSpec(kind="haze")), apply_haze(x, 0.3)
    )
    assert np.array_equal(
        perturb(x, 0.3, PerturbationSpec(kind="contrast")), apply_contrast(x, 0.3)
    )
    spec = PerturbationSpec(kind="blur", kernel_half_width=1, sigma_max=1.5)
    assert np.array_equal(
        perturb(x, 0.3, spec), apply_blur(x, 0.3, half_width=1, sigma_max=1.5)
    )


def test_perturbation_spec_validation():
    with pytest.raises(ValueError, match="kind"):
        PerturbationSpec(kind="sepia")
    with pytest.raises(ValueError):
        PerturbationSpec(kind="haze", haze_color=(1.0, 2.0, 0.0))
    with pytest.raises(ValueError):
        PerturbationSpec(kind="blur", kernel_half_width=0)
    with pytest.raises(ValueError):
        PerturbationSpec(kind="blur", sigma_max=0.0)
