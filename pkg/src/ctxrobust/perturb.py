"""Contextual image perturbations parametrized by a severity eps in [0, 1].

Three families:

* haze     -- convex blend toward a solid colour; at eps=1 the image is
              exactly that colour. Affine in eps, which the certification
              path relies on.
* contrast -- stretches values away from mid-grey and clamps; the eps=1
              limit is a hard threshold at 0.5.
* blur     -- Gaussian smoothing with sigma growing linearly in eps and
              clamp-to-edge borders.

All kernels and blends are computed in float64 and cast to float32 once at
the end, so results are deterministic across platforms. eps=0 returns the
input bit-for-bit for every family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PERTURBATION_KINDS = ("haze", "contrast", "blur")

_SIGMA_DELTA = 1e-6  # below this, the blur kernel degenerates to identity


@dataclass(frozen=True)
class PerturbationSpec:
    """Configuration bundle for one perturbation family.

    haze_color is in [0,1]^3; greyscale images require r == g == b.
    kernel_half_width d gives a (2d+1)^2 blur kernel; sigma_max is the
    Gaussian sigma reached at eps=1.
    """

    kind: str
    haze_color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kernel_half_width: int = 2
    sigma_max: float = 2.0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if len(self.haze_color) != 3 or any(not 0.0 <= c <= 1.0 for c in self.haze_color):
            raise ValueError(f"haze colour must be three values in [0, 1], got {self.haze_color!r}")
        if self.kernel_half_width < 1:
            raise ValueError("kernel half-width must be >= 1")
        if self.sigma_max <= 0.0:
            raise ValueError("sigma_max must be positive")


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not 0.0 <= eps <= 1.0 or math.isnan(eps):
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    return eps


def _haze_channels(image: np.ndarray, color) -> np.ndarray:
    """Per-channel target colour aligned with the image's channel axis."""
    c = image.shape[-1]
    r, g, b = (float(v) for v in color)
    if c == 3:
        return np.array([r, g, b], dtype=np.float64)
    if c == 1:
        if not (r == g == b):
            raise ValueError(f"greyscale image needs r == g == b, got {(r, g, b)}")
        return np.array([r], dtype=np.float64)
    raise ValueError(f"image must have 1 or 3 channels, got {c}")


def apply_haze(image: np.ndarray, eps: float, color=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Blend the image toward a solid colour: (1-eps)*x + eps*colour."""
    eps = _check_eps(eps)
    target = _haze_channels(image, color)
    if eps == 0.0:
        return np.asarray(image, dtype=np.float32).copy()
    x = np.asarray(image, dtype=np.float64)
    out = (1.0 - eps) * x + eps * target
    return np.asarray(out, dtype=np.float32)


def apply_contrast(image: np.ndarray, eps: float) -> np.ndarray:
    """Stretch values away from mid-grey: clamp((x - 0.5*eps) / (1 - eps)).

    At eps=1 the map degenerates to a hard threshold: 1 where x >= 0.5,
    else 0.
    """
    eps = _check_eps(eps)
    if eps == 0.0:
        return np.asarray(image, dtype=np.float32).copy()
    x = np.asarray(image, dtype=np.float64)
    if eps == 1.0:
        out = np.where(x >= 0.5, 1.0, 0.0)
    else:
        out = np.clip((x - 0.5 * eps) / (1.0 - eps), 0.0, 1.0)
    return np.asarray(out, dtype=np.float32)


@dataclass(frozen=True)
class KernelWeights:
    """Square blur kernel; weights has shape (2*half_width+1,)*2, sums to 1."""

    half_width: int
    weights: np.ndarray


def gaussian_kernel(sigma: float, half_width: int) -> KernelWeights:
    """Truncated Gaussian kernel, normalized to sum exactly 1.

    sigma below 1e-6 yields the identity (delta) kernel so eps=0 blur is a
    no-op rather than a 0/0.
    """
    if half_width < 1:
        raise ValueError("kernel half-width must be >= 1")
    size = 2 * half_width + 1
    if sigma < _SIGMA_DELTA:
        weights = np.zeros((size, size), dtype=np.float64)
        weights[half_width, half_width] = 1.0
        return KernelWeights(half_width=half_width, weights=weights)
    coords = np.arange(-half_width, half_width + 1, dtype=np.float64)
    g = np.exp(-(coords[:, None] ** 2 + coords[None, :] ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return KernelWeights(half_width=half_width, weights=g)


def apply_blur(image: np.ndarray, eps: float, half_width: int = 2, sigma_max: float = 2.0) -> np.ndarray:
    """Gaussian blur with sigma = eps * sigma_max and clamp-to-edge borders."""
    eps = _check_eps(eps)
    if sigma_max <= 0.0:
        raise ValueError("sigma_max must be positive")
    sigma = eps * sigma_max
    if sigma < _SIGMA_DELTA:
        return np.asarray(image, dtype=np.float32).copy()
    kernel = gaussian_kernel(sigma, half_width)
    x = np.asarray(image, dtype=np.float64)
    padded = np.pad(x, ((half_width, half_width), (half_width, half_width), (0, 0)), mode="edge")
    h, w, _ = x.shape
    out = np.zeros_like(x)
    for dy in range(2 * half_width + 1):
        for dx in range(2 * half_width + 1):
            out += kernel.weights[dy, dx] * padded[dy : dy + h, dx : dx + w, :]
    return np.asarray(out, dtype=np.float32)


def perturb(image: np.ndarray, eps: float, spec: PerturbationSpec) -> np.ndarray:
    """Apply the family selected by spec at severity eps."""
    if spec.kind == "haze":
        return apply_haze(image, eps, spec.haze_color)
    if spec.kind == "contrast":
        return apply_contrast(image, eps)
    return apply_blur(image, eps, spec.kernel_half_width, spec.sigma_max)
