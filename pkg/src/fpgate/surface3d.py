"""Core-anchored weighted surface built from ridge energy and orientation confidence."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import EmptyForeground, ShapeMismatch
from .imaging import ForegroundMask, GrayImage
from .quality import OrientationField, block_foreground, sobel_gradients


class CoreKind(str, enum.Enum):
    POINCARE = "POINCARE"
    CENTROID_FALLBACK = "CENTROID_FALLBACK"


@dataclass(frozen=True)
class CorePoint:
    x: float
    y: float
    kind: CoreKind


@dataclass(frozen=True, eq=False)
class WeightedSurface:
    z: np.ndarray  # (height, width), values in [0, 1]
    core: CorePoint
    sigma: float

    @property
    def width(self) -> int:
        return self.z.shape[1]

    @property
    def height(self) -> int:
        return self.z.shape[0]


def _wrap_half_turn(d: np.ndarray) -> np.ndarray:
    """Map orientation differences into (-pi/2, pi/2]."""
    d = np.where(d > np.pi / 2, d - np.pi, d)
    return np.where(d <= -np.pi / 2, d + np.pi, d)


def poincare_indices(theta: np.ndarray) -> np.ndarray:
    """Poincare index of every 2x2 block loop; result has shape (rows-1, cols-1).

    The loop visits top-left, top-right, bottom-right, bottom-left, which is the
    direction of increasing angle in image coordinates (y down).
    """
    tl = theta[:-1, :-1]
    tr = theta[:-1, 1:]
    br = theta[1:, 1:]
    bl = theta[1:, :-1]
    total = (
        _wrap_half_turn(tr - tl)
        + _wrap_half_turn(br - tr)
        + _wrap_half_turn(bl - br)
        + _wrap_half_turn(tl - bl)
    )
    return total / (2 * np.pi)


def detect_core(of: OrientationField, mask: ForegroundMask) -> CorePoint:
    bits = mask.bits
    if not bits.any():
        raise EmptyForeground("mask has no foreground pixels")
    b = of.block
    fg = block_foreground(bits, b)
    if fg.shape != of.theta.shape:
        raise ShapeMismatch("orientation field and mask come from different images")
    if of.rows >= 2 and of.cols >= 2:
        index = poincare_indices(of.theta)
        loop_fg = fg[:-1, :-1] & fg[:-1, 1:] & fg[1:, :-1] & fg[1:, 1:]
        candidates = loop_fg & (np.abs(index) >= 0.25)
        if candidates.any():
            gap = np.where(candidates, np.abs(index - 0.5), np.inf)
            i, j = np.unravel_index(np.argmin(gap), gap.shape)
            # the loop centre is the corner shared by its four blocks
            x = min(float((j + 1) * b), mask.width - 1.0)
            y = min(float((i + 1) * b), mask.height - 1.0)
            return CorePoint(x, y, CoreKind.POINCARE)
    ys, xs = np.nonzero(bits)
    return CorePoint(float(xs.mean()), float(ys.mean()), CoreKind.CENTROID_FALLBACK)


def gradient_energy(img: GrayImage) -> np.ndarray:
    """Per-pixel Sobel energy, min-max scaled to [0, 1]."""
    gx, gy = sobel_gradients(img.pixels)
    e = gx * gx + gy * gy
    lo, hi = e.min(), e.max()
    if hi <= 0:
        return np.zeros_like(e)
    if hi == lo:
        return np.ones_like(e)
    return (e - lo) / (hi - lo)


def default_sigma(width: int, height: int) -> float:
    return float(np.hypot(width, height)) / 4.0


def to_surface(img: GrayImage, of: OrientationField, core: CorePoint, sigma: float | None = None) -> WeightedSurface:
    if sigma is None:
        sigma = default_sigma(img.width, img.height)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    e_norm = gradient_energy(img)
    b = of.block
    coh = np.repeat(np.repeat(of.coherence, b, axis=0), b, axis=1)[: img.height, : img.width]
    ys, xs = np.mgrid[0 : img.height, 0 : img.width]
    d2 = (xs - core.x) ** 2 + (ys - core.y) ** 2
    z = e_norm * coh * np.exp(-d2 / (2.0 * sigma * sigma))
    z = np.clip(z, 0.0, 1.0)
    z.setflags(write=False)
    return WeightedSurface(z, core, float(sigma))


def surface_to_image(surface: WeightedSurface) -> GrayImage:
    """Debug rendering of the surface as an 8-bit raster (weights x 255)."""
    return GrayImage(np.rint(surface.z * 255.0).astype(np.uint8))
