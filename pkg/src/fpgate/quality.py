"""Capture-quality gate: block orientation field and the morphology checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imaging import BLOCK_SIZES, GrayImage, block_view, foreground_ratio, segment

LOW_FOREGROUND = "LOW_FOREGROUND"
LOW_CONTRAST = "LOW_CONTRAST"
LOW_COHERENCE = "LOW_COHERENCE"


@dataclass(frozen=True, eq=False)
class OrientationField:
    block: int
    theta: np.ndarray  # (rows, cols) ridge angle in [0, pi)
    coherence: np.ndarray  # (rows, cols) in [0, 1]

    @property
    def rows(self) -> int:
        return self.theta.shape[0]

    @property
    def cols(self) -> int:
        return self.theta.shape[1]


@dataclass(frozen=True)
class QualityConfig:
    block: int = 16
    var_threshold: float = 200.0
    min_foreground: float = 0.25
    min_contrast: float = 15.0
    min_coherence: float = 0.35


@dataclass(frozen=True)
class QualityReport:
    foreground_ratio: float
    mean_contrast: float
    mean_coherence: float
    reasons: tuple[str, ...] = field(default=())

    @property
    def accepted(self) -> bool:
        return not self.reasons


def sobel_gradients(px: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sobel derivatives along x (columns) and y (rows), edge-replicated."""
    px = np.asarray(px, dtype=np.float64)
    gx = ndimage.sobel(px, axis=1, mode="nearest")
    gy = ndimage.sobel(px, axis=0, mode="nearest")
    return gx, gy


def _block_sums(arr: np.ndarray, block: int) -> np.ndarray:
    h, w = arr.shape
    padded = np.pad(arr, ((0, -h % block), (0, -w % block)))
    return block_view(padded, block).sum(axis=2)


def orientation_field(img: GrayImage, block: int = 16) -> OrientationField:
    """Least-squares block orientation from Sobel gradients."""
    if block not in BLOCK_SIZES:
        raise ValueError(f"block must be one of {BLOCK_SIZES}")
    gx, gy = sobel_gradients(img.pixels)
    sxx = _block_sums(gx * gx, block)
    syy = _block_sums(gy * gy, block)
    sxy = _block_sums(gx * gy, block)
    energy = sxx + syy
    num = 2.0 * sxy
    den = sxx - syy
    flat = energy <= 0
    safe = np.where(flat, 1.0, energy)
    coherence = np.where(flat, 0.0, np.hypot(num, den) / safe)
    # ridges run orthogonal to the dominant gradient
    theta = np.mod(0.5 * np.arctan2(num, den) + np.pi / 2, np.pi)
    theta = np.where(flat, 0.0, theta)
    theta = np.where(theta >= np.pi, 0.0, theta)
    return OrientationField(block, theta, np.clip(coherence, 0.0, 1.0))


def block_foreground(bits: np.ndarray, block: int) -> np.ndarray:
    """Per-block foreground flags for a pixel mask (majority vote per block)."""
    counts = _block_sums(bits.astype(np.float64), block)
    # partial border blocks vote over their real pixels only
    real = _block_sums(np.ones(bits.shape), block)
    return counts * 2 > real


def assess(img: GrayImage, cfg: QualityConfig = QualityConfig()) -> QualityReport:
    mask = segment(img, cfg.block, cfg.var_threshold)
    ratio = foreground_ratio(mask)
    fg_px = img.pixels[mask.bits].astype(np.float64)
    contrast = float(fg_px.std()) if fg_px.size else 0.0
    of = orientation_field(img, cfg.block)
    fg_blocks = block_foreground(mask.bits, cfg.block)
    coherence = float(of.coherence[fg_blocks].mean()) if fg_blocks.any() else 0.0
    reasons = []
    if ratio < cfg.min_foreground:
        reasons.append(LOW_FOREGROUND)
    if contrast < cfg.min_contrast:
        reasons.append(LOW_CONTRAST)
    if coherence < cfg.min_coherence:
        reasons.append(LOW_COHERENCE)
    return QualityReport(ratio, contrast, coherence, tuple(reasons))
