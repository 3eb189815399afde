"""Raw raster handling: binary PGM I/O, normalization and block segmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadDimensions, BadMagic, Truncated, UnsupportedDepth

MIN_SIDE = 32
BLOCK_SIZES = (8, 16, 32)

_WHITESPACE = b" \t\n\r\v\f"


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale raster stored as a read-only ``(height, width)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise BadDimensions(f"expected a non-empty 2-D raster, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.array(px, dtype=np.uint8, copy=True)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


@dataclass(frozen=True, eq=False)
class ForegroundMask:
    """Boolean finger-area mask, ``True`` where the finger is."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool, copy=True)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ForegroundMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.bits.shape, self.bits.tobytes()))


def foreground_ratio(mask: ForegroundMask) -> float:
    return float(mask.bits.mean())


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos : pos + 1] not in _WHITESPACE and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise Truncated("header ended early")
    return data[start:pos], pos


def load_pgm(data: bytes, min_side: int = MIN_SIDE) -> GrayImage:
    """Parse a binary (P5) PGM with maxval 255."""
    if not data:
        raise Truncated("empty input")
    if data[:2] != b"P5":
        raise BadMagic(f"expected P5 magic, got {data[:2]!r}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _next_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise BadMagic(f"malformed header field {tok!r}") from None
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedDepth(f"only maxval 255 is supported, got {maxval}")
    if width < min_side or height < min_side:
        raise BadDimensions(f"{width}x{height} is smaller than {min_side}x{min_side}")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or data[pos : pos + 1] not in _WHITESPACE:
        raise Truncated("missing raster")
    pos += 1
    need = width * height
    raster = data[pos : pos + need]
    if len(raster) < need:
        raise Truncated(f"expected {need} pixel bytes, found {len(raster)}")
    return GrayImage(np.frombuffer(raster, dtype=np.uint8).reshape(height, width))


def save_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def read_pgm(path, min_side: int = MIN_SIDE) -> GrayImage:
    with open(path, "rb") as fh:
        return load_pgm(fh.read(), min_side=min_side)


def write_pgm(path, img: GrayImage) -> None:
    with open(path, "wb") as fh:
        fh.write(save_pgm(img))


def normalize(img: GrayImage, target_mean: float = 128.0, target_var: float = 2000.0) -> GrayImage:
    """Affine mean/variance normalization, rounded and clamped to [0, 255]."""
    if not 0 <= target_mean <= 255 or target_var < 0:
        raise ValueError("target_mean must be in [0, 255] and target_var >= 0")
    px = img.pixels.astype(np.float64)
    mean = px.mean()
    var = px.var()
    if var == 0:
        out = np.full(px.shape, target_mean)
    else:
        out = target_mean + (px - mean) * np.sqrt(target_var / var)
    return GrayImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def pad_to_blocks(arr: np.ndarray, block: int) -> np.ndarray:
    h, w = arr.shape
    ph = -h % block
    pw = -w % block
    if ph or pw:
        arr = np.pad(arr, ((0, ph), (0, pw)), mode="edge")
    return arr


def block_view(arr: np.ndarray, block: int) -> np.ndarray:
    """Reshape a block-aligned array to ``(rows, cols, block*block)``."""
    h, w = arr.shape
    rows, cols = h // block, w // block
    return arr.reshape(rows, block, cols, block).swapaxes(1, 2).reshape(rows, cols, block * block)


def segment(img: GrayImage, block: int = 16, var_threshold: float = 200.0) -> ForegroundMask:
    """Mark every block whose intensity variance reaches ``var_threshold``."""
    if block not in BLOCK_SIZES:
        raise ValueError(f"block must be one of {BLOCK_SIZES}")
    padded = pad_to_blocks(img.pixels.astype(np.float64), block)
    fg = block_view(padded, block).var(axis=2) >= var_threshold
    bits = np.repeat(np.repeat(fg, block, axis=0), block, axis=1)
    return ForegroundMask(bits[: img.height, : img.width])
