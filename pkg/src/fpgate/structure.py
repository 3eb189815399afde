"""Ridge skeleton features: binarization, thinning, minutiae and curve/line counts."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imaging import ForegroundMask, GrayImage, block_view, pad_to_blocks

EIGHT = np.ones((3, 3), dtype=bool)

# clockwise ring starting north: N, NE, E, SE, S, SW, W, NW as (dy, dx)
RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
# walking order when tracing: edge neighbours first, then corners
WALK = RING[0::2] + RING[1::2]


class MinutiaKind(str, enum.Enum):
    ENDING = "E"
    BIFURCATION = "B"


@dataclass(frozen=True)
class Minutia:
    x: int
    y: int
    theta: float  # ridge direction in [0, 2pi), image coordinates (y down)
    kind: MinutiaKind


@dataclass(frozen=True)
class StructureConfig:
    block: int = 16
    smooth_sigma: float = 1.0
    border: int = 8
    curvature_threshold: float = 0.15
    count_cap: float = 64.0
    distance_cap: float = 64.0
    trace_length: int = 5


@dataclass(frozen=True, eq=False)
class StructuralFeature:
    minutiae: tuple[Minutia, ...]
    n_curves: int
    n_lines: int
    embed: np.ndarray = field(default_factory=lambda: np.zeros(5))

    @property
    def n_endings(self) -> int:
        return sum(m.kind is MinutiaKind.ENDING for m in self.minutiae)

    @property
    def n_bifurcations(self) -> int:
        return sum(m.kind is MinutiaKind.BIFURCATION for m in self.minutiae)

    def __eq__(self, other):
        if not isinstance(other, StructuralFeature):
            return NotImplemented
        return (
            self.minutiae == other.minutiae
            and self.n_curves == other.n_curves
            and self.n_lines == other.n_lines
            and self.embed.tobytes() == other.embed.tobytes()
        )

    def __hash__(self):
        return hash((self.minutiae, self.n_curves, self.n_lines))


def binarize(img: GrayImage, mask: ForegroundMask, block: int = 16, pixels: np.ndarray | None = None) -> np.ndarray:
    """Ridge map: dark pixels (below their block mean) inside the finger mask.

    ``pixels`` lets callers binarize a pre-filtered float copy of ``img``.
    """
    px = img.pixels.astype(np.float64) if pixels is None else np.asarray(pixels, dtype=np.float64)
    if mask.bits.shape != px.shape:
        raise ValueError("mask and image dimensions differ")
    h, w = px.shape
    padded = pad_to_blocks(px, block)
    means = block_view(padded, block).mean(axis=2)
    mean_px = np.repeat(np.repeat(means, block, axis=0), block, axis=1)[:h, :w]
    return (px < mean_px) & mask.bits


def _neighbours(img: np.ndarray) -> list[np.ndarray]:
    """The eight ring neighbours of every pixel, zero outside the grid."""
    p = np.pad(img, 1)
    h, w = img.shape
    return [p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w] for dy, dx in RING]


def _zs_candidates(img: np.ndarray, step: int) -> np.ndarray:
    n = [a.astype(np.int8) for a in _neighbours(img)]
    p2, p3, p4, p5, p6, p7, p8, p9 = n
    b = sum(n)
    a = sum(((n[i] == 0) & (n[(i + 1) % 8] == 1)).astype(np.int8) for i in range(8))
    if step == 0:
        c1 = p2 * p4 * p6 == 0
        c2 = p4 * p6 * p8 == 0
    else:
        c1 = p2 * p4 * p8 == 0
        c2 = p2 * p6 * p8 == 0
    return img & (b >= 2) & (b <= 6) & (a == 1) & c1 & c2


def _zs_deletable(img: np.ndarray, y: int, x: int, step: int) -> bool:
    h, w = img.shape
    n = [int(0 <= y + dy < h and 0 <= x + dx < w and img[y + dy, x + dx]) for dy, dx in RING]
    b = sum(n)
    a = sum(n[i] == 0 and n[(i + 1) % 8] == 1 for i in range(8))
    p2, p4, p6, p8 = n[0], n[2], n[4], n[6]
    if step == 0:
        extra = p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
    else:
        extra = p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
    return 2 <= b <= 6 and a == 1 and extra


def _same_topology(before: np.ndarray, after: np.ndarray) -> bool:
    lab0, n0 = ndimage.label(before, structure=EIGHT)
    _, n1 = ndimage.label(after, structure=EIGHT)
    if n0 != n1:
        return False
    return len(np.unique(lab0[after])) == n0


def thin(bin_grid) -> np.ndarray:
    """Zhang-Suen thinning to a fixpoint.

    Each sub-iteration deletes its candidates in parallel. When a parallel pass
    would delete or split a component (2x2 squares, two-pixel diagonals), that
    pass is replayed sequentially in raster order instead, which only ever
    removes simple points.
    """
    img = np.array(bin_grid, dtype=bool, copy=True)
    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            cand = _zs_candidates(img, step)
            if not cand.any():
                continue
            after = img & ~cand
            if not _same_topology(img, after):
                after = img.copy()
                for y, x in zip(*np.nonzero(cand)):
                    if _zs_deletable(after, y, x, step):
                        after[y, x] = False
            if not np.array_equal(after, img):
                img = after
                changed = True
    return img


def crossing_numbers(skeleton) -> np.ndarray:
    """Half the number of 0/1 transitions around each pixel's 8-neighbourhood."""
    n = [a.astype(np.int8) for a in _neighbours(np.asarray(skeleton, dtype=bool))]
    total = sum(np.abs(n[i] - n[(i + 1) % 8]) for i in range(8))
    return total // 2


def _boundary_distance(region: np.ndarray) -> np.ndarray:
    """Euclidean distance to the nearest non-region pixel; off-grid counts as outside."""
    return ndimage.distance_transform_edt(np.pad(region, 1))[1:-1, 1:-1]


def _trace(skel: np.ndarray, first: tuple[int, int], visited: set, steps: int):
    h, w = skel.shape
    y, x = first
    visited.add(first)
    walked = 1
    while walked < steps:
        for dy, dx in WALK:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and skel[ny, nx] and (ny, nx) not in visited:
                visited.add((ny, nx))
                y, x = ny, nx
                walked += 1
                break
        else:
            break
    return y, x


def _angle(dy: float, dx: float) -> float:
    return math.atan2(dy, dx) % (2 * math.pi)


def _branch_starts(skel: np.ndarray, y: int, x: int) -> list[tuple[int, int]]:
    """One entry pixel per run of set ring neighbours, preferring edge neighbours."""
    h, w = skel.shape
    bits = [0 <= y + dy < h and 0 <= x + dx < w and bool(skel[y + dy, x + dx]) for dy, dx in RING]
    if all(bits):
        return []
    first_zero = bits.index(False)
    runs, current = [], []
    for k in range(1, 9):
        i = (first_zero + k) % 8
        if bits[i]:
            current.append(i)
        elif current:
            runs.append(current)
            current = []
    if current:
        runs.append(current)
    starts = []
    for run in runs:
        edge = [i for i in run if i % 2 == 0]
        i = edge[0] if edge else run[0]
        starts.append((y + RING[i][0], x + RING[i][1]))
    return starts


def _minutia_direction(skel: np.ndarray, y: int, x: int, cn: int, steps: int) -> float:
    starts = _branch_starts(skel, y, x)
    if not starts:
        return 0.0
    visited = {(y, x), *starts}
    ends = [_trace(skel, s, visited, steps) for s in starts]
    angles = [_angle(ey - y, ex - x) for ey, ex in ends]
    if cn == 1 or len(ends) < 3:
        ey, ex = ends[0]
        return _angle(y - ey, x - ex)
    # the stem is the branch pointing away from the other two
    def gap(a, b):
        d = abs(a - b) % (2 * math.pi)
        return min(d, 2 * math.pi - d)

    spread = [sum(gap(angles[i], angles[j]) for j in range(len(angles)) if j != i) for i in range(len(angles))]
    stem = int(np.argmax(spread))
    ey, ex = ends[stem]
    return _angle(y - ey, x - ex)


def extract_minutiae(
    skeleton, border: int = 8, mask: ForegroundMask | None = None, trace_length: int = 5
) -> list[Minutia]:
    """Crossing-number minutiae (CN 1 endings, CN 3 bifurcations) in raster order."""
    skel = np.asarray(skeleton, dtype=bool)
    cn = crossing_numbers(skel)
    region = np.ones_like(skel) if mask is None else mask.bits
    keep = skel & ((cn == 1) | (cn == 3))
    if border > 0:
        keep &= _boundary_distance(region) > border
    out = []
    for y, x in zip(*np.nonzero(keep)):
        kind = MinutiaKind.ENDING if cn[y, x] == 1 else MinutiaKind.BIFURCATION
        theta = _minutia_direction(skel, int(y), int(x), int(cn[y, x]), trace_length)
        out.append(Minutia(int(x), int(y), theta, kind))
    return out


def _step_turning(path: list[tuple[int, int]]) -> float:
    total = 0.0
    prev = None
    for (y0, x0), (y1, x1) in zip(path, path[1:]):
        a = math.atan2(y1 - y0, x1 - x0)
        if prev is not None:
            d = (a - prev + math.pi) % (2 * math.pi) - math.pi
            total += abs(d)
        prev = a
    return total


def _component_turning(skel: np.ndarray, pixels: list[tuple[int, int]]) -> float:
    """Mean absolute turning angle per pixel along a deterministic walk."""
    members = set(pixels)

    def degree(p):
        return sum((p[0] + dy, p[1] + dx) in members for dy, dx in RING)

    order = sorted(pixels)
    ends = [p for p in order if degree(p) == 1]
    visited: set = set()
    total = 0.0
    ei = oi = 0
    while len(visited) < len(pixels):
        # walks start at the first unvisited endpoint, else the first unvisited pixel
        while ei < len(ends) and ends[ei] in visited:
            ei += 1
        while order[oi] in visited:
            oi += 1
        cur = ends[ei] if ei < len(ends) else order[oi]
        path = [cur]
        visited.add(cur)
        while True:
            for dy, dx in WALK:
                nxt = (cur[0] + dy, cur[1] + dx)
                if nxt in members and nxt not in visited:
                    break
            else:
                break
            visited.add(nxt)
            path.append(nxt)
            cur = nxt
        total += _step_turning(path)
    return total / len(pixels)


def ridge_shape_stats(skeleton, curvature_threshold: float = 0.15) -> tuple[int, int]:
    """Count skeleton components as curves (mean turning above threshold) or lines."""
    skel = np.asarray(skeleton, dtype=bool)
    labels, n = ndimage.label(skel, structure=EIGHT)
    curves = lines = 0
    if n == 0:
        return 0, 0
    ys, xs = np.nonzero(labels)
    comp = labels[ys, xs]
    order = np.argsort(comp, kind="stable")
    bounds = np.searchsorted(comp[order], np.arange(1, n + 2))
    for c in range(n):
        idx = order[bounds[c] : bounds[c + 1]]
        pixels = list(zip(ys[idx].tolist(), xs[idx].tolist()))
        if _component_turning(skel, pixels) > curvature_threshold:
            curves += 1
        else:
            lines += 1
    return curves, lines


def mean_nearest_distance(minutiae) -> float:
    if len(minutiae) < 2:
        return 0.0
    pts = np.array([(m.x, m.y) for m in minutiae], dtype=np.float64)
    d = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).mean())


def embed_counts(n_curves, n_lines, n_endings, n_bifurcations, nn_distance, cfg: StructureConfig) -> np.ndarray:
    raw = np.array([n_curves, n_lines, n_endings, n_bifurcations], dtype=np.float64) / cfg.count_cap
    vec = np.append(raw, nn_distance / cfg.distance_cap)
    return np.clip(vec, 0.0, 1.0)


def structural_feature(img: GrayImage, mask: ForegroundMask, cfg: StructureConfig = StructureConfig()) -> StructuralFeature:
    px = img.pixels.astype(np.float64)
    if cfg.smooth_sigma > 0:
        px = ndimage.gaussian_filter(px, cfg.smooth_sigma, mode="nearest")
    skel = thin(binarize(img, mask, cfg.block, pixels=px))
    minutiae = tuple(extract_minutiae(skel, cfg.border, mask, cfg.trace_length))
    n_curves, n_lines = ridge_shape_stats(skel, cfg.curvature_threshold)
    n_end = sum(m.kind is MinutiaKind.ENDING for m in minutiae)
    embed = embed_counts(n_curves, n_lines, n_end, len(minutiae) - n_end, mean_nearest_distance(minutiae), cfg)
    embed.setflags(write=False)
    return StructuralFeature(minutiae, n_curves, n_lines, embed)
