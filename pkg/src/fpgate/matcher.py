"""Genetic rigid alignment of minutiae sets and fusion of the per-stage similarities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeMismatch
from .structure import Minutia, MinutiaKind

DEFAULT_THRESHOLD = 0.75
DEFAULT_WEIGHTS = (0.5, 0.35, 0.15)
_KIND_OFFSET = 1.0e6


def wrap_angle(a: float) -> float:
    """Wrap into (-pi, pi]."""
    a = math.fmod(a, 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    elif a > math.pi:
        a -= 2 * math.pi
    return a


@dataclass(frozen=True)
class RigidTransform:
    """Rotation by ``dtheta`` about a pivot, followed by a shift of (dx, dy).

    The pivot is the centroid of the set being moved unless a caller supplies one.
    """

    dx: float = 0.0
    dy: float = 0.0
    dtheta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "dtheta", wrap_angle(float(self.dtheta)))

    def inverse_about(self, center) -> tuple["RigidTransform", tuple[float, float]]:
        """Inverse map and the pivot it must be applied about."""
        cx, cy = center
        return RigidTransform(-self.dx, -self.dy, -self.dtheta), (cx + self.dx, cy + self.dy)


@dataclass(frozen=True)
class GaConfig:
    population: int = 64
    generations: int = 60
    crossover_rate: float = 0.9
    mutation_rate: float = 0.15
    elite: int = 2
    seed: int = 42
    pair_radius: float = 8.0
    pair_angle: float = math.pi / 6
    max_dx: float = 24.0
    max_dy: float = 24.0
    max_dtheta: float = math.pi / 6
    mutation_px: float = 2.0
    mutation_rad: float = math.radians(2.0)

    def __post_init__(self):
        if not 0 <= self.elite < self.population:
            raise ValueError("elite must be in [0, population)")
        if not (0 <= self.crossover_rate <= 1 and 0 <= self.mutation_rate <= 1):
            raise ValueError("rates must lie in [0, 1]")
        if self.generations < 0 or self.pair_radius <= 0:
            raise ValueError("generations must be >= 0 and pair_radius > 0")


@dataclass(frozen=True)
class MatchConfig:
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS
    threshold: float = DEFAULT_THRESHOLD
    ga: GaConfig = field(default_factory=GaConfig)

    def __post_init__(self):
        if len(self.weights) != 3 or any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ValueError("weights must be three non-negative numbers with a positive sum")


@dataclass(frozen=True)
class MatchScore:
    s_struct: float
    s_wavelet: float
    s_embed: float
    fused: float
    transform: RigidTransform
    accepted: bool


class _PointSet:
    """Columnar view of a minutiae list."""

    def __init__(self, minutiae: Sequence[Minutia]):
        self.n = len(minutiae)
        self.xy = np.array([(m.x, m.y) for m in minutiae], dtype=np.float64).reshape(self.n, 2)
        self.theta = np.array([m.theta for m in minutiae], dtype=np.float64)
        self.ending = np.array([m.kind is MinutiaKind.ENDING for m in minutiae], dtype=bool)
        # endings sort after bifurcations by offsetting their x beyond any window
        keyed = self.xy[:, 0] + self.ending * _KIND_OFFSET
        self.x_order = np.argsort(keyed, kind="stable")
        self.sorted_x = keyed[self.x_order]

    def centroid(self) -> np.ndarray:
        return self.xy.mean(axis=0) if self.n else np.zeros(2)


def _pair_batch(a: _PointSet, b: _PointSet, params: np.ndarray, center, radius: float, angle: float):
    """Greedy one-to-one pairing for a batch of transforms.

    ``params`` is ``(P, 3)`` rows of (dx, dy, dtheta). Returns pair counts and
    the summed pair distances. Pairs are taken nearest-first with ties broken
    by (probe index, gallery index); that order is realised as repeated rounds
    of mutual-nearest assignments over the sparse candidate list, which pick
    exactly the same pairs.
    """
    p = len(params)
    c, s = np.cos(params[:, 2]), np.sin(params[:, 2])
    rel = a.xy - center
    x = rel[:, 0][None, :] * c[:, None] - rel[:, 1][None, :] * s[:, None] + (center[0] + params[:, 0:1])
    y = rel[:, 0][None, :] * s[:, None] + rel[:, 1][None, :] * c[:, None] + (center[1] + params[:, 1:2])
    x, y = x.ravel(), y.ravel()
    # candidates: same-kind gallery minutiae inside each moved point's x-window,
    # read off b's (kind, x)-sorted order
    key = np.tile(a.ending, p) * _KIND_OFFSET
    lo = np.searchsorted(b.sorted_x, key + x - radius, side="left")
    cnt = np.searchsorted(b.sorted_x, key + x + radius, side="right") - lo
    src = np.repeat(np.arange(x.size), cnt)
    pos = np.arange(src.size) - np.repeat(np.cumsum(cnt) - cnt, cnt) + np.repeat(lo, cnt)
    bj = b.x_order[pos]
    dist = (x[src] - b.xy[bj, 0]) ** 2 + (y[src] - b.xy[bj, 1]) ** 2
    bi, ai = np.divmod(src, a.n)
    dth = np.abs(np.mod(a.theta[ai] + params[bi, 2] - b.theta[bj] + np.pi, 2 * np.pi) - np.pi)
    ok = (dist <= radius * radius) & (dth <= angle)
    bi, ai, bj, dist = bi[ok], ai[ok], bj[ok], dist[ok]
    order = np.lexsort((bj, ai, dist))
    bi, dist = bi[order], dist[order]
    row_key = bi * a.n + ai[order]
    col_key = bi * b.n + bj[order]

    pairs = np.zeros(p, dtype=np.int64)
    resid = np.zeros(p)
    row_taken = np.zeros(p * a.n, dtype=bool)
    col_taken = np.zeros(p * b.n, dtype=bool)
    while row_key.size:
        k = np.arange(row_key.size)
        row_first = np.full(p * a.n, row_key.size)
        np.minimum.at(row_first, row_key, k)
        col_first = np.full(p * b.n, row_key.size)
        np.minimum.at(col_first, col_key, k)
        mutual = (row_first[row_key] == k) & (col_first[col_key] == k)
        pairs += np.bincount(bi[mutual], minlength=p)
        resid += np.bincount(bi[mutual], weights=np.sqrt(dist[mutual]), minlength=p)
        row_taken[row_key[mutual]] = True
        col_taken[col_key[mutual]] = True
        keep = ~(row_taken[row_key] | col_taken[col_key])
        bi, dist, row_key, col_key = bi[keep], dist[keep], row_key[keep], col_key[keep]
    return pairs, resid


def _as_params(t: RigidTransform) -> np.ndarray:
    return np.array([[t.dx, t.dy, t.dtheta]], dtype=np.float64)


def pairing_score(
    a: Sequence[Minutia],
    b: Sequence[Minutia],
    t: RigidTransform,
    radius: float = 8.0,
    angle: float = math.pi / 6,
    center=None,
) -> float:
    """Fraction of minutiae paired after moving ``a`` by ``t``: pairs / max(|a|, |b|)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    pa, pb = _PointSet(a), _PointSet(b)
    if pa.n == 0 and pb.n == 0:
        return 1.0
    if pa.n == 0 or pb.n == 0:
        return 0.0
    pivot = pa.centroid() if center is None else np.asarray(center, dtype=np.float64)
    pairs, _ = _pair_batch(pa, pb, _as_params(t), pivot, radius, angle)
    return float(pairs[0]) / max(pa.n, pb.n)


def ga_align(a: Sequence[Minutia], b: Sequence[Minutia], cfg: GaConfig = GaConfig()) -> tuple[RigidTransform, float]:
    """Search rigid transforms of ``a`` onto ``b`` with a generational GA.

    Fitness is the pairing score; among equal scores, a smaller mean pair
    distance wins, so the optimum settles on the centre of its plateau. The
    identity joins the random initial population. Returns the best individual
    ever evaluated and its pairing score.
    """
    pa, pb = _PointSet(a), _PointSet(b)
    if pa.n == 0 or pb.n == 0:
        return RigidTransform(), pairing_score(a, b, RigidTransform(), cfg.pair_radius, cfg.pair_angle)
    center = pa.centroid()
    size = max(pa.n, pb.n)
    top_key = 1.0 + 0.5 / size

    def evaluate(params):
        pairs, resid = _pair_batch(pa, pb, params, center, cfg.pair_radius, cfg.pair_angle)
        mean_resid = np.where(pairs > 0, resid / np.maximum(pairs, 1), cfg.pair_radius)
        return pairs / size + (0.5 / size) * (1.0 - mean_resid / cfg.pair_radius)

    rng = np.random.default_rng(cfg.seed)
    bounds = np.array([cfg.max_dx, cfg.max_dy, cfg.max_dtheta])
    sigma = np.array([cfg.mutation_px, cfg.mutation_px, cfg.mutation_rad])
    pop = rng.uniform(-bounds, bounds, size=(cfg.population, 3))
    pop[0] = 0.0
    fit = evaluate(pop)
    best_i = int(np.argmax(fit))
    best, best_fit = pop[best_i].copy(), fit[best_i]

    n_child = cfg.population - cfg.elite
    idx = np.arange(n_child)
    for _ in range(cfg.generations):
        if best_fit >= top_key:
            break
        elite = np.argsort(-fit, kind="stable")[: cfg.elite]
        t1 = rng.integers(cfg.population, size=(n_child, 3))
        t2 = rng.integers(cfg.population, size=(n_child, 3))
        p1 = pop[t1[idx, np.argmax(fit[t1], axis=1)]]
        p2 = pop[t2[idx, np.argmax(fit[t2], axis=1)]]
        cross = rng.random(n_child) < cfg.crossover_rate
        blend = rng.uniform(-0.5, 1.5, size=(n_child, 3))
        child = np.where(cross[:, None], p1 + blend * (p2 - p1), p1)
        mutate = rng.random((n_child, 3)) < cfg.mutation_rate
        child = child + mutate * rng.normal(0.0, 1.0, size=(n_child, 3)) * sigma
        child = np.clip(child, -bounds, bounds)
        child_fit = evaluate(child)
        pop = np.vstack([pop[elite], child])
        fit = np.concatenate([fit[elite], child_fit])
        i = int(np.argmax(fit))
        if fit[i] > best_fit:
            best, best_fit = pop[i].copy(), fit[i]

    t = RigidTransform(*best.tolist())
    pairs, _ = _pair_batch(pa, pb, best[None, :], center, cfg.pair_radius, cfg.pair_angle)
    return t, float(pairs[0]) / size


def wavelet_similarity(u, v) -> float:
    """(1 + cosine) / 2; two zero vectors are identical, one zero vector shares nothing."""
    u = np.asarray(getattr(u, "vector", u), dtype=np.float64)
    v = np.asarray(getattr(v, "vector", v), dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeMismatch(f"feature lengths differ: {u.shape} vs {v.shape}")
    uu, vv = float(np.dot(u, u)), float(np.dot(v, v))
    if uu == 0 and vv == 0:
        return 1.0
    if uu == 0 or vv == 0:
        return 0.0
    cos = float(np.dot(u, v)) / math.sqrt(uu * vv)
    return (1.0 + min(1.0, max(-1.0, cos))) / 2.0


def embed_similarity(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1 or p.size == 0:
        raise ShapeMismatch(f"embed shapes differ: {p.shape} vs {q.shape}")
    d = float(np.sqrt(np.sum((p - q) ** 2)))
    return min(1.0, max(0.0, 1.0 - d / math.sqrt(p.size)))


def fuse(scores: Sequence[float], weights: Sequence[float]) -> float:
    num = 0.0
    den = 0.0
    for w, s in zip(weights, scores):
        num += w * s
        den += w
    return min(1.0, num / den)


def match(probe, stored, cfg: MatchConfig = MatchConfig()) -> MatchScore:
    """Score a probe template against a stored one."""
    t, s_struct = ga_align(probe.structural.minutiae, stored.structural.minutiae, cfg.ga)
    s_wav = wavelet_similarity(probe.wavelet, stored.wavelet)
    s_emb = embed_similarity(probe.structural.embed, stored.structural.embed)
    fused = fuse((s_struct, s_wav, s_emb), cfg.weights)
    return MatchScore(s_struct, s_wav, s_emb, fused, t, fused >= cfg.threshold)
