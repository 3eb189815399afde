"""Haar wavelet analysis and the perceptron that picks which subband statistics to keep."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ShapeMismatch
from .surface3d import WeightedSurface

HIST_BINS = 16
DEFAULT_LEVELS = 3
DEFAULT_K = 12
DEFAULT_HIDDEN = 8
DEFAULT_SELECTOR_SEED = 42


@dataclass(frozen=True, eq=False)
class SubbandPyramid:
    details: tuple  # per level (finest first): (LH, HL, HH)
    ll: np.ndarray
    shape: tuple[int, int]  # original, unpadded grid shape

    @property
    def levels(self) -> int:
        return len(self.details)

    def subbands(self) -> list[np.ndarray]:
        """All subbands in canonical order: LH, HL, HH per level, then LL."""
        out = [band for level in self.details for band in level]
        out.append(self.ll)
        return out


def dwt2(grid, levels: int = DEFAULT_LEVELS) -> SubbandPyramid:
    """Separable orthonormal Haar analysis, recursing on LL."""
    x = np.asarray(grid, dtype=np.float64)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if x.ndim != 2 or x.size == 0:
        raise ShapeMismatch("dwt2 needs a non-empty 2-D grid")
    shape = x.shape
    m = 1 << levels
    x = np.pad(x, ((0, -shape[0] % m), (0, -shape[1] % m)), mode="edge")
    details = []
    for _ in range(levels):
        a = x[0::2, 0::2]
        b = x[0::2, 1::2]
        c = x[1::2, 0::2]
        d = x[1::2, 1::2]
        ll = (a + b + c + d) / 2
        lh = (a + b - c - d) / 2
        hl = (a - b + c - d) / 2
        hh = (a - b - c + d) / 2
        details.append((lh, hl, hh))
        x = ll
    return SubbandPyramid(tuple(details), x, shape)


def idwt2(pyr: SubbandPyramid) -> np.ndarray:
    ll = pyr.ll
    for lh, hl, hh in reversed(pyr.details):
        out = np.empty((ll.shape[0] * 2, ll.shape[1] * 2))
        out[0::2, 0::2] = (ll + lh + hl + hh) / 2
        out[0::2, 1::2] = (ll + lh - hl - hh) / 2
        out[1::2, 0::2] = (ll - lh + hl - hh) / 2
        out[1::2, 1::2] = (ll - lh - hl + hh) / 2
        ll = out
    h, w = pyr.shape
    return ll[:h, :w]


# --- multilayer perceptron ---------------------------------------------------


def _logistic(v):
    return expit(v)


@dataclass(eq=False)
class Mlp:
    """Fully connected logistic network; ``weights[i]`` has shape (out, in)."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeMismatch(f"layer {i} input does not chain with layer {i - 1}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def same_as(self, other: "Mlp") -> bool:
        return self.layer_sizes == other.layer_sizes and all(
            np.array_equal(a, b) for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )


def init_mlp(layer_sizes: Sequence[int], seed: int) -> Mlp:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, from a seeded generator."""
    if len(layer_sizes) < 2 or any(n < 1 for n in layer_sizes):
        raise ShapeMismatch(f"bad layer sizes {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return Mlp(weights, biases)


def mlp_forward(net: Mlp, x) -> np.ndarray:
    """Forward pass for one vector or a batch of row vectors."""
    a = np.asarray(x, dtype=np.float64)
    if a.shape[-1] != net.weights[0].shape[1]:
        raise ShapeMismatch(f"input has {a.shape[-1]} features, net expects {net.weights[0].shape[1]}")
    for w, b in zip(net.weights, net.biases):
        a = _logistic(a @ w.T + b)
    return a


def _loss(net: Mlp, xs: np.ndarray, ys: np.ndarray) -> float:
    diff = mlp_forward(net, xs) - ys
    return float(np.mean(np.sum(diff * diff, axis=1)))


def train_mlp(
    samples,
    labels,
    epochs: int,
    rate: float,
    seed: int,
    hidden: Sequence[int] = (DEFAULT_HIDDEN,),
    net: Mlp | None = None,
) -> Mlp:
    """Per-sample SGD backpropagation on squared error.

    Deterministic for a given seed: the same generator draws the initial
    weights (unless ``net`` is given) and then one shuffle per epoch. The
    snapshot with the lowest training loss seen at epoch boundaries is
    returned, so the result never scores worse than the starting point.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    xs = np.asarray(samples, dtype=np.float64)
    ys = np.asarray(labels, dtype=np.float64)
    if ys.ndim == 1:
        ys = ys[:, None]
    if xs.ndim != 2 or len(xs) != len(ys) or len(xs) == 0:
        raise ShapeMismatch(f"{xs.shape} samples vs {ys.shape} labels")
    rng = np.random.default_rng(seed)
    if net is None:
        sizes = [xs.shape[1], *hidden, ys.shape[1]]
        net = init_mlp(sizes, int(rng.integers(2**63)))
    else:
        net = net.copy()
    if net.layer_sizes[0] != xs.shape[1] or net.layer_sizes[-1] != ys.shape[1]:
        raise ShapeMismatch("net does not fit the training data")

    best, best_loss = net.copy(), _loss(net, xs, ys)
    ws, bs = net.weights, net.biases
    for _ in range(epochs):
        for i in rng.permutation(len(xs)):
            acts = [xs[i]]
            for w, b in zip(ws, bs):
                acts.append(_logistic(w @ acts[-1] + b))
            out = acts[-1]
            delta = (out - ys[i]) * out * (1.0 - out)
            for layer in range(len(ws) - 1, -1, -1):
                grad_w = np.outer(delta, acts[layer])
                if layer:
                    prev = acts[layer]
                    next_delta = (ws[layer].T @ delta) * prev * (1.0 - prev)
                ws[layer] -= rate * grad_w
                bs[layer] -= rate * delta
                if layer:
                    delta = next_delta
        loss = _loss(net, xs, ys)
        if loss < best_loss:
            best, best_loss = net.copy(), loss
    return best


def dump_mlp(net: Mlp) -> str:
    """``MLP1`` text form: layer sizes, then per layer its weight rows and bias row."""
    lines = ["MLP1", " ".join(str(n) for n in net.layer_sizes)]
    for w, b in zip(net.weights, net.biases):
        for row in w:
            lines.append(" ".join(format(v, ".17g") for v in row))
        lines.append(" ".join(format(v, ".17g") for v in b))
    return "\n".join(lines) + "\n"


def parse_mlp(text: str) -> Mlp:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "MLP1":
        raise ValueError("not an MLP1 document")
    try:
        sizes = [int(t) for t in lines[1].split()]
        pos = 2
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            rows = [[float(t) for t in lines[pos + r].split()] for r in range(n_out)]
            pos += n_out
            bias = [float(t) for t in lines[pos].split()]
            pos += 1
            w = np.array(rows, dtype=np.float64).reshape(n_out, n_in)
            weights.append(w)
            biases.append(np.array(bias, dtype=np.float64).reshape(n_out))
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed MLP1 document: {exc}") from None
    return Mlp(weights, biases)


# --- feature construction ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class WaveletFeature:
    vector: np.ndarray
    selected: tuple[int, ...] = field(default=())

    def __eq__(self, other):
        if not isinstance(other, WaveletFeature):
            return NotImplemented
        return self.vector.shape == other.vector.shape and self.vector.tobytes() == other.vector.tobytes()

    def __hash__(self):
        return hash(self.vector.tobytes())


def n_subbands(levels: int) -> int:
    return 3 * levels + 1


def feature_length(levels: int) -> int:
    return 2 * n_subbands(levels)


def _entropy(band: np.ndarray) -> float:
    mag = np.abs(band).ravel()
    peak = mag.max() if mag.size else 0.0
    if peak <= 0:
        return 0.0
    bins = np.minimum((mag / peak * HIST_BINS).astype(np.int64), HIST_BINS - 1)
    p = np.bincount(bins, minlength=HIST_BINS) / mag.size
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def subband_stats(pyr: SubbandPyramid) -> np.ndarray:
    """Interleaved ``[energy share, magnitude entropy]`` for every subband."""
    bands = pyr.subbands()
    energy = np.array([float(np.sum(b * b)) for b in bands])
    total = energy.sum()
    share = energy / total if total > 0 else np.zeros_like(energy)
    out = np.empty(2 * len(bands))
    out[0::2] = share
    out[1::2] = [_entropy(b) for b in bands]
    return out


def stat_descriptors(stats: np.ndarray) -> np.ndarray:
    """Rows of ``[statistic, one-hot subband id]`` for the selector net."""
    nb = len(stats) // 2
    desc = np.zeros((len(stats), 1 + nb))
    desc[:, 0] = stats
    desc[np.arange(len(stats)), 1 + np.arange(len(stats)) // 2] = 1.0
    return desc


def default_selector(levels: int = DEFAULT_LEVELS) -> Mlp:
    return init_mlp([1 + n_subbands(levels), DEFAULT_HIDDEN, 1], DEFAULT_SELECTOR_SEED)


def select_top(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best scores, ties going to the lower index, ascending."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    return np.sort(order[:k])


def wavelet_feature(
    surface: WeightedSurface, net: Mlp | None = None, levels: int = DEFAULT_LEVELS, k: int = DEFAULT_K
) -> WaveletFeature:
    if net is None:
        net = default_selector(levels)
    stats = subband_stats(dwt2(surface.z, levels))
    if not 1 <= k <= len(stats):
        raise ValueError(f"k must lie in [1, {len(stats)}]")
    scores = mlp_forward(net, stat_descriptors(stats))[:, 0]
    keep = select_top(scores, k)
    vec = np.zeros_like(stats)
    vec[keep] = stats[keep]
    norm = np.sqrt(np.dot(vec, vec))
    if norm > 0:
        vec = vec / norm
    vec.setflags(write=False)
    return WaveletFeature(vec, tuple(int(i) for i in keep))
