"""Synthetic fingerprints and the FAR/FRR evaluation and calibration harness."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import ndimage, signal

from .errors import CalibrationSaturated, InsufficientData
from .imaging import GrayImage
from .matcher import MatchConfig, match

RIDGE_PERIOD = 8.0
ORIENTATION_BINS = 16
GABOR_ITERATIONS = 8


@dataclass(frozen=True)
class SynthSpec:
    subjects: int = 20
    impressions: int = 5
    seed: int = 42
    size: int = 128
    noise_sigma: float = 12.0
    max_shift: float = 8.0
    max_rot: float = math.radians(10.0)

    def __post_init__(self):
        if self.subjects < 1 or self.impressions < 1:
            raise ValueError("subjects and impressions must be positive")
        if self.size < 64:
            raise ValueError("size must be at least 64")
        if self.noise_sigma < 0 or self.max_shift < 0 or self.max_rot < 0:
            raise ValueError("distortion parameters must be non-negative")


def _gabor_bank(period: float, bins: int) -> list[np.ndarray]:
    s = 0.5 * period
    r = int(math.ceil(2.5 * s))
    ys, xs = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    env = np.exp(-(xs * xs + ys * ys) / (2 * s * s))
    bank = []
    for q in range(bins):
        phi = q * math.pi / bins
        # oscillate across the ridge direction (cos phi, sin phi)
        across = -xs * math.sin(phi) + ys * math.cos(phi)
        k = env * np.cos(2 * math.pi * across / period)
        k -= k.mean()
        bank.append(k / np.abs(k).sum())
    return bank


def _orientation_map(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    """Zero-pole ridge orientation with a planted core, an optional delta and smooth warping."""
    c = (n - 1) / 2.0
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    core = np.array([c, c]) + rng.uniform(-size / 10, size / 10, size=2)
    theta = 0.5 * np.arctan2(ys - core[1], xs - core[0])
    if rng.random() < 0.5:
        delta = core + np.array([rng.uniform(-size / 6, size / 6), rng.uniform(0.35, 0.5) * size])
        theta -= 0.5 * np.arctan2(ys - delta[1], xs - delta[0])
    theta += rng.uniform(-0.3, 0.3)
    for _ in range(3):
        fx, fy = rng.uniform(-1, 1, size=2) * 2 * math.pi / (1.5 * size)
        theta += rng.uniform(0.05, 0.2) * np.sin(fx * xs + fy * ys + rng.uniform(0, 2 * math.pi))
    return np.mod(theta, math.pi)


@lru_cache(maxsize=64)
def _subject_canvas(spec: SynthSpec, subject: int) -> np.ndarray:
    """Noise-free master rendering of one subject, larger than the crop."""
    rng = np.random.default_rng([spec.seed, subject])
    margin = int(math.ceil(spec.size * 0.25))
    n = spec.size + 2 * margin
    theta = _orientation_map(rng, n, spec.size)
    which = np.rint(theta / (math.pi / ORIENTATION_BINS)).astype(np.int64) % ORIENTATION_BINS
    bank = _gabor_bank(RIDGE_PERIOD, ORIENTATION_BINS)
    field = rng.standard_normal((n, n))
    for _ in range(GABOR_ITERATIONS):
        out = np.empty_like(field)
        for q, kernel in enumerate(bank):
            sel = which == q
            if sel.any():
                out[sel] = signal.fftconvolve(field, kernel, mode="same")[sel]
        field = np.clip(out / (out.std() + 1e-12) * 1.5, -1.0, 1.0)
    ridges = 128.0 - 96.0 * field

    # elliptical finger pad with a soft edge over a light background
    c = (n - 1) / 2.0 + rng.uniform(-spec.size / 20, spec.size / 20, size=2)
    ax = spec.size * rng.uniform(0.40, 0.46)
    ay = spec.size * rng.uniform(0.46, 0.54)
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    rho = np.sqrt(((xs - c[0]) / ax) ** 2 + ((ys - c[1]) / ay) ** 2)
    pad = np.clip((1.0 - rho) * min(ax, ay) / 4.0, 0.0, 1.0)
    background = 225.0
    canvas = background + pad * (ridges - background)
    canvas.setflags(write=False)
    return canvas


def _crop(canvas: np.ndarray, size: int) -> np.ndarray:
    m = (canvas.shape[0] - size) // 2
    return canvas[m : m + size, m : m + size]


def base_pattern(spec: SynthSpec, subject: int) -> GrayImage:
    canvas = _subject_canvas(spec, subject)
    return GrayImage(np.clip(np.rint(_crop(canvas, spec.size)), 0, 255).astype(np.uint8))


def impression_pose(spec: SynthSpec, subject: int, impression: int) -> tuple[float, float, float]:
    """Seeded (shift x, shift y, rotation) applied to one impression."""
    rng = np.random.default_rng([spec.seed, subject, impression + 1])
    sx, sy = rng.uniform(-1.0, 1.0, size=2) * spec.max_shift
    rot = rng.uniform(-1.0, 1.0) * spec.max_rot
    return float(sx), float(sy), float(rot)


def synth_fingerprint(spec: SynthSpec, subject: int, impression: int) -> GrayImage:
    if not (0 <= subject < spec.subjects and 0 <= impression < spec.impressions):
        raise IndexError("subject or impression outside the spec")
    canvas = _subject_canvas(spec, subject)
    sx, sy, rot = impression_pose(spec, subject, impression)
    if sx or sy or rot:
        c, s = math.cos(rot), math.sin(rot)
        # ndimage works in (row, col); output p samples input at M^-1 (p - ctr - shift) + ctr
        inv = np.array([[c, -s], [s, c]])
        ctr = np.array([(canvas.shape[0] - 1) / 2.0] * 2)
        shift = np.array([sy, sx])
        offset = ctr - inv @ (ctr + shift)
        canvas = ndimage.affine_transform(canvas, inv, offset=offset, order=1, mode="nearest")
    px = _crop(canvas, spec.size)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng([spec.seed, subject, impression + 1, 1])
        px = px + rng.normal(0.0, spec.noise_sigma, size=px.shape)
    return GrayImage(np.clip(np.rint(px), 0, 255).astype(np.uint8))


def synth_name(subject: int, impression: int) -> str:
    return f"s{subject}_i{impression}.pgm"


# --- evaluation ------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledTemplate:
    subject: int
    impression: int
    template: object


@dataclass(frozen=True, eq=False)
class EvalReport:
    genuine: np.ndarray
    impostor: np.ndarray
    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray
    eer: float
    target_far: float
    calibrated_threshold: float
    saturated: bool = False


def sweep_grid(sweep: int) -> np.ndarray:
    if sweep < 2:
        raise ValueError("sweep needs at least two points")
    return np.linspace(0.0, 1.0, sweep)


def error_rates(genuine, impostor, thresholds) -> tuple[np.ndarray, np.ndarray]:
    """FAR(t) = share of impostors scoring >= t; FRR(t) = share of genuines scoring < t."""
    gen = np.sort(np.asarray(genuine, dtype=np.float64))
    imp = np.sort(np.asarray(impostor, dtype=np.float64))
    t = np.asarray(thresholds, dtype=np.float64)
    far = (imp.size - np.searchsorted(imp, t, side="left")) / imp.size if imp.size else np.zeros_like(t)
    frr = np.searchsorted(gen, t, side="left") / gen.size if gen.size else np.zeros_like(t)
    return far, frr


def equal_error_rate(far: np.ndarray, frr: np.ndarray) -> float:
    """Interpolated crossing of the FAR and FRR curves along the sweep."""
    diff = far - frr
    zero = np.nonzero(diff == 0)[0]
    cross = np.nonzero((diff[:-1] > 0) & (diff[1:] < 0))[0]
    if zero.size and (not cross.size or zero[0] <= cross[0]):
        return float(far[zero[0]])
    if cross.size:
        k = cross[0]
        a = diff[k] / (diff[k] - diff[k + 1])
        return float(far[k] + a * (far[k + 1] - far[k]))
    k = int(np.argmin(np.abs(diff)))
    return float((far[k] + frr[k]) / 2.0)


def calibrate_rates(thresholds, far, target_far: float) -> tuple[float, bool]:
    """Smallest threshold whose FAR is within target, plus a saturation flag."""
    ok = np.nonzero(np.asarray(far) <= target_far)[0]
    if ok.size:
        return float(thresholds[ok[0]]), False
    return float(thresholds[-1]), True


def calibrate(report: EvalReport, target_far: float) -> float:
    if report.impostor.size == 0 and report.far.size == 0:
        raise InsufficientData("no impostor scores to calibrate against")
    t, saturated = calibrate_rates(report.thresholds, report.far, target_far)
    if saturated:
        warnings.warn(f"no threshold reaches FAR <= {target_far}; using {t:.6f}", CalibrationSaturated, stacklevel=2)
    return t


def report_from_scores(genuine, impostor, sweep: int = 1001, target_far: float = 0.01) -> EvalReport:
    gen = np.asarray(genuine, dtype=np.float64)
    imp = np.asarray(impostor, dtype=np.float64)
    if gen.size == 0 or imp.size == 0:
        raise InsufficientData("need at least one genuine and one impostor score")
    grid = sweep_grid(sweep)
    far, frr = error_rates(gen, imp, grid)
    cal, saturated = calibrate_rates(grid, far, target_far)
    return EvalReport(gen, imp, grid, far, frr, equal_error_rate(far, frr), target_far, cal, saturated)


def eval_pairs(gallery: Sequence[LabeledTemplate], probes: Sequence[LabeledTemplate] | None = None):
    """Fixed-order (stored, probe) pairs: all unordered gallery pairs, or gallery x probes."""
    if probes is None:
        return [(gallery[i], gallery[j]) for j in range(len(gallery)) for i in range(j)]
    return [
        (g, p) for g in gallery for p in probes if (g.subject, g.impression) != (p.subject, p.impression)
    ]


def _score_pair(args):
    stored, probe, cfg = args
    return match(probe.template, stored.template, cfg).fused


def run_eval(
    gallery: Sequence[LabeledTemplate],
    probes: Sequence[LabeledTemplate] | None = None,
    sweep: int = 1001,
    cfg: MatchConfig = MatchConfig(),
    target_far: float = 0.01,
    jobs: int = 1,
) -> EvalReport:
    """Score every genuine and impostor pair and tabulate FAR/FRR over the sweep.

    Pair scores are collected in the fixed pair order whatever ``jobs`` is, so
    the report does not depend on the worker count.
    """
    subjects = {g.subject for g in gallery} | {p.subject for p in probes or ()}
    if len(subjects) < 2:
        raise InsufficientData("evaluation needs at least two subjects")
    pairs = eval_pairs(gallery, probes)
    work = [(s, p, cfg) for s, p in pairs]
    if jobs > 1:
        from multiprocessing import get_context

        with get_context("spawn").Pool(jobs) as pool:
            scores = pool.map(_score_pair, work, chunksize=16)
    else:
        scores = [_score_pair(w) for w in work]
    genuine = [sc for (s, p), sc in zip(pairs, scores) if s.subject == p.subject]
    impostor = [sc for (s, p), sc in zip(pairs, scores) if s.subject != p.subject]
    return report_from_scores(genuine, impostor, sweep, target_far)


# --- EVR1 text format ------------------------------------------------------------


def dump_report(r: EvalReport) -> str:
    lines = ["EVR1", f"genuine={r.genuine.size}"]
    lines += [f"{v:.6f}" for v in r.genuine]
    lines.append(f"impostor={r.impostor.size}")
    lines += [f"{v:.6f}" for v in r.impostor]
    lines += [
        f"eer={r.eer:.6f}",
        f"target_far={r.target_far:.6f}",
        f"calibrated={r.calibrated_threshold:.6f}",
        f"saturated={int(r.saturated)}",
        f"table={r.thresholds.size}",
    ]
    lines += [f"{t:.6f},{a:.6f},{b:.6f}" for t, a, b in zip(r.thresholds, r.far, r.frr)]
    lines.append("end")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> EvalReport:
    lines = text.splitlines()
    pos = 0

    def take(key):
        nonlocal pos
        if pos >= len(lines) or not lines[pos].startswith(key + "="):
            raise ValueError(f"EVR1: expected '{key}=' on line {pos + 1}")
        value = lines[pos].split("=", 1)[1]
        pos += 1
        return value

    def block(n):
        nonlocal pos
        out = lines[pos : pos + n]
        if len(out) != n:
            raise ValueError("EVR1: truncated section")
        pos += n
        return out

    if not lines or lines[0] != "EVR1":
        raise ValueError("not an EVR1 report")
    pos = 1
    genuine = np.array([float(v) for v in block(int(take("genuine")))])
    impostor = np.array([float(v) for v in block(int(take("impostor")))])
    eer = float(take("eer"))
    target = float(take("target_far"))
    cal = float(take("calibrated"))
    saturated = bool(int(take("saturated")))
    rows = [tuple(float(v) for v in line.split(",")) for line in block(int(take("table")))]
    if pos >= len(lines) or lines[pos] != "end":
        raise ValueError("EVR1: missing end marker")
    table = np.array(rows, dtype=np.float64).reshape(-1, 3)
    return EvalReport(genuine, impostor, table[:, 0], table[:, 1], table[:, 2], eer, target, cal, saturated)


# --- selector training -------------------------------------------------------------


def fisher_labels(stats: np.ndarray, subjects: Sequence[int]) -> np.ndarray:
    """Per-statistic separability ``r / (1 + r)`` with ``r`` the between/within variance ratio."""
    stats = np.asarray(stats, dtype=np.float64)
    subj = np.asarray(subjects)
    groups = [stats[subj == s] for s in np.unique(subj)]
    if len(groups) < 2:
        raise InsufficientData("selector training needs at least two subjects")
    grand = stats.mean(axis=0)
    between = np.mean([(g.mean(axis=0) - grand) ** 2 for g in groups], axis=0)
    within = np.mean([g.var(axis=0) for g in groups], axis=0)
    r = between / np.maximum(within, 1e-12)
    return r / (1.0 + r)


def train_selector(images, subjects: Sequence[int], cfg=None, epochs: int = 200, rate: float = 0.5, seed: int = 42):
    """Fit the subband selector so it favours statistics that separate subjects.

    ``images`` are raw captures; those failing the quality gate are skipped.
    Each (statistic, subband) descriptor is labelled with its separability
    over the training set.
    """
    from .pipeline import PipelineConfig, extract
    from .wavelets import dwt2, stat_descriptors, subband_stats, train_mlp

    cfg = cfg or PipelineConfig()
    rows, kept = [], []
    for img, s in zip(images, subjects):
        feats = extract(img, cfg)
        if feats.surface is None:
            continue
        rows.append(subband_stats(dwt2(feats.surface.z, cfg.levels)))
        kept.append(s)
    stats = np.array(rows)
    labels = fisher_labels(stats, kept)
    xs = np.concatenate([stat_descriptors(r) for r in stats])
    ys = np.tile(labels, len(stats))
    return train_mlp(xs, ys, epochs, rate, seed)
