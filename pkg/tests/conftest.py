import numpy as np
import pytest

from fpgate.evaluation import SynthSpec, synth_fingerprint
from fpgate.imaging import GrayImage
from fpgate.pipeline import build_template


@pytest.fixture(scope="session")
def small_spec():
    return SynthSpec(subjects=3, impressions=2, seed=42)


@pytest.fixture(scope="session")
def synth_image(small_spec):
    return synth_fingerprint(small_spec, 0, 0)


@pytest.fixture(scope="session")
def synth_templates(small_spec):
    """Templates for every (subject, impression) of the small spec."""
    out = {}
    for s in range(small_spec.subjects):
        for i in range(small_spec.impressions):
            _, t = build_template(synth_fingerprint(small_spec, s, i), f"s{s}_i{i}", created=0)
            out[s, i] = t
    return out


def stripes(size=64, width=4, vertical=True):
    """Alternating dark/light stripes ``width`` pixels wide."""
    idx = np.arange(size) // width % 2 * 255
    grid = np.tile(idx, (size, 1))
    return GrayImage(grid if vertical else grid.T)


def random_minutiae(rng, n=30, size=128):
    """Independent uniform scatter of minutiae with random kinds and directions."""
    from fpgate.structure import Minutia, MinutiaKind

    out = []
    for _ in range(n):
        kind = MinutiaKind.ENDING if rng.random() < 0.5 else MinutiaKind.BIFURCATION
        out.append(Minutia(int(rng.integers(0, size)), int(rng.integers(0, size)), float(rng.uniform(0, 2 * np.pi)), kind))
    return out


def moved(minutiae, dx, dy, dtheta):
    """Rotate about the set's centroid by ``dtheta``, then shift by (dx, dy)."""
    from fpgate.structure import Minutia

    cx = np.mean([m.x for m in minutiae])
    cy = np.mean([m.y for m in minutiae])
    c, s = np.cos(dtheta), np.sin(dtheta)
    out = []
    for m in minutiae:
        rx, ry = m.x - cx, m.y - cy
        x = c * rx - s * ry + cx + dx
        y = s * rx + c * ry + cy + dy
        out.append(Minutia(float(x), float(y), float((m.theta + dtheta) % (2 * np.pi)), m.kind))
    return out


def random_template(rng, tid="t0"):
    """A template with random floats everywhere a float is stored."""
    from fpgate.store import Template
    from fpgate.structure import StructuralFeature
    from fpgate.wavelets import WaveletFeature

    vec = rng.normal(size=20) * 10.0 ** rng.integers(-30, 30, size=20)
    vec[rng.random(20) < 0.3] = 0.0
    minutiae = tuple(random_minutiae(rng, int(rng.integers(0, 40))))
    embed = rng.uniform(size=5)
    return Template(
        tid,
        int(rng.integers(0, 2**31)),
        int(rng.integers(0, 32)),
        float(rng.uniform()),
        WaveletFeature(vec, tuple(int(i) for i in np.nonzero(vec)[0])),
        StructuralFeature(minutiae, int(rng.integers(0, 50)), int(rng.integers(0, 50)), embed),
    )
