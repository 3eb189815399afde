"""End-to-end feature extraction: quality gate, surface, wavelet and structural stages."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .imaging import GrayImage, normalize, segment
from .quality import QualityConfig, QualityReport, assess, orientation_field
from .store import Template
from .structure import StructuralFeature, StructureConfig, structural_feature
from .surface3d import CorePoint, WeightedSurface, detect_core, to_surface
from .wavelets import DEFAULT_K, DEFAULT_LEVELS, Mlp, WaveletFeature, default_selector, wavelet_feature
from .matcher import MatchConfig


@dataclass(frozen=True)
class PipelineConfig:
    norm_mean: float = 128.0
    norm_var: float = 2000.0
    quality: QualityConfig = field(default_factory=QualityConfig)
    sigma: float | None = None  # surface decay; None means a quarter of the diagonal
    levels: int = DEFAULT_LEVELS
    k: int = DEFAULT_K
    structure: StructureConfig = field(default_factory=StructureConfig)
    match: MatchConfig = field(default_factory=MatchConfig)


@dataclass(frozen=True)
class Features:
    report: QualityReport
    core: CorePoint | None = None
    surface: WeightedSurface | None = None
    wavelet: WaveletFeature | None = None
    structural: StructuralFeature | None = None


def extract(img: GrayImage, cfg: PipelineConfig = PipelineConfig(), net: Mlp | None = None) -> Features:
    """Run the quality gate and, if it passes, every feature stage."""
    report = assess(img, cfg.quality)
    if not report.accepted:
        return Features(report)
    if net is None:
        net = default_selector(cfg.levels)
    mask = segment(img, cfg.quality.block, cfg.quality.var_threshold)
    work = normalize(img, cfg.norm_mean, cfg.norm_var)
    of = orientation_field(work, cfg.quality.block)
    core = detect_core(of, mask)
    surface = to_surface(work, of, core, cfg.sigma)
    wav = wavelet_feature(surface, net, cfg.levels, cfg.k)
    struct = structural_feature(work, mask, cfg.structure)
    return Features(report, core, surface, wav, struct)


def build_template(
    img: GrayImage,
    tid: str,
    cfg: PipelineConfig = PipelineConfig(),
    net: Mlp | None = None,
    access_mask: int = 31,
    created: int | None = None,
) -> tuple[QualityReport, Template | None]:
    feats = extract(img, cfg, net)
    if not feats.report.accepted:
        return feats.report, None
    t = Template(
        tid,
        int(time.time()) if created is None else created,
        access_mask,
        feats.report.mean_coherence,
        feats.wavelet,
        feats.structural,
    )
    return feats.report, t
