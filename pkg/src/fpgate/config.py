"""``key = value`` configuration files mapped onto the pipeline dataclasses."""

from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

from .matcher import GaConfig, MatchConfig
from .pipeline import PipelineConfig
from .quality import QualityConfig
from .structure import StructureConfig

# config key -> (section, field, converter)
_KEYS = {
    "norm_mean": (None, "norm_mean", float),
    "norm_var": (None, "norm_var", float),
    "sigma": (None, "sigma", float),
    "levels": (None, "levels", int),
    "k": (None, "k", int),
    "block": ("quality", "block", int),
    "var_threshold": ("quality", "var_threshold", float),
    "min_foreground": ("quality", "min_foreground", float),
    "min_contrast": ("quality", "min_contrast", float),
    "min_coherence": ("quality", "min_coherence", float),
    "struct_block": ("structure", "block", int),
    "smooth_sigma": ("structure", "smooth_sigma", float),
    "border": ("structure", "border", int),
    "curvature_threshold": ("structure", "curvature_threshold", float),
    "count_cap": ("structure", "count_cap", float),
    "distance_cap": ("structure", "distance_cap", float),
    "population": ("ga", "population", int),
    "generations": ("ga", "generations", int),
    "crossover_rate": ("ga", "crossover_rate", float),
    "mutation_rate": ("ga", "mutation_rate", float),
    "elite": ("ga", "elite", int),
    "ga_seed": ("ga", "seed", int),
    "pair_radius": ("ga", "pair_radius", float),
    "pair_angle_deg": ("ga", "pair_angle", lambda v: math.radians(float(v))),
    "max_shift": ("ga", ("max_dx", "max_dy"), float),
    "max_rot_deg": ("ga", "max_dtheta", lambda v: math.radians(float(v))),
    "threshold": ("match", "threshold", float),
}
# keys consumed by the CLI itself rather than the pipeline
EXTRA_KEYS = {"mlp", "sink", "alert_rejects", "alert_window", "w_struct", "w_wavelet", "w_embed"}


def read_config(path) -> dict[str, list[str]]:
    """Parse a config file; repeated keys accumulate in order."""
    values: dict[str, list[str]] = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS and key not in EXTRA_KEYS:
            raise ValueError(f"{path}:{n}: unknown key {key!r}")
        values.setdefault(key, []).append(value)
    return values


def build_config(values: dict[str, list[str]], base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    top: dict = {}
    parts: dict = {"quality": {}, "structure": {}, "ga": {}, "match": {}}
    for key, vals in values.items():
        if key not in _KEYS:
            continue
        section, name, conv = _KEYS[key]
        value = conv(vals[-1])
        target = top if section is None else parts[section]
        for n in name if isinstance(name, tuple) else (name,):
            target[n] = value
    weights = [values.get(k, [None])[-1] for k in ("w_struct", "w_wavelet", "w_embed")]
    if any(w is not None for w in weights):
        defaults = base.match.weights
        parts["match"]["weights"] = tuple(float(w) if w is not None else d for w, d in zip(weights, defaults))
    ga: GaConfig = replace(base.match.ga, **parts["ga"])
    match: MatchConfig = replace(base.match, ga=ga, **parts["match"])
    quality: QualityConfig = replace(base.quality, **parts["quality"])
    structure: StructureConfig = replace(base.structure, **parts["structure"])
    return replace(base, quality=quality, structure=structure, match=match, **top)
