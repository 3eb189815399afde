import numpy as np

from fpgate.imaging import GrayImage
from fpgate.pipeline import PipelineConfig, build_template, extract
from fpgate.surface3d import CoreKind


def test_rejected_capture_stops_early():
    feats = extract(GrayImage(np.zeros((128, 128), np.uint8)))
    assert not feats.report.accepted
    assert feats.surface is None and feats.wavelet is None and feats.structural is None
    report, t = build_template(GrayImage(np.zeros((128, 128), np.uint8)), "x")
    assert t is None and not report.accepted


def test_full_pipeline_is_deterministic(synth_image):
    a = extract(synth_image)
    b = extract(synth_image)
    assert a.core == b.core and a.core.kind is CoreKind.POINCARE
    assert a.surface.z.tobytes() == b.surface.z.tobytes()
    assert a.wavelet.vector.tobytes() == b.wavelet.vector.tobytes()
    assert a.structural == b.structural


def test_template_fields(synth_image):
    report, t = build_template(synth_image, "alice", access_mask=5, created=1234)
    assert (t.id, t.created, t.access_mask) == ("alice", 1234, 5)
    assert t.quality == report.mean_coherence
    assert abs(np.linalg.norm(t.wavelet.vector) - 1.0) < 1e-9


def test_config_reaches_stages(synth_image):
    cfg = PipelineConfig(k=20)
    _, t = build_template(synth_image, "a", cfg, created=0)
    assert t.wavelet.selected == tuple(range(20))
