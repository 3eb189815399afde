import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpgate.errors import CorruptLayout, DuplicateId, UnknownId
from fpgate.store import (
    EventKind,
    EventRecord,
    Template,
    dump_template,
    open_store,
    parse_template,
)

from conftest import random_template


def test_empty_store(tmp_path):
    store = open_store(tmp_path / "db")
    assert store.list() == []
    st_ = store.stats()
    assert all(v == 0 for v in st_.counts.values())
    assert (st_.accept_rate, st_.score_mean, st_.score_std) == (0.0, 0.0, 0.0)
    assert (tmp_path / "db" / "templates").is_dir()
    assert (tmp_path / "db" / "events.log").is_file()


def test_enroll_get_round_trip(tmp_path):
    store = open_store(tmp_path)
    t = random_template(np.random.default_rng(0), "alice")
    store.enroll(t, ts=100)
    assert store.get("alice") == t
    assert open_store(tmp_path).list() == ["alice"]
    assert store.events() == [EventRecord(100, EventKind.ENROLL, "alice", None, f"access={t.access_mask}")]


def test_duplicate_and_overwrite(tmp_path, synth_templates):
    store = open_store(tmp_path)
    t = synth_templates[0, 0]
    store.enroll(t, ts=1)
    with pytest.raises(DuplicateId):
        store.enroll(t, ts=2)
    store.enroll(t, overwrite=True, ts=3)
    assert store.get(t.id) == t
    with pytest.raises(UnknownId):
        store.get("nobody")


def test_corrupt_template(tmp_path):
    store = open_store(tmp_path)
    (tmp_path / "templates" / "bad.fpt").write_text("not a template\n")
    with pytest.raises(CorruptLayout, match="bad.fpt"):
        open_store(tmp_path)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_floats_bit_exact(seed):
    t = random_template(np.random.default_rng(seed))
    back = parse_template(dump_template(t))
    assert back == t
    assert back.wavelet.vector.tobytes() == t.wavelet.vector.tobytes()
    assert [m.theta for m in back.structural.minutiae] == [m.theta for m in t.structural.minutiae]
    assert back.quality == t.quality


def test_fpt_layout(synth_templates):
    text = dump_template(synth_templates[0, 0])
    lines = text.split("\n")
    assert lines[0] == "FPT1"
    assert [l.split("=")[0] for l in lines[1:7]] == ["id", "created", "access", "quality", "wavelet", "minutiae"]
    n = int(lines[6].split("=")[1])
    assert all(l.startswith("m=") and l[-1] in "EB" for l in lines[7 : 7 + n])
    assert lines[7 + n].startswith("curves=") and lines[9 + n].startswith("embed=")
    assert lines[-2:] == ["end", ""]


def test_template_validation():
    rng = np.random.default_rng(1)
    t = random_template(rng)
    with pytest.raises(ValueError):
        Template("bad id", t.created, 0, t.quality, t.wavelet, t.structural)
    with pytest.raises(ValueError):
        Template("x" * 65, t.created, 0, t.quality, t.wavelet, t.structural)
    with pytest.raises(ValueError):
        Template("ok", t.created, 32, t.quality, t.wavelet, t.structural)
    seat_only = Template("ok", t.created, 0b00100, t.quality, t.wavelet, t.structural)
    assert [seat_only.grants(b) for b in range(5)] == [False, False, True, False, False]


def test_event_line_format():
    e = EventRecord(1700000000, EventKind.VERIFY_ACCEPT, "alice", 0.8123456, "verify")
    assert e.to_line() == "1700000000|VERIFY_ACCEPT|alice|0.812346|verify"
    assert EventRecord(5, EventKind.ALERT).to_line() == "5|ALERT|-|-|"
    assert EventRecord.from_line("5|ALERT|-|-|\n") == EventRecord(5, EventKind.ALERT)
    with pytest.raises(ValueError):
        EventRecord(1, EventKind.ALERT, "a|b")
    with pytest.raises(ValueError):
        EventRecord(1, "NOPE")


def test_stats_counts(tmp_path):
    store = open_store(tmp_path)
    for i, s in enumerate([0.9, 0.8, 0.95]):
        store.log_event(EventRecord(i, EventKind.VERIFY_ACCEPT, "a", s))
    store.log_event(EventRecord(3, EventKind.VERIFY_REJECT, "a", 0.3))
    st_ = store.stats()
    assert st_.accept_rate == 0.75
    assert st_.score_mean == pytest.approx(np.mean([0.9, 0.8, 0.95, 0.3]))
    assert st_.score_std == pytest.approx(np.std([0.9, 0.8, 0.95, 0.3]))


def test_stats_recount(tmp_path):
    store = open_store(tmp_path)
    rng = np.random.default_rng(7)
    kinds = list(EventKind)
    for i in range(200):
        k = kinds[int(rng.integers(len(kinds)))]
        score = float(rng.uniform()) if k in (EventKind.VERIFY_ACCEPT, EventKind.VERIFY_REJECT) else None
        store.log_event(EventRecord(i, k, f"s{rng.integers(5)}", score, "x"))
    counts, scores = {}, []
    for line in (tmp_path / "events.log").read_text().splitlines():
        ts, kind, subject, score, detail = line.split("|")
        counts[kind] = counts.get(kind, 0) + 1
        if score != "-":
            scores.append(float(score))
    st_ = store.stats()
    assert {k: v for k, v in st_.counts.items() if v} == counts
    acc, rej = counts.get("VERIFY_ACCEPT", 0), counts.get("VERIFY_REJECT", 0)
    assert st_.accept_rate == acc / (acc + rej)
    assert st_.score_mean == pytest.approx(np.mean(scores), abs=1e-12)
    assert st_.scored == len(scores)


def test_append_only(tmp_path):
    store = open_store(tmp_path)
    log = tmp_path / "events.log"
    before = b""
    for i in range(30):
        store.log_event(EventRecord(i, EventKind.VERIFY_REJECT, "a", 0.1, f"n{i}"))
        now = log.read_bytes()
        assert now.startswith(before) and len(now) > len(before)
        before = now


def test_list_sorted(tmp_path):
    store = open_store(tmp_path)
    rng = np.random.default_rng(3)
    for tid in ["zed", "Alpha", "bob", "a-1", "a_0"]:
        store.enroll(random_template(rng, tid), ts=0)
    assert store.list() == sorted(["zed", "Alpha", "bob", "a-1", "a_0"])


def test_calibration_file(tmp_path):
    store = open_store(tmp_path)
    assert store.calibrated_threshold() is None
    store.save_calibration(0.6614)
    assert store.calibrated_threshold() == 0.6614
