"""File-backed template store with an append-only event log.

Layout of a store directory::

    templates/<id>.fpt   one text file per enrolled template
    events.log           one ``ts|kind|subject|score|detail`` line per event
    calibration          optional ``threshold=<t>`` written by ``fpgate calibrate``
"""

from __future__ import annotations

import enum
import math
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptLayout, DuplicateId, IoFailure, UnknownId
from .structure import Minutia, MinutiaKind, StructuralFeature
from .wavelets import WaveletFeature

ID_PATTERN = re.compile(r"^[A-Za-z0-9_-]{1,64}$")
ACCESS_BITS = ("storage", "email_radio", "seat", "mirror", "climate")
MAX_ACCESS = (1 << len(ACCESS_BITS)) - 1


def fmt17(v: float) -> str:
    return format(float(v), ".17g")


@dataclass(frozen=True)
class Template:
    id: str
    created: int
    access_mask: int
    quality: float
    wavelet: WaveletFeature
    structural: StructuralFeature

    def __post_init__(self):
        if not ID_PATTERN.match(self.id):
            raise ValueError(f"invalid template id {self.id!r}")
        if not 0 <= self.access_mask <= MAX_ACCESS:
            raise ValueError(f"access mask must be in [0, {MAX_ACCESS}]")

    def grants(self, bit: int) -> bool:
        return bool(self.access_mask >> bit & 1)


class EventKind(str, enum.Enum):
    ENROLL = "ENROLL"
    VERIFY_ACCEPT = "VERIFY_ACCEPT"
    VERIFY_REJECT = "VERIFY_REJECT"
    QUALITY_REJECT = "QUALITY_REJECT"
    ALERT = "ALERT"


@dataclass(frozen=True)
class EventRecord:
    ts: int
    kind: EventKind
    subject: str = "-"
    score: float | None = None
    detail: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        for name in ("subject", "detail"):
            value = getattr(self, name)
            if "|" in value or "\n" in value or "\r" in value:
                raise ValueError(f"event {name} must not contain '|' or line breaks")

    def to_line(self) -> str:
        score = "-" if self.score is None else f"{self.score:.6f}"
        return f"{self.ts}|{self.kind.value}|{self.subject or '-'}|{score}|{self.detail}"

    @classmethod
    def from_line(cls, line: str) -> "EventRecord":
        parts = line.rstrip("\n").split("|")
        if len(parts) != 5:
            raise ValueError(f"bad event line {line!r}")
        ts, kind, subject, score, detail = parts
        return cls(int(ts), EventKind(kind), subject, None if score == "-" else float(score), detail)


# --- .fpt serialization ------------------------------------------------------


def dump_template(t: Template) -> str:
    lines = [
        "FPT1",
        f"id={t.id}",
        f"created={t.created}",
        f"access={t.access_mask}",
        f"quality={fmt17(t.quality)}",
        "wavelet=" + ",".join(fmt17(v) for v in t.wavelet.vector),
        f"minutiae={len(t.structural.minutiae)}",
    ]
    for m in t.structural.minutiae:
        lines.append(f"m={m.x},{m.y},{fmt17(m.theta)},{m.kind.value}")
    lines += [
        f"curves={t.structural.n_curves}",
        f"lines={t.structural.n_lines}",
        "embed=" + ",".join(fmt17(v) for v in t.structural.embed),
        "end",
    ]
    return "\n".join(lines) + "\n"


def _floats(text: str) -> np.ndarray:
    arr = np.array([float(v) for v in text.split(",")] if text else [], dtype=np.float64)
    arr.setflags(write=False)
    return arr


def parse_template(text: str) -> Template:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def take(key: str) -> str:
        nonlocal pos
        if pos >= len(lines) or not lines[pos].startswith(key + "="):
            raise ValueError(f"expected '{key}=' on line {pos + 1}")
        value = lines[pos][len(key) + 1 :]
        pos += 1
        return value

    if not lines or lines[0] != "FPT1":
        raise ValueError("missing FPT1 header")
    pos = 1
    tid = take("id")
    created = int(take("created"))
    access = int(take("access"))
    quality = float(take("quality"))
    vector = _floats(take("wavelet"))
    minutiae = []
    for _ in range(int(take("minutiae"))):
        x, y, theta, kind = take("m").split(",")
        minutiae.append(Minutia(int(x), int(y), float(theta), MinutiaKind(kind)))
    n_curves = int(take("curves"))
    n_lines = int(take("lines"))
    embed = _floats(take("embed"))
    if pos != len(lines) - 1 or lines[pos] != "end":
        raise ValueError("missing end marker")
    selected = tuple(int(i) for i in np.nonzero(vector)[0])
    return Template(
        tid,
        created,
        access,
        quality,
        WaveletFeature(vector, selected),
        StructuralFeature(tuple(minutiae), n_curves, n_lines, embed),
    )


# --- store handle ------------------------------------------------------------


@dataclass(frozen=True)
class StoreStats:
    counts: dict = field(default_factory=dict)
    accept_rate: float = 0.0
    score_mean: float = 0.0
    score_std: float = 0.0
    scored: int = 0


class Store:
    """Handle on a store directory. Single writer; readers may share the directory."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.templates_dir = self.root / "templates"
        self.events_path = self.root / "events.log"
        self.calibration_path = self.root / "calibration"

    def _template_path(self, tid: str) -> Path:
        return self.templates_dir / f"{tid}.fpt"

    def list(self) -> list[str]:
        return sorted(p.name[:-4] for p in self.templates_dir.iterdir() if p.name.endswith(".fpt"))

    def get(self, tid: str) -> Template:
        path = self._template_path(tid)
        if not ID_PATTERN.match(tid) or not path.is_file():
            raise UnknownId(tid)
        try:
            text = path.read_text(encoding="ascii")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        try:
            return parse_template(text)
        except ValueError as exc:
            raise CorruptLayout(f"{path}: {exc}") from exc

    def enroll(self, t: Template, overwrite: bool = False, ts: int | None = None) -> None:
        path = self._template_path(t.id)
        if path.exists() and not overwrite:
            raise DuplicateId(t.id)
        tmp = path.with_suffix(".fpt.tmp")
        try:
            tmp.write_text(dump_template(t), encoding="ascii", newline="\n")
            os.replace(tmp, path)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        self.log_event(EventRecord(int(time.time()) if ts is None else ts, EventKind.ENROLL, t.id, None, f"access={t.access_mask}"))

    def log_event(self, e: EventRecord) -> None:
        try:
            with open(self.events_path, "a", encoding="ascii", newline="\n") as fh:
                fh.write(e.to_line() + "\n")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    def events(self) -> list[EventRecord]:
        if not self.events_path.exists():
            return []
        with open(self.events_path, encoding="ascii") as fh:
            return [EventRecord.from_line(line) for line in fh if line.strip()]

    def stats(self) -> StoreStats:
        events = self.events()
        counts = {k.value: 0 for k in EventKind}
        scores = []
        for e in events:
            counts[e.kind.value] += 1
            if e.score is not None and e.kind in (EventKind.VERIFY_ACCEPT, EventKind.VERIFY_REJECT):
                scores.append(e.score)
        verdicts = counts["VERIFY_ACCEPT"] + counts["VERIFY_REJECT"]
        rate = counts["VERIFY_ACCEPT"] / verdicts if verdicts else 0.0
        mean = sum(scores) / len(scores) if scores else 0.0
        std = math.sqrt(sum((s - mean) ** 2 for s in scores) / len(scores)) if scores else 0.0
        return StoreStats(counts, rate, mean, std, len(scores))

    def calibrated_threshold(self) -> float | None:
        if not self.calibration_path.exists():
            return None
        for line in self.calibration_path.read_text(encoding="ascii").splitlines():
            if line.startswith("threshold="):
                return float(line.split("=", 1)[1])
        return None

    def save_calibration(self, threshold: float) -> None:
        self.calibration_path.write_text(f"threshold={threshold:.6f}\n", encoding="ascii")


def open_store(path) -> Store:
    """Create or validate a store directory and return its handle."""
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
        (root / "templates").mkdir(exist_ok=True)
        (root / "events.log").touch(exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    store = Store(root)
    for tid in store.list():
        try:
            parse_template(store._template_path(tid).read_text(encoding="ascii"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise CorruptLayout(f"{store._template_path(tid)}: {exc}") from exc
    return store
