"""Repeated-rejection alerting and delivery to file / HTTP notification sinks."""

from __future__ import annotations

import enum
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import FpgateError, OutOfOrderEvent
from .store import EventKind, EventRecord


class SinkUnreachable(FpgateError):
    pass


@dataclass(frozen=True)
class AlertRule:
    max_consecutive_rejects: int = 3
    window_seconds: int = 60

    def __post_init__(self):
        if self.max_consecutive_rejects < 1 or self.window_seconds < 1:
            raise ValueError("alert rule fields must be positive")


@dataclass(frozen=True)
class Alert:
    ts: int
    subject: str
    count: int
    detail: str

    def line(self) -> str:
        return f"ALERT|{self.ts}|{self.subject}|{self.count}|{self.detail}"


@dataclass
class _Streak:
    count: int = 0
    start: int = 0
    last_ts: int | None = None


@dataclass
class AlertState:
    """Per-subject rejection streaks; owned by a single thread."""

    streaks: dict = field(default_factory=dict)


def observe(state: AlertState, e: EventRecord, rule: AlertRule = AlertRule()) -> Alert | None:
    """Advance the streak for ``e.subject`` and return an alert when it completes.

    A streak is a run of VERIFY_REJECT events for one subject that all fall
    within ``window_seconds`` of its first reject. An accept, or a reject
    arriving after the window closed, starts over. The streak also restarts
    after it has raised an alert.
    """
    if e.kind not in (EventKind.VERIFY_ACCEPT, EventKind.VERIFY_REJECT):
        return None
    st = state.streaks.setdefault(e.subject, _Streak())
    if st.last_ts is not None and e.ts < st.last_ts:
        raise OutOfOrderEvent(f"{e.subject}: event at {e.ts} after {st.last_ts}")
    st.last_ts = e.ts
    if e.kind is EventKind.VERIFY_ACCEPT:
        st.count = 0
        return None
    if st.count and e.ts - st.start > rule.window_seconds:
        st.count = 0
    if st.count == 0:
        st.start = e.ts
    st.count += 1
    if st.count < rule.max_consecutive_rejects:
        return None
    count = st.count
    st.count = 0
    return Alert(e.ts, e.subject, count, f"{count} consecutive rejects within {rule.window_seconds}s")


def replay(events: Iterable[EventRecord], rule: AlertRule = AlertRule()) -> tuple[AlertState, list[Alert]]:
    state = AlertState()
    alerts = [a for a in (observe(state, e, rule) for e in events) if a is not None]
    return state, alerts


class SinkKind(str, enum.Enum):
    FILE = "FILE"
    HTTP_POST = "HTTP_POST"


@dataclass(frozen=True)
class Sink:
    kind: SinkKind
    target: str

    def __post_init__(self):
        object.__setattr__(self, "kind", SinkKind(self.kind))
        if not self.target:
            raise ValueError("sink target must be non-empty")

    @classmethod
    def parse(cls, spec: str) -> "Sink":
        """``http://...``/``https://...`` become HTTP sinks; ``file:PATH`` or a bare path a file sink."""
        if spec.startswith(("http://", "https://")):
            return cls(SinkKind.HTTP_POST, spec)
        return cls(SinkKind.FILE, spec[5:] if spec.startswith("file:") else spec)


@dataclass(frozen=True)
class SinkResult:
    sink: Sink
    ok: bool
    error: SinkUnreachable | None = None


def _deliver(alert: Alert, sink: Sink, timeout: float) -> SinkResult:
    body = alert.line() + "\n"
    try:
        if sink.kind is SinkKind.FILE:
            with open(Path(sink.target), "a", encoding="utf-8", newline="\n") as fh:
                fh.write(body)
        else:
            req = urllib.request.Request(
                sink.target,
                data=body.encode("utf-8"),
                method="POST",
                headers={"Content-Type": "text/plain; charset=utf-8"},
            )
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                if resp.status >= 300:
                    raise SinkUnreachable(f"{sink.target}: HTTP {resp.status}")
    except SinkUnreachable as exc:
        return SinkResult(sink, False, exc)
    except (OSError, urllib.error.URLError, ValueError) as exc:
        return SinkResult(sink, False, SinkUnreachable(f"{sink.target}: {exc}"))
    return SinkResult(sink, True)


def dispatch(alert: Alert, sinks: Sequence[Sink], timeout: float = 5.0) -> list[SinkResult]:
    """Send the alert line to every sink; one failing sink never stops the others."""
    if not sinks:
        raise ValueError("dispatch needs at least one sink")
    with ThreadPoolExecutor(max_workers=min(8, len(sinks))) as pool:
        return list(pool.map(lambda s: _deliver(alert, s, timeout), sinks))


def alert_event(alert: Alert) -> EventRecord:
    return EventRecord(alert.ts, EventKind.ALERT, alert.subject, None, alert.detail)
