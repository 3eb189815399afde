"""``fpgate`` command line: enroll, verify, identify, synth, eval, calibrate, quality, stats."""

from __future__ import annotations

import argparse
import math
import os
import re
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

from . import evaluation
from .config import build_config, read_config
from .errors import CalibrationSaturated, EmptyGallery, FpgateError, StoreError
from .imaging import GrayImage, read_pgm, write_pgm
from .matcher import DEFAULT_THRESHOLD, match
from .pipeline import PipelineConfig, build_template, extract
from .quality import QualityReport
from .store import EventKind, EventRecord, open_store
from .telemetry import AlertRule, Sink, alert_event, dispatch, observe, replay
from .wavelets import default_selector, dump_mlp, parse_mlp

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_ERROR = 2
EXIT_QUALITY = 3

_SYNTH_NAME = re.compile(r"^s(\d+)_i(\d+)\.pgm$")


class _Context:
    def __init__(self, args):
        self.args = args
        self.values = read_config(args.config) if args.config else {}
        self.cfg: PipelineConfig = build_config(self.values)
        mlp = self.values.get("mlp", [None])[-1]
        self.net = parse_mlp(Path(mlp).read_text()) if mlp else default_selector(self.cfg.levels)

    def value(self, key, default=None):
        return self.values.get(key, [default])[-1]

    def threshold(self, store=None) -> float:
        if getattr(self.args, "threshold", None) is not None:
            return self.args.threshold
        if "threshold" in self.values:
            return float(self.value("threshold"))
        if store is not None:
            cal = store.calibrated_threshold()
            if cal is not None:
                return cal
        return DEFAULT_THRESHOLD


def _print_quality(report: QualityReport) -> None:
    print(
        f"foreground={report.foreground_ratio:.6f} contrast={report.mean_contrast:.6f} "
        f"coherence={report.mean_coherence:.6f}"
    )
    print("quality=ACCEPT" if report.accepted else "quality=REJECT reasons=" + ",".join(report.reasons))


def _now() -> int:
    return int(time.time())


def _db(args) -> str:
    db = args.db or os.environ.get("FPGATE_DB")
    if not db:
        raise FpgateError("no store given: pass --db or set FPGATE_DB")
    return db


def cmd_enroll(ctx: _Context) -> int:
    args = ctx.args
    store = open_store(_db(args))
    img = read_pgm(args.image)
    report, template = build_template(img, args.id, ctx.cfg, ctx.net, args.access, created=_now())
    if template is None:
        _print_quality(report)
        store.log_event(EventRecord(_now(), EventKind.QUALITY_REJECT, args.id, None, ",".join(report.reasons)))
        return EXIT_QUALITY
    store.enroll(template, overwrite=args.overwrite)
    s = template.structural
    print(f"enrolled={template.id}")
    print(
        f"minutiae={len(s.minutiae)} endings={s.n_endings} bifurcations={s.n_bifurcations} "
        f"curves={s.n_curves} lines={s.n_lines}"
    )
    print(f"access={template.access_mask} quality={template.quality:.6f}")
    return EXIT_OK


def _alert_on(ctx: _Context, store, history: list[EventRecord], event: EventRecord) -> None:
    """Feed ``event`` to the alert rule after replaying the subject's earlier events."""
    rule = AlertRule(int(ctx.value("alert_rejects", 3)), int(ctx.value("alert_window", 60)))
    state, _ = replay(history, rule)
    alert = observe(state, event, rule)
    if alert is None:
        return
    store.log_event(alert_event(alert))
    print(f"alert={alert.line()}")
    sinks = [Sink.parse(s) for s in ctx.values.get("sink", [])]
    sinks += [Sink.parse(s) for s in ctx.args.sink or []]
    if sinks:
        for result in dispatch(alert, sinks):
            if not result.ok:
                print(f"SinkUnreachable: {result.error}", file=sys.stderr)


def cmd_verify(ctx: _Context) -> int:
    args = ctx.args
    store = open_store(_db(args))
    stored = store.get(args.id)
    report, probe = build_template(read_pgm(args.image), args.id, ctx.cfg, ctx.net, created=_now())
    if probe is None:
        _print_quality(report)
        store.log_event(EventRecord(_now(), EventKind.QUALITY_REJECT, args.id, None, ",".join(report.reasons)))
        return EXIT_QUALITY
    mcfg = replace(ctx.cfg.match, threshold=ctx.threshold(store))
    m = match(probe, stored, mcfg)
    print(f"id={args.id}")
    print(f"score={m.fused:.6f}")
    print(f"struct={m.s_struct:.6f} wavelet={m.s_wavelet:.6f} embed={m.s_embed:.6f}")
    print(f"threshold={mcfg.threshold:.6f} decision={'ACCEPT' if m.accepted else 'REJECT'}")
    kind = EventKind.VERIFY_ACCEPT if m.accepted else EventKind.VERIFY_REJECT
    history = [e for e in store.events() if e.subject == args.id]
    last = max((e.ts for e in history), default=0)
    event = EventRecord(max(_now(), last), kind, args.id, m.fused, "verify")
    store.log_event(event)
    _alert_on(ctx, store, history, event)
    return EXIT_OK if m.accepted else EXIT_REJECT


def cmd_identify(ctx: _Context) -> int:
    args = ctx.args
    store = open_store(_db(args))
    ids = store.list()
    if not ids:
        raise EmptyGallery("the store has no templates")
    report, probe = build_template(read_pgm(args.image), "probe", ctx.cfg, ctx.net, created=_now())
    if probe is None:
        _print_quality(report)
        return EXIT_QUALITY
    threshold = ctx.threshold(store)
    best_id, best = None, -1.0
    for tid in ids:
        score = match(probe, store.get(tid), ctx.cfg.match).fused
        if score > best:
            best_id, best = tid, score
    accepted = best >= threshold
    print(f"best={best_id}")
    print(f"score={best:.6f}")
    print(f"threshold={threshold:.6f} decision={'ACCEPT' if accepted else 'REJECT'}")
    return EXIT_OK if accepted else EXIT_REJECT


def _synth_spec(args) -> evaluation.SynthSpec:
    d = evaluation.SynthSpec()
    return evaluation.SynthSpec(
        subjects=args.subjects,
        impressions=args.impressions,
        seed=args.seed,
        size=args.size if args.size is not None else d.size,
        noise_sigma=args.noise if args.noise is not None else d.noise_sigma,
        max_shift=args.max_shift if args.max_shift is not None else d.max_shift,
        max_rot=math.radians(args.max_rot) if args.max_rot is not None else d.max_rot,
    )


def write_synth_tree(spec: evaluation.SynthSpec, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in range(spec.subjects):
        for i in range(spec.impressions):
            path = out / evaluation.synth_name(s, i)
            write_pgm(path, evaluation.synth_fingerprint(spec, s, i))
            paths.append(path)
    return paths


def cmd_synth(ctx: _Context) -> int:
    spec = _synth_spec(ctx.args)
    paths = write_synth_tree(spec, Path(ctx.args.out))
    print(f"images={len(paths)} subjects={spec.subjects} impressions={spec.impressions} seed={spec.seed}")
    return EXIT_OK


def load_tree(data: Path) -> list[tuple[int, int, GrayImage]]:
    """Every ``s<subject>_i<impression>.pgm`` in ``data``, in (subject, impression) order."""
    found = []
    for p in data.iterdir():
        m = _SYNTH_NAME.match(p.name)
        if m:
            found.append((int(m.group(1)), int(m.group(2)), p))
    found.sort()
    return [(s, i, read_pgm(p)) for s, i, p in found]


def cmd_eval(ctx: _Context) -> int:
    args = ctx.args
    cfg = ctx.cfg
    if args.seed is not None:
        cfg = replace(cfg, match=replace(cfg.match, ga=replace(cfg.match.ga, seed=args.seed)))
    tree = load_tree(Path(args.data))
    net = ctx.net
    if args.train_mlp:
        net = evaluation.train_selector([img for _, _, img in tree], [s for s, _, _ in tree], cfg)
        Path(args.train_mlp).write_text(dump_mlp(net))
    labeled = []
    for s, i, img in tree:
        _, t = build_template(img, f"s{s}_i{i}", cfg, net, created=0)
        if t is None:
            print(f"skipped=s{s}_i{i} (quality)", file=sys.stderr)
        else:
            labeled.append(evaluation.LabeledTemplate(s, i, t))
    report = evaluation.run_eval(labeled, None, args.sweep, cfg.match, args.target_far, args.jobs)
    Path(args.report).write_text(evaluation.dump_report(report))
    print(f"templates={len(labeled)} genuine={report.genuine.size} impostor={report.impostor.size}")
    print(f"eer={report.eer:.6f}")
    print(f"calibrated={report.calibrated_threshold:.6f} target_far={report.target_far:.6f}")
    return EXIT_OK


def cmd_calibrate(ctx: _Context) -> int:
    args = ctx.args
    report = evaluation.parse_report(Path(args.report).read_text())
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CalibrationSaturated)
        t = evaluation.calibrate(report, args.target_far)
    for w in caught:
        print(f"CalibrationSaturated: {w.message}", file=sys.stderr)
    print(f"threshold={t:.6f}")
    if args.db or os.environ.get("FPGATE_DB"):
        open_store(_db(args)).save_calibration(t)
    return EXIT_OK


def cmd_quality(ctx: _Context) -> int:
    feats = extract(read_pgm(ctx.args.image), ctx.cfg, ctx.net)
    _print_quality(feats.report)
    if not feats.report.accepted:
        return EXIT_QUALITY
    print(f"core={feats.core.x:.1f},{feats.core.y:.1f} kind={feats.core.kind.value}")
    print(f"minutiae={len(feats.structural.minutiae)}")
    return EXIT_OK


def cmd_stats(ctx: _Context) -> int:
    st = open_store(_db(ctx.args)).stats()
    for kind, n in st.counts.items():
        print(f"{kind}={n}")
    print(f"accept_rate={st.accept_rate:.6f} score_mean={st.score_mean:.6f} score_std={st.score_std:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpgate", description="Fingerprint enrollment and verification.")
    parser.add_argument("--config", help="key=value config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enroll", help="quality-gate an image and store its template")
    p.add_argument("--db")
    p.add_argument("--id", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--access", type=int, default=31, help="5-bit access mask (default 31)")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("verify", help="match a probe against a claimed identity")
    p.add_argument("--db")
    p.add_argument("--id", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--sink", action="append", help="alert sink: file:PATH or http(s)://URL")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("identify", help="find the best-matching enrolled template")
    p.add_argument("--db")
    p.add_argument("--image", required=True)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("synth", help="write a synthetic fingerprint tree")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--impressions", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--size", type=int)
    p.add_argument("--noise", type=float, help="additive noise sigma (intensity)")
    p.add_argument("--max-shift", type=float, help="pixels")
    p.add_argument("--max-rot", type=float, help="degrees")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score all pairs of a synthetic tree and write an EVR1 report")
    p.add_argument("--data", required=True)
    p.add_argument("--sweep", type=int, default=1001)
    p.add_argument("--report", required=True)
    p.add_argument("--target-far", type=float, default=0.01)
    p.add_argument("--seed", type=int, help="GA seed (default 42)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--train-mlp", metavar="FILE", help="train the subband selector on the data first and save it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="pick the threshold meeting a target FAR")
    p.add_argument("--report", required=True)
    p.add_argument("--target-far", type=float, required=True)
    p.add_argument("--db", help="also store the threshold in this store")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("quality", help="run the capture-quality gate on one image")
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_quality)

    p = sub.add_parser("stats", help="event counts and score statistics of a store")
    p.add_argument("--db")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(_Context(args))
    except EmptyGallery as exc:
        print(f"EmptyGallery: {exc}", file=sys.stderr)
    except StoreError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
    except (FpgateError, OSError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
