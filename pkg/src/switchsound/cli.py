"""Command-line interface: ``switchsound <command> ...``.

Every command exits 0 only when the requested operation fully succeeded.
Failures print a single ``error:`` line on stderr.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .anomaly import LADDER_TARGET, TARGETS
from .config import load_config
from .dsp import apply_band_mask, read_wav
from .phase import PHASES, phase_table
from .pipeline import (
    Bundle,
    BundleError,
    Clock,
    InsufficientScoredEvents,
    Ledger,
    StageError,
    analyze_event,
    experiment_ladder,
    rolling_diagnosis,
    train_bundle,
)
from .plots import csv_text, ladder_plot, traces_plot, trend_plot, write_csv
from .synth import CorpusSpec, generate_corpus

log = logging.getLogger("switchsound")

LADDER_XLABEL = {
    "grease": "grease pushes",
    "adhesion": "adhesion bolt rotation [1/6 turns]",
    "lock": "lock-piece ratio (left side)",
}


class CommandError(Exception):
    pass


# --- commands -----------------------------------------------------------------


def cmd_synth_corpus(args) -> int:
    cfg = load_config(args.config)
    spec = CorpusSpec.load(args.spec)
    manifest = generate_corpus(spec, args.out, args.seed, cfg.synth)
    print(f"wrote {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    bundle = train_bundle(args.manifest, cfg, args.seed, out_dir=args.out)
    print(f"trained bundle {args.out} (config {bundle.config_hash[:12]})")
    for p in PHASES:
        print(f"  {p.name}: holdout {bundle.models[p].history['best_holdout']:.4f}")
    for t, v in bundle.thresholds.target.items():
        print(f"  threshold {t.value}: {v:.4f}")
    print(f"  screening threshold: {bundle.cleanliness.threshold:.4f}")
    return 0


def _expand(patterns: Sequence[str]) -> list[str]:
    files = []
    for pattern in patterns:
        matches = sorted(glob.glob(pattern))
        if not matches:
            if glob.has_magic(pattern):
                raise CommandError(f"no files match {pattern!r}")
            raise CommandError(f"file not found: {pattern}")
        files.extend(matches)
    return files


def _event_clock(index: int) -> Clock:
    # pinned clocks start one second apart per input so records stay ordered
    clock = Clock()
    if clock.epoch is not None:
        clock.epoch += index
    return clock


def _record_line(rec: dict) -> str:
    head = f"{rec['event_id']}: {rec['status']}"
    if "screening" in rec:
        head += f" screening={rec['screening']['verdict']} ({rec['screening']['distance']:.2f})"
    if "scores" in rec:
        head += " " + " ".join(
            f"{t}={v['verdict']}({v['score']:.3f})" for t, v in rec["scores"]["targets"].items()
        )
    if "persistence" in rec:
        flagged = [p for p, v in rec["persistence"].items() if v != "Normal"]
        if flagged:
            head += " persistence: " + ", ".join(f"{p}={rec['persistence'][p]}" for p in flagged)
    return head


def cmd_process(args) -> int:
    bundle = Bundle.load(args.bundle)
    live = load_config(args.config) if args.config else None
    if live is not None and live.hash() != bundle.config_hash:
        raise BundleError(
            f"config hash mismatch: {args.config} ({live.hash()[:12]}) vs bundle ({bundle.config_hash[:12]}); "
            "retrain the bundle or pass its config.toml"
        )
    files = _expand(args.wav)
    ledger = Ledger(args.ledger)
    jobs = max(1, args.jobs)

    def run(item):
        i, path = item
        return analyze_event(path, bundle, _event_clock(i))

    if jobs == 1:
        records = [run(item) for item in enumerate(files)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(run, enumerate(files)))
    failed = 0
    for path, rec in zip(files, records):
        rec = ledger.append(rec, k=bundle.config.pipeline.persistence_k)
        print(_record_line(rec))
        if rec["status"] == "error":
            failed += 1
            err = rec["error"]
            print(f"error: {path}: stage '{err['stage']}': {err['message']}", file=sys.stderr)
    return 1 if failed else 0


def _traces_for(bundle: Bundle, path: str):
    wave = read_wav(path)
    if wave.sample_rate != bundle.config.dsp.sample_rate:
        raise CommandError(
            f"{path}: sample rate {wave.sample_rate} Hz does not match bundle {bundle.config.dsp.sample_rate} Hz"
        )
    masked = apply_band_mask(bundle.spectrogram(wave), bundle.mask)
    seg, traces = bundle.segment(masked)
    return wave, masked, traces, seg


def cmd_segment(args) -> int:
    bundle = Bundle.load(args.bundle)
    wave, masked, traces, seg = _traces_for(bundle, args.wav)
    table = phase_table(wave.event_id, seg)
    sys.stdout.write(table)
    out = Path(args.out) if args.out else Path(args.wav).parent
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.wav).stem
    times = np.arange(masked.n_frames) * masked.hop_s
    names = [s.value for s in traces]
    rows = [[round(float(t), 6)] + [float(traces[s][i]) for s in traces] for i, t in enumerate(times)]
    write_csv(out / f"{stem}.traces.csv", ["time_s"] + names, rows)
    (out / f"{stem}.phases.csv").write_text(table)
    if not args.no_plot:
        traces_plot(out / f"{stem}.traces.svg", times, {s.value: v for s, v in traces.items()},
                    [b * seg.hop_s for b in seg.boundaries], f"source activations: {wave.event_id}")
    print(f"wrote {out / (stem + '.traces.csv')}", file=sys.stderr)
    return 0


LADDER_HEADER = ("step", "median_score", "threshold", "verdict", "anomalous_fraction", "failures",
                 "median_switching_time_s")


def cmd_ladder(args) -> int:
    bundle = Bundle.load(args.bundle)
    result = experiment_ladder(args.experiment, bundle, per_step=args.per_step, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        (*row, result.median_switching_time(row[0])) for row in result.summary()
    ]
    table = csv_text(LADDER_HEADER, rows)
    (out / f"ladder_{args.experiment}.csv").write_text(table)
    write_csv(
        out / f"ladder_{args.experiment}_events.csv",
        ("step", "event_id", "target", "score", "threshold", "verdict", "switching_time_s", "switching_failure"),
        [(r.step, r.event_id, r.target.value, r.score, r.threshold, r.verdict.value, r.switching_time_s,
          int(r.switching_failure)) for r in result.rows],
    )
    if not args.no_plot:
        ladder_plot(
            out / f"ladder_{args.experiment}.svg", result.steps,
            [result.median_score(s) for s in result.steps],
            {s: [r.score for r in result.at(s)] for s in result.steps},
            result.threshold, LADDER_XLABEL[args.experiment],
            f"{LADDER_TARGET[args.experiment].value} score vs {args.experiment} step",
        )
    sys.stdout.write(table)
    first = result.first_anomalous_step()
    fails = result.failure_steps()
    print(f"first anomalous step: {first if first is not None else 'none'}; "
          f"failure steps: {', '.join(map(str, fails)) or 'none'}")
    return 0


def cmd_diagnose(args) -> int:
    records = Ledger(args.ledger).records()
    if not records:
        raise CommandError(f"ledger is empty or missing: {args.ledger}")
    verdicts = rolling_diagnosis(records, args.k, machine_id=args.machine, window=args.window)
    print("machine_id,phase,verdict")
    for machine in sorted(verdicts):
        for phase, v in verdicts[machine].items():
            print(f"{machine},{phase},{v.value}")
    return 0


def cmd_report(args) -> int:
    records = Ledger(args.ledger).records()
    if not records:
        raise CommandError(f"ledger is empty or missing: {args.ledger}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    targets = [t.value for t in TARGETS]
    rows = []
    for rec in records:
        scores = rec.get("scores", {}).get("targets", {})
        row = [rec["sequence"], rec["event_id"], rec.get("machine_id", ""), rec["status"],
               rec.get("screening", {}).get("verdict", ""), rec.get("screening", {}).get("distance", "")]
        for t in targets:
            row += [scores.get(t, {}).get("score", ""), scores.get(t, {}).get("verdict", "")]
        row.append(rec.get("scores", {}).get("switching_time_s", ""))
        rows.append(row)
    header = ["sequence", "event_id", "machine_id", "status", "screening", "screening_distance"]
    for t in targets:
        header += [f"{t}_score", f"{t}_verdict"]
    header.append("switching_time_s")
    write_csv(out / "events.csv", header, rows)

    summary = []
    for status in ("ok", "contaminated", "error"):
        summary.append(("status", status, sum(r["status"] == status for r in records)))
    scored = [r for r in records if "scores" in r]
    for t in targets:
        summary.append(("anomalous", t, sum(r["scores"]["targets"][t]["verdict"] == "Anomalous"
                                              for r in scored if t in r["scores"]["targets"])))
    write_csv(out / "summary.csv", ("kind", "name", "count"), summary)

    if not args.no_plot:
        series = {t: [r["scores"]["targets"][t]["score"] for r in scored if t in r["scores"]["targets"]]
                  for t in targets}
        thr = {t: scored[-1]["scores"]["targets"][t]["threshold"] for t in targets
               if scored and t in scored[-1]["scores"]["targets"]}
        trend_plot(out / "score_trends.svg", series, thr, "anomaly score", "target scores per event")
        screened = [r for r in records if "screening" in r]
        trend_plot(out / "screening.svg", {"distance": [r["screening"]["distance"] for r in screened]}, {},
                   "Mahalanobis distance", "screening distance per event")
    sys.stdout.write((out / "summary.csv").read_text())
    return 0


def cmd_config(args) -> int:
    cfg = load_config(args.config)
    sys.stdout.write(cfg.dump_toml())
    print(f"# config hash: {cfg.hash()}")
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="switchsound", description="Acoustic diagnosis of electric point machines.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="synthetic data generation")
    synth_sub = synth.add_subparsers(dest="synth_command", required=True)
    corpus = synth_sub.add_parser("corpus", help="write a labeled synthetic corpus (WAVs + manifest)")
    corpus.add_argument("--spec", required=True, help="corpus spec file (JSON or TOML)")
    corpus.add_argument("--out", required=True, help="output directory")
    corpus.add_argument("--seed", type=int, default=0, help="corpus seed (default 0)")
    corpus.add_argument("--config", help="config file; only its [synth] section is used")
    corpus.set_defaults(func=cmd_synth_corpus)

    train = sub.add_parser("train", help="train a bundle from a corpus manifest")
    train.add_argument("--manifest", required=True, help="manifest.jsonl from 'synth corpus' or equivalent")
    train.add_argument("--config", help="config file (default: built-in defaults)")
    train.add_argument("--out", required=True, help="bundle directory to write")
    train.add_argument("--seed", type=int, default=0, help="training seed (default 0)")
    train.set_defaults(func=cmd_train)

    process = sub.add_parser("process", help="screen, segment and score recordings into the run ledger")
    process.add_argument("--bundle", required=True, help="trained bundle directory")
    process.add_argument("--wav", required=True, nargs="+", help="WAV file(s) or glob pattern(s)")
    process.add_argument("--ledger", required=True, help="run ledger (JSON lines, appended)")
    process.add_argument("--config", help="live config; processing aborts if it differs from the bundle's")
    process.add_argument("--jobs", type=int, default=1, help="files analyzed in parallel (default 1)")
    process.set_defaults(func=cmd_process)

    segment = sub.add_parser("segment", help="print the phase table of one recording")
    segment.add_argument("--bundle", required=True, help="trained bundle directory")
    segment.add_argument("--wav", required=True, help="WAV file")
    segment.add_argument("--out", help="directory for traces/phase CSV and plot (default: next to the WAV)")
    segment.add_argument("--no-plot", action="store_true", help="skip the SVG trace plot")
    segment.set_defaults(func=cmd_segment)

    ladder = sub.add_parser("ladder", help="run a synthetic degradation ladder against a bundle")
    ladder.add_argument("--experiment", required=True, choices=sorted(LADDER_TARGET))
    ladder.add_argument("--bundle", required=True, help="trained bundle directory")
    ladder.add_argument("--out", required=True, help="output directory for tables and plot")
    ladder.add_argument("--per-step", type=int, default=10, help="events per step (default 10)")
    ladder.add_argument("--seed", type=int, default=0, help="ladder seed (default 0)")
    ladder.add_argument("--no-plot", action="store_true", help="skip the SVG plot")
    ladder.set_defaults(func=cmd_ladder)

    diagnose = sub.add_parser("diagnose", help="per-machine persistence verdicts from a ledger")
    diagnose.add_argument("--ledger", required=True, help="run ledger")
    diagnose.add_argument("--k", type=int, default=2, help="consecutive exceedances for a persistent anomaly (default 2)")
    diagnose.add_argument("--machine", help="only this machine id")
    diagnose.add_argument("--window", type=int, help="only the most recent N scored events per machine")
    diagnose.set_defaults(func=cmd_diagnose)

    report = sub.add_parser("report", help="summary tables and plots from a ledger")
    report.add_argument("--ledger", required=True, help="run ledger")
    report.add_argument("--out", required=True, help="output directory")
    report.add_argument("--no-plot", action="store_true", help="skip the SVG plots")
    report.set_defaults(func=cmd_report)

    config = sub.add_parser("config", help="print the effective config and its hash")
    config.add_argument("--config", help="config file (default: built-in defaults)")
    config.set_defaults(func=cmd_config)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CommandError, BundleError, StageError, InsufficientScoredEvents) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"error: {exc.args[-1] if exc.filename is None else f'file not found: {exc.filename}'}",
              file=sys.stderr)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {str(exc).strip(chr(39))}", file=sys.stderr)
    return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
