"""End-to-end orchestration: bundle training, per-event processing, the run ledger.

Per event the stages always run in this order::

    load -> screen -> mask -> snmf -> segment -> score

A contaminated recording stops after ``screen``; its record carries the
screening verdict and no scores.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .anomaly import (
    AnomalyReport,
    LadderResult,
    NormalModel,
    SegmentedEvent,
    Thresholds,
    run_experiment_ladder,
    score_event,
    train_normal_model,
)
from .config import Config, config_from_dict
from .denoise import (
    CleanlinessModel,
    PersistenceVerdict,
    ScreenVerdict,
    extract_clip_features,
    fit_cleanliness,
    persistence_check,
    screen_event,
)
from .dsp import BandMask, Spectrogram, Waveform, apply_band_mask, read_wav, stft
from .phase import PHASES, PhaseMalfunctionMatrix, PhaseSegmentation, SwitchingPhase, segment_phases
from .snmf import BasisDictionary, estimate_activations, fit_bases, source_traces
from .synth import NORMAL, labels_for_spectrogram, read_manifest, truth_from_record

log = logging.getLogger(__name__)

BUNDLE_SCHEMA = "switchsound/bundle"
BUNDLE_VERSION = 1
RECORD_SCHEMA = "switchsound/run-record"
RECORD_VERSION = 1
STAGES = ("load", "screen", "mask", "snmf", "segment", "score")


class BundleError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
        self.message = message


# --- clocks -------------------------------------------------------------------


class Clock:
    """Wall clock, or a ticking clock pinned to ``SOURCE_DATE_EPOCH`` when set.

    The pinned clock advances one millisecond per reading, so stage times stay
    ordered while ledgers stay byte-reproducible.
    """

    def __init__(self, epoch: Optional[float] = None):
        if epoch is None and os.environ.get("SOURCE_DATE_EPOCH"):
            epoch = float(os.environ["SOURCE_DATE_EPOCH"])
        self.epoch = epoch
        self._ticks = 0
        self._lock = threading.Lock()

    def now(self) -> str:
        if self.epoch is None:
            t = time.time()
        else:
            with self._lock:
                t = self.epoch + self._ticks / 1000.0
                self._ticks += 1
        return datetime.fromtimestamp(t, tz=timezone.utc).isoformat(timespec="milliseconds")


# --- bundle -------------------------------------------------------------------


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class Bundle:
    config: Config
    dictionary: BasisDictionary
    cleanliness: CleanlinessModel
    models: dict[SwitchingPhase, NormalModel]
    thresholds: Thresholds
    matrix: PhaseMalfunctionMatrix = field(default_factory=PhaseMalfunctionMatrix.standard)
    seed: int = 0
    config_hash: str = ""

    def __post_init__(self):
        if not self.config_hash:
            self.config_hash = self.config.hash()

    @property
    def mask(self) -> BandMask:
        return BandMask(self.config.dsp.keep_bands)

    def check_consistency(self) -> None:
        n_bins = self.config.dsp.window_len // 2 + 1
        if self.dictionary.n_bins != n_bins:
            raise BundleError(f"bundle inconsistency: dictionary has {self.dictionary.n_bins} bins, config implies {n_bins}")
        for p, m in self.models.items():
            if m.n_bins != n_bins:
                raise BundleError(f"bundle inconsistency: {p.name} model has {m.n_bins} bins, config implies {n_bins}")
        expected_hz = self.config.dsp.sample_rate / self.config.dsp.window_len
        if self.dictionary.bin_hz and abs(self.dictionary.bin_hz - expected_hz) > 1e-9:
            raise BundleError("bundle inconsistency: dictionary bin width disagrees with config sample rate")
        if self.config_hash != self.config.hash():
            raise BundleError("bundle inconsistency: descriptor config hash does not match stored config")

    # -- analysis helpers (pure) --

    def spectrogram(self, w: Waveform) -> Spectrogram:
        return stft(w, self.config.dsp.window_len, self.config.dsp.hop)

    def segment(self, masked: Spectrogram) -> tuple[PhaseSegmentation, dict]:
        acts = estimate_activations(masked, self.dictionary, self.config.snmf.estimate_iters, self.config.snmf.eps)
        traces = source_traces(acts, self.dictionary)
        seg = segment_phases(traces, hop_s=masked.hop_s, threshold=self.config.phase.activity_threshold)
        return seg, traces

    def analyze(self, w: Waveform) -> SegmentedEvent:
        masked = apply_band_mask(self.spectrogram(w), self.mask)
        seg, _ = self.segment(masked)
        return SegmentedEvent(w.event_id, masked.magnitudes, seg)

    def score(self, event: SegmentedEvent) -> AnomalyReport:
        return score_event(event, self.models, self.matrix, self.thresholds)

    # -- persistence --

    def files(self) -> dict[str, str]:
        """Relative path -> file contents for the whole bundle."""
        files = {
            "dictionary.json": self.dictionary.to_json(),
            "cleanliness.json": self.cleanliness.to_json(),
            "thresholds.json": self.thresholds.to_json(),
            "matrix.json": _matrix_json(self.matrix),
            "config.toml": self.config.dump_toml(),
        }
        for p in PHASES:
            if p in self.models:
                files[f"models/{p.name}.json"] = self.models[p].to_json()
        descriptor = {
            "schema": BUNDLE_SCHEMA,
            "version": BUNDLE_VERSION,
            "config_hash": self.config_hash,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "sample_rate": self.config.dsp.sample_rate,
            "n_bins": self.dictionary.n_bins,
            "files": {name: _digest(text) for name, text in sorted(files.items())},
        }
        files["descriptor.json"] = json.dumps(descriptor, indent=1, sort_keys=True) + "\n"
        return files

    def model_versions(self) -> dict[str, str]:
        return {
            "dictionary": _digest(self.dictionary.to_json()),
            "cleanliness": _digest(self.cleanliness.to_json()),
            "thresholds": _digest(self.thresholds.to_json()),
            **{f"model:{p.name}": _digest(m.to_json()) for p, m in sorted(self.models.items())},
        }

    def save(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        (out_dir / "models").mkdir(parents=True, exist_ok=True)
        for name, text in self.files().items():
            (out_dir / name).write_text(text)
        return out_dir

    @classmethod
    def load(cls, bundle_dir: str | Path) -> "Bundle":
        bundle_dir = Path(bundle_dir)
        desc_path = bundle_dir / "descriptor.json"
        if not desc_path.exists():
            raise BundleError(f"not a bundle directory (no descriptor.json): {bundle_dir}")
        desc = json.loads(desc_path.read_text())
        if desc.get("schema") != BUNDLE_SCHEMA or desc.get("version") != BUNDLE_VERSION:
            raise BundleError(
                f"unsupported bundle version {desc.get('version')} in {bundle_dir}; expected {BUNDLE_VERSION}"
            )
        for name, digest in desc["files"].items():
            path = bundle_dir / name
            if not path.exists():
                raise BundleError(f"bundle file missing: {path}")
            if _digest(path.read_text()) != digest:
                raise BundleError(f"bundle file modified since training: {path}")
        models = {}
        for p in PHASES:
            path = bundle_dir / "models" / f"{p.name}.json"
            if path.exists():
                models[p] = NormalModel.load(path)
        bundle = cls(
            config=config_from_dict(desc["config"]),
            dictionary=BasisDictionary.load(bundle_dir / "dictionary.json"),
            cleanliness=CleanlinessModel.load(bundle_dir / "cleanliness.json"),
            models=models,
            thresholds=Thresholds.from_json((bundle_dir / "thresholds.json").read_text()),
            matrix=PhaseMalfunctionMatrix.standard(),
            seed=int(desc.get("seed", 0)),
            config_hash=desc["config_hash"],
        )
        bundle.check_consistency()
        return bundle


def _matrix_json(matrix: PhaseMalfunctionMatrix) -> str:
    rows = {}
    for (p, m), checked in matrix.detects.items():
        rows.setdefault(p.name, {})[m.value] = checked
    return json.dumps({
        "schema": "switchsound/phase-malfunction-matrix",
        "version": 1,
        "detects": rows,
        "cost_effect": {m.value: c.value for m, c in matrix.cost_effect.items()},
    }, indent=1) + "\n"


# --- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainingEvent:
    event_id: str
    raw: Spectrogram
    masked: Spectrogram
    labels: list


@contextmanager
def _stage(name: str):
    """Re-raise value errors (insufficiency included) tagged with the failing stage."""
    try:
        yield
    except StageError:
        raise
    except ValueError as exc:
        raise StageError(name, str(exc)) from exc


def is_undisturbed(rec: dict) -> bool:
    return not truth_from_record(rec).disturbance.active


def is_normal_record(rec: dict) -> bool:
    truth = truth_from_record(rec)
    return truth.profile == NORMAL and not truth.disturbance.active and not truth.switching_failure


def train_bundle_from_waveforms(
    waves: Sequence[tuple[Waveform, object]],
    config: Config = Config(),
    seed: int = 0,
    screening_waves: Sequence[Waveform] = (),
) -> Bundle:
    """Train every stage from (waveform, ground truth) pairs of normal, undisturbed events.

    The cleanliness model sees those events plus ``screening_waves``: further
    undisturbed switching clips of any condition, so that degraded switching is
    still screened as clean and reaches the anomaly scorer.
    """
    cfg = config
    mask = BandMask(cfg.dsp.keep_bands)
    events = []
    for wave, truth in waves:
        raw = stft(wave, cfg.dsp.window_len, cfg.dsp.hop)
        masked = apply_band_mask(raw, mask)
        events.append(TrainingEvent(wave.event_id, raw, masked, labels_for_spectrogram(masked, wave.event_id, truth)))

    n = len(events)
    n_val = int(round(cfg.pipeline.validation_fraction * n))
    order = np.random.default_rng(seed).permutation(n)
    val = [events[i] for i in sorted(order[:n_val])]
    train = [events[i] for i in sorted(order[n_val:])]
    min_train = cfg.anomaly.min_events
    if len(train) < min_train or len(val) < 10:
        raise StageError(
            "split",
            f"insufficient training data: {n} clean events give {len(train)} train / {len(val)} "
            f"validation; need >= {min_train} / 10",
        )

    with _stage("snmf"):
        labeled = [pair for ev in train for pair in ev.labels]
        dictionary = fit_bases(labeled, cfg.snmf.n_per_source, cfg.snmf.fit_iters, seed, eps=cfg.snmf.eps)
    log.info("fitted %d-component dictionary", dictionary.n_components)

    with _stage("denoise"):
        d = cfg.denoise
        raws = [ev.raw for ev in events] + [stft(w, cfg.dsp.window_len, cfg.dsp.hop) for w in screening_waves]
        features = [extract_clip_features(r, d.n_bands, d.band_low_hz) for r in raws]
        cleanliness = fit_cleanliness(features, cfg.denoise.quantile, cfg.denoise.ridge)

    bundle = Bundle(
        config=cfg, dictionary=dictionary, cleanliness=cleanliness, models={},
        thresholds=Thresholds(), seed=seed,
    )
    with _stage("segment"):
        segmented = {ev.event_id: SegmentedEvent(ev.event_id, ev.masked.magnitudes, bundle.segment(ev.masked)[0])
                     for ev in events}

    a = cfg.anomaly
    with _stage("anomaly"):
        for i, p in enumerate(PHASES):
            bundle.models[p] = train_normal_model(
                [segmented[ev.event_id] for ev in train], p, epochs=a.epochs, seed=seed + i,
                context=a.context, hidden=a.hidden, learning_rate=a.learning_rate,
                batch_size=a.batch_size, holdout_fraction=a.holdout_fraction, min_events=a.min_events,
            )
            log.info("trained %s model (best epoch %d)", p.name, bundle.models[p].history["best_epoch"])

    with _stage("calibrate"):
        reports = [score_event(segmented[ev.event_id], bundle.models, bundle.matrix) for ev in val]
        bundle.thresholds = Thresholds.calibrate(reports, a.sigma_mult)
    return bundle


def train_bundle(manifest: str | Path, config: Config = Config(), seed: int = 0,
                 out_dir: Optional[str | Path] = None) -> Bundle:
    manifest = Path(manifest)
    waves, extra = [], []
    for rec in read_manifest(manifest):
        if not is_undisturbed(rec):
            continue
        wave = read_wav(manifest.parent / rec["file"], rec["event_id"])
        if wave.sample_rate != config.dsp.sample_rate:
            raise BundleError(
                f"{rec['file']}: sample rate {wave.sample_rate} Hz differs from config {config.dsp.sample_rate} Hz"
            )
        if is_normal_record(rec):
            waves.append((wave, truth_from_record(rec)))
        else:
            extra.append(wave)
    bundle = train_bundle_from_waveforms(waves, config, seed, extra)
    if out_dir is not None:
        bundle.save(out_dir)
    return bundle


# --- processing -----------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def analyze_event(
    wave: Waveform | str | Path,
    bundle: Bundle,
    clock: Optional[Clock] = None,
    live_config: Optional[Config] = None,
) -> dict:
    """Run all stages on one recording and return its record (not yet in a ledger)."""
    clock = clock or Clock()
    if live_config is not None and live_config.hash() != bundle.config_hash:
        raise BundleError(
            f"config hash mismatch: live {live_config.hash()[:12]} vs bundle {bundle.config_hash[:12]}; "
            "retrain the bundle or use its config.toml"
        )
    source = None
    if not isinstance(wave, Waveform):
        source = Path(wave).name
    record = {
        "schema": RECORD_SCHEMA,
        "version": RECORD_VERSION,
        "event_id": wave.event_id if isinstance(wave, Waveform) else Path(wave).stem,
        "machine_id": bundle.config.pipeline.machine_id,
        "source": source,
        "started_at": clock.now(),
        "config_hash": bundle.config_hash,
        "model_versions": bundle.model_versions(),
        "stages": [],
        "status": "ok",
    }

    def run(stage: str, fn: Callable):
        entry = {"stage": stage, "started_at": clock.now()}
        try:
            return fn()
        except (ValueError, OSError, KeyError) as exc:
            raise StageError(stage, str(exc).strip("'\"")) from exc
        finally:
            entry["finished_at"] = clock.now()
            record["stages"].append(entry)

    try:
        if not isinstance(wave, Waveform):
            wave = run("load", lambda: read_wav(wave))
        else:
            run("load", lambda: wave)
        if wave.sample_rate != bundle.config.dsp.sample_rate:
            raise StageError("load", f"sample rate {wave.sample_rate} Hz does not match bundle "
                                     f"{bundle.config.dsp.sample_rate} Hz")
        def screen():
            raw = bundle.spectrogram(wave)
            d = bundle.config.denoise
            return raw, screen_event(raw, bundle.cleanliness, d.n_bands, d.band_low_hz)

        raw, screened = run("screen", screen)
        record["screening"] = {"verdict": screened.verdict.value, "distance": screened.distance}
        if screened.verdict is ScreenVerdict.Contaminated:
            record["status"] = "contaminated"
        else:
            masked = run("mask", lambda: apply_band_mask(raw, bundle.mask))
            acts = run("snmf", lambda: estimate_activations(
                masked, bundle.dictionary, bundle.config.snmf.estimate_iters, bundle.config.snmf.eps))
            traces = source_traces(acts, bundle.dictionary)
            seg = run("segment", lambda: segment_phases(
                traces, hop_s=masked.hop_s, threshold=bundle.config.phase.activity_threshold))
            record["segmentation"] = {
                "boundaries": list(seg.boundaries),
                "hop_s": seg.hop_s,
                "confidence": list(seg.confidence),
                "phases": [p.name for p in PHASES],
            }
            event = SegmentedEvent(wave.event_id, masked.magnitudes, seg)
            report = run("score", lambda: bundle.score(event))
            record["scores"] = report.to_dict()
    except StageError as exc:
        record["status"] = "error"
        record["error"] = {"stage": exc.stage, "message": exc.message}
    record["finished_at"] = clock.now()
    return _jsonable(record)


class Ledger:
    """Append-only JSON-lines run ledger; one writer lock per instance."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        for lineno, line in enumerate(self.path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("schema") != RECORD_SCHEMA:
                raise ValueError(f"{self.path}:{lineno}: not a run record")
            out.append(rec)
        return out

    def append(self, record: dict, k: Optional[int] = None) -> dict:
        """Append ``record``; when ``k`` is given, attach rolling persistence verdicts first."""
        with self._lock:
            record = dict(record)
            existing = self.records()
            record["sequence"] = len(existing)
            if k is not None and record.get("status") == "ok":
                try:
                    verdicts = rolling_diagnosis(existing + [record], k, machine_id=record["machine_id"])
                    record["persistence"] = {
                        p: v.value for p, v in verdicts[record["machine_id"]].items()
                    }
                except InsufficientScoredEvents:
                    pass
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            return record


def process_event(
    wav: Waveform | str | Path,
    bundle: Bundle,
    ledger: Optional[Ledger] = None,
    clock: Optional[Clock] = None,
    live_config: Optional[Config] = None,
) -> dict:
    record = analyze_event(wav, bundle, clock, live_config)
    if ledger is not None:
        record = ledger.append(record, k=bundle.config.pipeline.persistence_k)
    return record


class InsufficientScoredEvents(ValueError):
    pass


def rolling_diagnosis(
    records: Iterable[dict], k: int = 2, machine_id: Optional[str] = None, window: Optional[int] = None
) -> dict[str, dict[str, PersistenceVerdict]]:
    """Persistence verdicts per machine over the scored records, in ledger order.

    Contaminated and failed records are skipped rather than counted as
    below-threshold. ``window`` limits the check to the most recent scored events.
    """
    by_machine: dict[str, list[dict]] = {}
    for rec in records:
        if rec.get("status") != "ok" or "scores" not in rec:
            continue
        if machine_id is not None and rec.get("machine_id") != machine_id:
            continue
        by_machine.setdefault(rec.get("machine_id", ""), []).append(rec)
    out = {}
    for machine, recs in by_machine.items():
        if window is not None:
            recs = recs[-window:]
        if len(recs) < k:
            continue
        events = [(r["event_id"], r["scores"]["phase_scores"]) for r in recs]
        thresholds = recs[-1]["scores"]["phase_thresholds"]
        out[machine] = persistence_check(events, thresholds, k)
    if not out:
        raise InsufficientScoredEvents(f"insufficient scored events: need >= {k} per machine")
    return out


def experiment_ladder(
    experiment: str, bundle: Bundle, per_step: int = 10, seed: int = 0
) -> LadderResult:
    return run_experiment_ladder(
        experiment, bundle.analyze, bundle.models, bundle.thresholds,
        per_step=per_step, seed=seed, cfg=bundle.config.synth, matrix=bundle.matrix,
    )
