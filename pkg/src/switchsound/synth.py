"""Synthetic switch-sound events with ground truth, degradation ladders and disturbances.

The generator is phenomenological: each component of the machine contributes
a template sound (relay chatter, motor hum, lock-piece impacts, rod friction)
in the phases where it operates, and each degradation axis perturbs those
templates monotonically. Nothing here is a measurement of a real machine.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy import signal

from .config import Config, SynthConfig
from .dsp import BandMask, Spectrogram, Waveform, apply_band_mask, read_wav, stft, write_wav
from .phase import PHASES, SwitchingPhase, boundaries_from_windows, expected_source_profile
from .snmf import Source, SourceLabel

MANIFEST_SCHEMA = "switchsound/manifest"
MANIFEST_VERSION = 1

_P = SwitchingPhase


@dataclass(frozen=True)
class DegradationProfile:
    grease_pushes: int = 4
    adhesion_sixth_turns: int = 0
    lock_ratio_left: int = 5

    def __post_init__(self):
        if self.grease_pushes < 0:
            raise ValueError("grease_pushes must be >= 0")
        if not 0 <= self.adhesion_sixth_turns <= 17:
            raise ValueError("adhesion_sixth_turns must be in 0..17")
        if not 0 <= self.lock_ratio_left <= 10:
            raise ValueError("lock_ratio_left must be in 0..10")

    @property
    def lock_ratio(self) -> str:
        return f"{self.lock_ratio_left}:{10 - self.lock_ratio_left}"


NORMAL = DegradationProfile()


class DisturbanceKind(enum.Enum):
    NONE = "None"
    TrainPass = "TrainPass"
    ShinkansenViaduct = "ShinkansenViaduct"
    Rain = "Rain"
    Birds = "Birds"
    Car = "Car"


# RMS amplitude of each disturbance at gain 1.0
DEFAULT_DISTURBANCE_RMS = {
    DisturbanceKind.TrainPass: 0.05,
    DisturbanceKind.ShinkansenViaduct: 0.08,
    DisturbanceKind.Rain: 0.03,
    DisturbanceKind.Birds: 0.03,
    DisturbanceKind.Car: 0.05,
}


@dataclass(frozen=True)
class DisturbanceSpec:
    kind: DisturbanceKind = DisturbanceKind.NONE
    onset_s: float = 0.0
    duration_s: float = 0.0
    gain: float = 1.0

    def __post_init__(self):
        if self.gain < 0:
            raise ValueError("disturbance gain must be >= 0")
        if self.onset_s < 0 or self.duration_s < 0:
            raise ValueError("disturbance onset/duration must be >= 0")

    @property
    def active(self) -> bool:
        return self.kind is not DisturbanceKind.NONE and self.gain > 0 and self.duration_s > 0


NO_DISTURBANCE = DisturbanceSpec()


@dataclass(frozen=True)
class GroundTruth:
    phase_windows: tuple[tuple[float, float], ...]
    switching_failure: bool
    profile: DegradationProfile
    disturbance: DisturbanceSpec

    @property
    def duration_s(self) -> float:
        return self.phase_windows[-1][1]

    def window(self, p: SwitchingPhase) -> tuple[float, float]:
        return self.phase_windows[p]

    def boundaries(self, n_frames: int, hop_s: float, window_s: float) -> tuple[int, ...]:
        return boundaries_from_windows(self.phase_windows, hop_s, window_s, n_frames)


def is_failure(profile: DegradationProfile, cfg: SynthConfig = SynthConfig()) -> bool:
    return (
        profile.adhesion_sixth_turns >= cfg.adhesion_failure_turns
        or profile.lock_ratio_left >= cfg.lock_failure_left
    )


def grease_factor(pushes: int, cfg: SynthConfig = SynthConfig()) -> float:
    short = cfg.grease_normal_pushes - min(pushes, cfg.grease_normal_pushes)
    return 1.0 + cfg.grease_gain_per_push * short


# --- component templates ---------------------------------------------------


def _bandpass(x: np.ndarray, lo: float, hi: float, sr: int, order: int = 4) -> np.ndarray:
    nyq = sr / 2
    if lo <= 0:
        sos = signal.butter(order, hi / nyq, btype="lowpass", output="sos")
    elif hi >= nyq:
        sos = signal.butter(order, lo / nyq, btype="highpass", output="sos")
    else:
        sos = signal.butter(order, [lo / nyq, hi / nyq], btype="bandpass", output="sos")
    return signal.sosfilt(sos, x)


def _unit_band_noise(n: int, lo: float, hi: float, sr: int, rng: np.random.Generator) -> np.ndarray:
    x = _bandpass(rng.standard_normal(n + sr // 10), lo, hi, sr)[sr // 10:]
    return x / (np.std(x) + 1e-12)


def _ramp(n: int, n_fade: int) -> np.ndarray:
    """Raised-cosine fade-in/out envelope of length n."""
    env = np.ones(n)
    n_fade = min(n_fade, n // 2)
    if n_fade > 0:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(n_fade) / n_fade)
        env[:n_fade] = fade
        env[n - n_fade:] = fade[::-1]
    return env


def _add(out: np.ndarray, start: int, burst: np.ndarray) -> None:
    if start >= len(out) or start + len(burst) <= 0:
        return
    lo = max(start, 0)
    hi = min(start + len(burst), len(out))
    out[lo:hi] += burst[lo - start: hi - start]


def _relay_click(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    n = max(int(cfg.relay_click_s * cfg.sample_rate), 1)
    t = np.arange(n) / cfg.sample_rate
    env = np.exp(-t / (cfg.relay_click_s / 3))
    return rng.standard_normal(n) * env * cfg.relay_amp * rng.uniform(0.85, 1.15)


def _impact(amp: float, cfg: SynthConfig, rng: np.random.Generator, freq: Optional[float] = None) -> np.ndarray:
    n = int(6 * cfg.lock_decay_s * cfg.sample_rate)
    t = np.arange(n) / cfg.sample_rate
    f = (freq or cfg.lock_freq_hz) * rng.uniform(0.98, 1.02)
    return amp * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) * np.exp(-t / cfg.lock_decay_s)


def _phase_durations(profile: DegradationProfile, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    base = np.asarray(cfg.phase_durations_s, dtype=float)
    jitter = np.clip(1.0 + cfg.duration_jitter * rng.standard_normal(len(base)), 0.8, 1.2)
    durations = base * jitter
    durations[_P.MovingRail] *= 1.0 + cfg.adhesion_stretch_per_turn * profile.adhesion_sixth_turns
    return durations


def event_duration(profile: DegradationProfile, seed: int, cfg: SynthConfig = SynthConfig()) -> float:
    """Length in seconds of the event ``generate_event`` renders for this seed."""
    durations = _phase_durations(profile, cfg, np.random.default_rng(seed))
    return float(np.round(np.sum(durations) * cfg.sample_rate) / cfg.sample_rate)


def render_disturbance(
    d: DisturbanceSpec, n: int, sr: int, rng: np.random.Generator
) -> np.ndarray:
    """Additive disturbance track of length n (zeros when inactive)."""
    out = np.zeros(n)
    if not d.active:
        return out
    start = int(d.onset_s * sr)
    length = min(int(d.duration_s * sr), n - start)
    if length <= 0:
        return out
    kind = d.kind
    if kind is DisturbanceKind.TrainPass:
        x = _unit_band_noise(length, 40.0, 600.0, sr, rng)
        t = np.arange(length) / sr
        x += 0.5 * np.sin(2 * np.pi * 220.0 * t) * (1 + 0.3 * np.sin(2 * np.pi * 0.8 * t))
    elif kind is DisturbanceKind.ShinkansenViaduct:
        rumble = _unit_band_noise(length, 8.0, 30.0, sr, rng)
        hiss = _unit_band_noise(length, 6600.0, 7800.0, sr, rng)
        x = rumble + 0.6 * hiss
    elif kind is DisturbanceKind.Rain:
        x = np.zeros(length)
        n_drops = rng.poisson(150 * length / sr)
        drop_len = int(0.002 * sr)
        env = np.exp(-np.arange(drop_len) / (0.0005 * sr))
        for pos in rng.integers(0, max(length - drop_len, 1), size=n_drops):
            x[pos: pos + drop_len] += rng.standard_normal(drop_len) * env * rng.uniform(0.3, 1.0)
    elif kind is DisturbanceKind.Birds:
        x = np.zeros(length)
        n_chirps = max(1, int(rng.integers(4, 9) * length / sr))
        for _ in range(n_chirps):
            chirp_len = int(rng.uniform(0.08, 0.15) * sr)
            pos = int(rng.integers(0, max(length - chirp_len, 1)))
            t = np.arange(chirp_len) / sr
            f0, f1 = rng.uniform(2800, 3500), rng.uniform(4200, 5200)
            sweep = signal.chirp(t, f0, t[-1], f1)
            _add(x, pos, sweep * np.hanning(chirp_len))
    elif kind is DisturbanceKind.Car:
        t = np.arange(length) / sr
        x = _unit_band_noise(length, 30.0, 300.0, sr, rng)
        x += sum(np.sin(2 * np.pi * 45.0 * k * t) / k for k in (1, 2, 3))
    else:  # pragma: no cover - enum exhausted
        raise ValueError(f"unknown disturbance {kind}")
    x = x / (np.sqrt(np.mean(x**2)) + 1e-12)
    x *= DEFAULT_DISTURBANCE_RMS[kind] * d.gain * _ramp(length, int(0.3 * length))
    out[start: start + length] = x
    return out


def generate_event(
    profile: DegradationProfile = NORMAL,
    disturbance: DisturbanceSpec = NO_DISTURBANCE,
    seed: int = 0,
    cfg: SynthConfig = SynthConfig(),
    event_id: Optional[str] = None,
) -> tuple[Waveform, GroundTruth]:
    rng = np.random.default_rng(seed)
    sr = cfg.sample_rate
    durations = _phase_durations(profile, cfg, rng)
    edges_s = np.concatenate(([0.0], np.cumsum(durations)))
    edges = np.round(edges_s * sr).astype(int)
    n = int(edges[-1])
    windows = tuple((float(edges[i] / sr), float(edges[i + 1] / sr)) for i in range(len(PHASES)))
    failure = is_failure(profile, cfg)

    def span(p: SwitchingPhase) -> tuple[int, int]:
        return int(edges[p]), int(edges[p + 1])

    x = cfg.background_std * rng.standard_normal(n)

    # relay chatter in the routines
    for p in (_P.StartingRoutine, _P.EndingRoutine):
        a, b = span(p)
        pos = a + int(rng.uniform(0.0, 0.004) * sr)
        while pos < b - int(cfg.relay_click_s * sr):
            click = _relay_click(cfg, rng)
            _add(x[:b], pos, click)
            pos += int(cfg.relay_spacing_s * sr * rng.uniform(0.85, 1.15))

    # motor hum from idle-before to idle-after
    m_start, _ = span(_P.IdleBeforeMoving)
    _, m_end = span(_P.IdleAfterMoving)
    t = np.arange(m_end - m_start) / sr
    f0 = cfg.motor_f0_hz * (1.0 + cfg.motor_f0_jitter * rng.standard_normal())
    gain = cfg.motor_amp * np.exp(cfg.motor_gain_jitter * rng.standard_normal())
    harmonic_boost = 1.0 + cfg.adhesion_harmonic_per_turn * profile.adhesion_sixth_turns
    wobble = 1.0 + cfg.motor_wobble * np.sin(2 * np.pi * rng.uniform(0.5, 1.5) * t + rng.uniform(0, 2 * np.pi))
    hum = np.zeros_like(t)
    for k in range(1, cfg.motor_n_harmonics + 2):
        amp = gain / k * (harmonic_boost if k > 1 else 1.0)
        hum += amp * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
    hum *= wobble * _ramp(len(t), int(cfg.motor_ramp_s * sr))

    # rod / gear friction; grease shortage raises it in every moving phase
    g = grease_factor(profile.grease_pushes, cfg)
    friction_env = np.zeros(n)
    fade = int(0.01 * sr)
    for p, rel in (
        (_P.IdleBeforeMoving, cfg.idle_friction_rel),
        (_P.DeactivateSafety, cfg.idle_friction_rel),
        (_P.MovingRail, 1.0),
        (_P.ActivateSafety, cfg.idle_friction_rel),
        (_P.IdleAfterMoving, cfg.idle_friction_rel),
    ):
        a, b = span(p)
        friction_env[a:b] = cfg.rod_std * rel * g
    rail_a, rail_b = span(_P.MovingRail)
    if failure:
        # aborted throw: the rail sticks partway and grinds in stick-slip
        # while the motor strains against it
        stall = rail_a + int(cfg.abort_fraction * (rail_b - rail_a))
        ts = np.arange(rail_b - stall) / sr
        slip = 0.7 + 0.3 * np.sign(np.sin(2 * np.pi * cfg.stall_slip_hz * ts))
        friction_env[stall:rail_b] *= slip
        strain = np.ones_like(t)
        strain[stall - m_start: rail_b - m_start] = cfg.stall_strain
        hum *= strain
    kernel = np.hanning(2 * fade + 1)
    friction_env = np.convolve(friction_env, kernel / kernel.sum(), mode="same")
    lo, hi = cfg.rod_band_hz
    x += friction_env * _unit_band_noise(n, lo, hi, sr, rng)
    x[m_start:m_end] += hum

    # lock-piece impacts while the safety lock disengages / engages
    for p in (_P.DeactivateSafety, _P.ActivateSafety):
        a, b = span(p)
        pos = a + int(0.5 * cfg.lock_spacing_s * sr)
        while pos < b - int(0.01 * sr):
            _add(x[:b], pos, _impact(cfg.lock_amp * rng.uniform(0.8, 1.2), cfg, rng))
            pos += int(cfg.lock_spacing_s * sr * rng.uniform(0.85, 1.15))
    a, b = span(_P.DeactivateSafety)
    _add(x, a + int(0.3 * (b - a)), _impact(cfg.lock_main_amp, cfg, rng))
    a, b = span(_P.ActivateSafety)
    shift = cfg.lock_shift_s_per_step * (profile.lock_ratio_left - 5)
    main_at = a + int(cfg.lock_main_at * (b - a) + shift * sr)
    _add(x, main_at, _impact(cfg.lock_main_amp, cfg, rng))
    if profile.lock_ratio_left > cfg.lock_secondary_beyond:
        # the piece strikes the notch edge before seating
        edge_hit = _impact(cfg.lock_main_amp, cfg, rng, cfg.lock_secondary_freq_hz)
        _add(x, main_at + int(cfg.lock_secondary_delay_s * sr), edge_hit)

    x += render_disturbance(disturbance, n, sr, rng)
    truth = GroundTruth(
        phase_windows=windows, switching_failure=failure, profile=profile, disturbance=disturbance
    )
    return Waveform(x, sr, event_id or f"event-{seed}"), truth


# --- ladders ----------------------------------------------------------------


LADDERS = {
    "grease": tuple(DegradationProfile(grease_pushes=p) for p in range(0, 5)),
    "adhesion": tuple(DegradationProfile(adhesion_sixth_turns=k) for k in range(0, 18)),
    "lock": tuple(DegradationProfile(lock_ratio_left=r) for r in range(5, 11)),
}


def ladder_step_value(experiment: str, profile: DegradationProfile) -> int:
    return {
        "grease": profile.grease_pushes,
        "adhesion": profile.adhesion_sixth_turns,
        "lock": profile.lock_ratio_left,
    }[experiment]


def event_seed(corpus_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([corpus_seed, index]).generate_state(1)[0])


def random_disturbance(kind: DisturbanceKind, duration_s: float, rng: np.random.Generator, gain: float = 1.0) -> DisturbanceSpec:
    """A disturbance covering a large random stretch of the event."""
    if kind is DisturbanceKind.NONE:
        return NO_DISTURBANCE
    length = rng.uniform(0.5, 0.9) * duration_s
    onset = rng.uniform(0.0, duration_s - length)
    return DisturbanceSpec(kind=kind, onset_s=round(onset, 4), duration_s=round(length, 4), gain=gain)


# --- corpus -----------------------------------------------------------------


@dataclass(frozen=True)
class CorpusSpec:
    """Counts per group.

    ``clean`` normal events; ``ladders`` maps experiment name to events per
    step; ``disturbances`` maps disturbance kind to the exact fraction of the
    clean events overlaid with it.
    """

    clean: int = 0
    ladders: dict = field(default_factory=dict)
    disturbances: dict = field(default_factory=dict)
    disturbance_gain: float = 1.0

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusSpec":
        unknown = set(data) - {"clean", "ladders", "disturbances", "disturbance_gain"}
        if unknown:
            raise ValueError(f"unknown corpus spec keys: {', '.join(sorted(unknown))}")
        ladders = {str(k): int(v) for k, v in data.get("ladders", {}).items()}
        for name in ladders:
            if name not in LADDERS:
                raise ValueError(f"unknown ladder {name!r}; choose from {', '.join(LADDERS)}")
        disturbances = {DisturbanceKind(k).value: float(v) for k, v in data.get("disturbances", {}).items()}
        if sum(disturbances.values()) > 1.0 + 1e-9:
            raise ValueError("disturbance fractions sum to more than 1")
        return cls(
            clean=int(data.get("clean", 0)), ladders=ladders, disturbances=disturbances,
            disturbance_gain=float(data.get("disturbance_gain", 1.0)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "CorpusSpec":
        path = Path(path)
        try:
            text = path.read_text()
        except FileNotFoundError:
            raise FileNotFoundError(f"corpus spec not found: {path}") from None
        if path.suffix == ".toml":
            import tomli

            return cls.from_dict(tomli.loads(text))
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class PlannedEvent:
    event_id: str
    seed: int
    group: str
    step: Optional[int]
    profile: DegradationProfile
    disturbance_kind: DisturbanceKind


def plan_corpus(spec: CorpusSpec, seed: int) -> list[PlannedEvent]:
    plan: list[PlannedEvent] = []
    kinds: list[DisturbanceKind] = []
    for kind, frac in spec.disturbances.items():
        kinds += [DisturbanceKind(kind)] * int(round(frac * spec.clean))
    kinds = kinds[: spec.clean] + [DisturbanceKind.NONE] * (spec.clean - len(kinds))
    # interleave deterministically so disturbed events spread through the corpus
    order = np.random.default_rng(seed).permutation(spec.clean)
    kinds = [kinds[i] for i in order]
    index = 0
    for i in range(spec.clean):
        plan.append(PlannedEvent(f"clean-{i:04d}", event_seed(seed, index), "clean", None, NORMAL, kinds[i]))
        index += 1
    for name, per_step in spec.ladders.items():
        for profile in LADDERS[name]:
            step = ladder_step_value(name, profile)
            for j in range(per_step):
                plan.append(PlannedEvent(
                    f"{name}-{step:02d}-{j:03d}", event_seed(seed, index), name, step, profile,
                    DisturbanceKind.NONE,
                ))
                index += 1
    return plan


def _record(ev: PlannedEvent, file: str, truth: GroundTruth) -> dict:
    return {
        "schema": MANIFEST_SCHEMA,
        "version": MANIFEST_VERSION,
        "event_id": ev.event_id,
        "file": file,
        "seed": ev.seed,
        "group": ev.group,
        "step": ev.step,
        "profile": asdict(truth.profile),
        "disturbance": {
            "kind": truth.disturbance.kind.value,
            "onset_s": truth.disturbance.onset_s,
            "duration_s": truth.disturbance.duration_s,
            "gain": truth.disturbance.gain,
        },
        "phase_windows": [list(w) for w in truth.phase_windows],
        "switching_failure": truth.switching_failure,
    }


def render_planned(ev: PlannedEvent, cfg: SynthConfig, gain: float = 1.0) -> tuple[Waveform, GroundTruth]:
    rng = np.random.default_rng(ev.seed ^ 0x5EED)
    dist = random_disturbance(ev.disturbance_kind, event_duration(ev.profile, ev.seed, cfg), rng, gain)
    return generate_event(ev.profile, dist, ev.seed, cfg, ev.event_id)


def generate_corpus(
    spec: CorpusSpec, out_dir: str | Path, seed: int, cfg: SynthConfig = SynthConfig()
) -> Path:
    """Write one PCM16 WAV per event plus ``manifest.jsonl``; returns the manifest path."""
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    try:
        wav_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {wav_dir}: {exc}") from exc
    manifest = out_dir / "manifest.jsonl"
    lines = []
    for ev in plan_corpus(spec, seed):
        wave, truth = render_planned(ev, cfg, spec.disturbance_gain)
        rel = f"wav/{ev.event_id}.wav"
        try:
            write_wav(out_dir / rel, wave)
        except OSError as exc:
            raise OSError(f"cannot write {out_dir / rel}: {exc}") from exc
        lines.append(json.dumps(_record(ev, rel, truth), sort_keys=True))
    manifest.write_text("".join(line + "\n" for line in lines))
    return manifest


def truth_from_record(rec: dict) -> GroundTruth:
    d = rec["disturbance"]
    return GroundTruth(
        phase_windows=tuple(tuple(w) for w in rec["phase_windows"]),
        switching_failure=bool(rec["switching_failure"]),
        profile=DegradationProfile(**rec["profile"]),
        disturbance=DisturbanceSpec(DisturbanceKind(d["kind"]), d["onset_s"], d["duration_s"], d["gain"]),
    )


def read_manifest(path: str | Path) -> list[dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"manifest not found: {path}") from None
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("schema") != MANIFEST_SCHEMA or rec.get("version") != MANIFEST_VERSION:
            raise ValueError(f"{path}:{lineno}: not a {MANIFEST_SCHEMA} v{MANIFEST_VERSION} record")
        records.append(rec)
    return records


# --- training labels ----------------------------------------------------------


def source_labels_for_event(
    event_id: str, truth: GroundTruth, n_frames: int, hop_s: float, window_s: float
) -> list[SourceLabel]:
    """Per-source frame ranges implied by the phase windows and the phase profiles.

    Background is labeled over the whole event: it is present throughout.
    """
    b = truth.boundaries(n_frames, hop_s, window_s)
    segments: dict[Source, list[tuple[str, int, int]]] = {}
    for p in PHASES:
        for src in sorted(expected_source_profile(p), key=lambda s: s.value):
            segments.setdefault(src, []).append((event_id, b[p], b[p + 1]))
    segments[Source.Background] = [(event_id, 0, n_frames)]
    return [SourceLabel(src, tuple(segs)) for src, segs in segments.items()]


def labels_for_spectrogram(
    spec: Spectrogram, event_id: str, truth: GroundTruth
) -> list[tuple[Spectrogram, SourceLabel]]:
    if truth.disturbance.active:
        raise ValueError(f"event {event_id!r} is contaminated; only clean events can be labeled")
    window_s = spec.window_len / spec.sample_rate
    labels = source_labels_for_event(event_id, truth, spec.n_frames, spec.hop_s, window_s)
    return [(spec, label) for label in labels]


def load_spectrogram(path: str | Path, cfg: Config, event_id: Optional[str] = None, masked: bool = True) -> Spectrogram:
    wave = read_wav(path, event_id)
    spec = stft(wave, cfg.dsp.window_len, cfg.dsp.hop)
    return apply_band_mask(spec, BandMask(cfg.dsp.keep_bands)) if masked else spec


def labeled_segments_for_training(
    manifest: Iterable[dict], root: str | Path, cfg: Config = Config(), masked: bool = True
) -> list[tuple[Spectrogram, SourceLabel]]:
    root = Path(root)
    out: list[tuple[Spectrogram, SourceLabel]] = []
    for rec in manifest:
        truth = truth_from_record(rec)
        spec = load_spectrogram(root / rec["file"], cfg, rec["event_id"], masked)
        out += labels_for_spectrogram(spec, rec["event_id"], truth)
    return out
