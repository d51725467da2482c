"""Run configuration: every numeric knob of every stage, in one hashable block.

Configs load from a TOML file with one table per stage (``[dsp]``, ``[snmf]``,
``[phase]``, ``[denoise]``, ``[anomaly]``, ``[synth]``, ``[pipeline]``).
Missing keys fall back to the defaults below; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli


@dataclass(frozen=True)
class DSPConfig:
    sample_rate: int = 16000
    window_len: int = 1024
    hop: int = 512
    keep_bands: tuple[tuple[float, float], ...] = ((50.0, 6000.0),)


@dataclass(frozen=True)
class SNMFConfig:
    n_per_source: int = 4
    fit_iters: int = 200
    estimate_iters: int = 200
    eps: float = 1e-12


@dataclass(frozen=True)
class PhaseConfig:
    activity_threshold: float = 0.2


@dataclass(frozen=True)
class DenoiseConfig:
    n_bands: int = 8
    band_low_hz: float = 50.0
    quantile: float = 0.99
    ridge: float = 1e-6


@dataclass(frozen=True)
class AnomalyConfig:
    context: int = 2
    hidden: tuple[int, ...] = (64, 64)
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    holdout_fraction: float = 0.2
    sigma_mult: float = 3.0
    min_events: int = 20


@dataclass(frozen=True)
class SynthConfig:
    """Phenomenological switch-sound model. All values are synthetic, not measured."""

    sample_rate: int = 16000
    phase_durations_s: tuple[float, ...] = (0.3, 0.5, 0.6, 3.0, 0.6, 0.5, 0.3)
    duration_jitter: float = 0.03
    # relay chatter
    relay_amp: float = 0.25
    relay_click_s: float = 0.005
    relay_spacing_s: float = 0.02
    # motor hum: fundamental + harmonics
    motor_f0_hz: float = 100.0
    motor_f0_jitter: float = 0.01
    motor_n_harmonics: int = 6
    motor_amp: float = 0.08
    motor_gain_jitter: float = 0.12
    motor_ramp_s: float = 0.02
    motor_wobble: float = 0.03
    # lock piece impacts: damped resonance
    lock_freq_hz: float = 2000.0
    lock_decay_s: float = 0.008
    lock_amp: float = 0.12
    lock_main_amp: float = 0.3
    lock_spacing_s: float = 0.025
    lock_main_at: float = 0.5
    lock_secondary_delay_s: float = 0.06
    lock_secondary_freq_hz: float = 3200.0
    # rod friction: band-passed noise
    rod_band_hz: tuple[float, float] = (1000.0, 5000.0)
    rod_std: float = 0.04
    idle_friction_rel: float = 0.12
    # background hiss
    background_std: float = 0.001
    # degradation coefficients
    grease_gain_per_push: float = 0.5
    grease_normal_pushes: int = 4
    adhesion_stretch_per_turn: float = 0.04
    adhesion_harmonic_per_turn: float = 0.05
    adhesion_failure_turns: int = 17
    lock_shift_s_per_step: float = 0.010
    lock_secondary_beyond: int = 8
    lock_failure_left: int = 10
    abort_fraction: float = 0.6
    stall_slip_hz: float = 6.0
    stall_strain: float = 1.3


@dataclass(frozen=True)
class PipelineConfig:
    persistence_k: int = 2
    validation_fraction: float = 0.25
    machine_id: str = "machine-0"


@dataclass(frozen=True)
class Config:
    dsp: DSPConfig = field(default_factory=DSPConfig)
    snmf: SNMFConfig = field(default_factory=SNMFConfig)
    phase: PhaseConfig = field(default_factory=PhaseConfig)
    denoise: DenoiseConfig = field(default_factory=DenoiseConfig)
    anomaly: AnomalyConfig = field(default_factory=AnomalyConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def to_dict(self) -> dict[str, Any]:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def dump_toml(self) -> str:
        """Effective config rendered back as TOML (loadable by :func:`load_config`)."""
        lines = []
        for section, values in self.to_dict().items():
            lines.append(f"[{section}]")
            for key, value in values.items():
                lines.append(f"{key} = {_toml_value(value)}")
            lines.append("")
        return "\n".join(lines)


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    if isinstance(value, str):
        return json.dumps(value)
    return repr(value)


def _coerce(default: Any, value: Any) -> Any:
    """Match TOML values to the default's shape (lists -> tuples, ints -> floats)."""
    if isinstance(value, list):
        if isinstance(default, tuple) and default:
            return tuple(_coerce(default[0], v) for v in value)
        return tuple(_coerce(None, v) for v in value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def config_from_dict(data: dict[str, Any]) -> Config:
    sections = {}
    for f in dataclasses.fields(Config):
        cls = f.default_factory  # type: ignore[misc]
        raw = dict(data.get(f.name, {}))
        known = {g.name: g for g in dataclasses.fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys in [{f.name}]: {', '.join(sorted(unknown))}")
        kwargs = {}
        for key, value in raw.items():
            kwargs[key] = _coerce(getattr(cls(), key), value)
        sections[f.name] = cls(**kwargs)
    extra = set(data) - set(sections)
    if extra:
        raise ValueError(f"unknown config sections: {', '.join(sorted(extra))}")
    return Config(**sections)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ValueError(f"cannot parse config {path}: {exc}") from None
    return config_from_dict(data)
