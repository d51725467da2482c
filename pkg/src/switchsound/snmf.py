"""Semi-supervised NMF: per-source timbre bases from labeled frames, then
activation estimation against the frozen dictionary.

All factorizations minimize the generalized Kullback-Leibler divergence with
the standard multiplicative updates.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .dsp import Spectrogram

EPS = 1e-12
DICTIONARY_SCHEMA = "switchsound/dictionary"
DICTIONARY_VERSION = 1


class Source(enum.Enum):
    Relay = "Relay"
    Motor = "Motor"
    LockPiece = "LockPiece"
    Rod = "Rod"
    Background = "Background"


@dataclass(frozen=True)
class SourceLabel:
    name: Source
    segments: tuple[tuple[str, int, int], ...]  # (event_id, start_frame, end_frame)


@dataclass(frozen=True)
class BasisDictionary:
    bases: np.ndarray  # [n_bins, n_components], unit-norm columns
    component_owner: tuple[Source, ...]
    n_per_source: int
    bin_hz: float = 0.0
    fit_history: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_bins(self) -> int:
        return self.bases.shape[0]

    @property
    def n_components(self) -> int:
        return self.bases.shape[1]

    @property
    def sources(self) -> tuple[Source, ...]:
        return tuple(dict.fromkeys(self.component_owner))

    def columns_of(self, source: Source) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.component_owner) if s is source], dtype=int)

    def to_json(self) -> str:
        payload = {
            "schema": DICTIONARY_SCHEMA,
            "version": DICTIONARY_VERSION,
            "n_bins": self.n_bins,
            "bin_hz": self.bin_hz,
            "n_per_source": self.n_per_source,
            "component_owner": [s.value for s in self.component_owner],
            "columns": [self.bases[:, k].tolist() for k in range(self.n_components)],
        }
        return json.dumps(payload, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BasisDictionary":
        payload = json.loads(text)
        _check_schema(payload, DICTIONARY_SCHEMA, DICTIONARY_VERSION)
        bases = np.array(payload["columns"], dtype=np.float64).T.reshape(payload["n_bins"], -1)
        return cls(
            bases=np.ascontiguousarray(bases),
            component_owner=tuple(Source(s) for s in payload["component_owner"]),
            n_per_source=int(payload["n_per_source"]),
            bin_hz=float(payload["bin_hz"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "BasisDictionary":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class ActivationMatrix:
    activations: np.ndarray  # [n_components, n_frames]
    hop_s: float
    objective: tuple[float, ...] = field(default=(), compare=False, repr=False)

    @property
    def n_frames(self) -> int:
        return self.activations.shape[1]


def _check_schema(payload: dict, schema: str, version: int) -> None:
    if payload.get("schema") != schema:
        raise ValueError(f"expected schema {schema!r}, got {payload.get('schema')!r}")
    if payload.get("version") != version:
        raise ValueError(f"unsupported {schema} version {payload.get('version')}; expected {version}")


def kl_divergence(v: np.ndarray, approx: np.ndarray) -> float:
    """Generalized KL divergence D(v || approx), with 0 log 0 = 0."""
    safe = np.maximum(approx, EPS)
    nz = v > 0
    return float(np.sum(v[nz] * np.log(v[nz] / safe[nz])) - v.sum() + approx.sum())


def _nmf(
    v: np.ndarray,
    w_fixed: np.ndarray,
    n_free: int,
    iters: int,
    rng: np.random.Generator,
    eps: float,
    track: bool = False,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """KL-NMF where the first columns of W are frozen; returns (W_free, H, objective)."""
    n_bins, n_frames = v.shape
    w_free = rng.uniform(0.0, 1.0, size=(n_bins, n_free)) + eps
    w = np.hstack([w_fixed, w_free])
    k = w.shape[1]
    h = rng.uniform(0.0, 1.0, size=(k, n_frames)) + eps
    scale = v.mean() / max(float((w @ h).mean()), eps)
    h *= scale
    n_fixed = w_fixed.shape[1]
    history = [kl_divergence(v, w @ h)] if track else []
    for _ in range(iters):
        wh = w @ h
        h *= (w.T @ (v / (wh + eps))) / (w.sum(axis=0)[:, None] + eps)
        if n_free:
            wh = w @ h
            w[:, n_fixed:] *= ((v / (wh + eps)) @ h[n_fixed:].T) / (h[n_fixed:].sum(axis=1)[None, :] + eps)
        if track:
            history.append(kl_divergence(v, w @ h))
    return w[:, n_fixed:], h, history


def _normalize_columns(w: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(w, axis=0)
    return w / np.where(norms > 0, norms, 1.0)


def fit_bases(
    labeled: Sequence[tuple[Spectrogram, SourceLabel]],
    n_per_source: int = 4,
    iters: int = 200,
    seed: int = 0,
    sources: Optional[Iterable[Source]] = None,
    residual: Optional[Source] = Source.Background,
    eps: float = EPS,
    max_frames: int = 2000,
    track_objective: bool = False,
) -> BasisDictionary:
    """Learn ``n_per_source`` bases per source from its labeled frames.

    Frames labeled by one source only are factorized on their own. A source
    whose frames are all shared with other sources is factorized with those
    sources' already-fitted bases held fixed, so its new columns capture what
    they leave unexplained. The ``residual`` source is fitted last against
    every other source's bases.

    Sources with more than ``max_frames`` labeled frames are thinned to an
    evenly strided subset. ``track_objective`` records the KL objective after
    every iteration in ``fit_history``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    frames: dict[Source, dict[tuple[str, int], np.ndarray]] = {}
    bin_hz = 0.0
    n_bins = None
    for spec, label in labeled:
        mags = spec.magnitudes
        if not np.all(np.isfinite(mags)) or np.any(mags < 0):
            raise ValueError("invalid spectrogram")
        if n_bins is None:
            n_bins, bin_hz = spec.n_bins, spec.bin_hz
        elif spec.n_bins != n_bins:
            raise ValueError("labeled spectrograms disagree on bin count")
        bucket = frames.setdefault(label.name, {})
        for event_id, start, end in label.segments:
            if not 0 <= start <= end <= spec.n_frames:
                raise ValueError(f"segment ({start}, {end}) outside event {event_id!r}")
            for t in range(start, end):
                bucket[(event_id, t)] = mags[:, t]

    wanted = list(sources) if sources is not None else list(Source)
    for src in wanted:
        if not frames.get(src):
            raise ValueError(f"unlabeled source: {src.value}")
        if len(frames[src]) < n_per_source:
            raise ValueError(
                f"source {src.value} has {len(frames[src])} labeled frames; need >= {n_per_source}"
            )

    rng = np.random.default_rng(seed)
    fitted: dict[Source, np.ndarray] = {}
    history: dict[str, list[float]] = {}
    foreground = [s for s in wanted if s is not residual]

    def matrix(keys) -> np.ndarray:
        keys = list(keys)
        if len(keys) > max_frames:
            keys = keys[:: -(-len(keys) // max_frames)]
        return np.stack([all_frames[key] for key in keys], axis=1)

    all_frames: dict[tuple[str, int], np.ndarray] = {}
    for src in wanted:
        all_frames.update(frames[src])

    def others_on(src: Source) -> list[Source]:
        keys = frames[src].keys()
        return [o for o in foreground if o is not src and keys & frames[o].keys()]

    deferred = []
    for src in foreground:
        others = set().union(*(frames[o].keys() for o in foreground if o is not src))
        exclusive = [key for key in frames[src] if key not in others]
        if len(exclusive) >= n_per_source:
            w, _, hist = _nmf(matrix(exclusive), np.zeros((n_bins, 0)), n_per_source, iters, rng, eps, track_objective)
            fitted[src] = _normalize_columns(w)
            history[src.value] = hist
        else:
            deferred.append(src)

    for src in deferred:
        fixed = [fitted[o] for o in others_on(src) if o in fitted]
        w_fixed = np.hstack(fixed) if fixed else np.zeros((n_bins, 0))
        w, _, hist = _nmf(matrix(list(frames[src])), w_fixed, n_per_source, iters, rng, eps, track_objective)
        fitted[src] = _normalize_columns(w)
        history[src.value] = hist

    if residual is not None and residual in wanted:
        w_fixed = np.hstack([fitted[s] for s in foreground]) if foreground else np.zeros((n_bins, 0))
        w, _, hist = _nmf(matrix(list(frames[residual])), w_fixed, n_per_source, iters, rng, eps, track_objective)
        fitted[residual] = _normalize_columns(w)
        history[residual.value] = hist

    order = [s for s in wanted if s in fitted]
    bases = np.hstack([fitted[s] for s in order])
    owners = tuple(s for s in order for _ in range(n_per_source))
    return BasisDictionary(
        bases=bases, component_owner=owners, n_per_source=n_per_source,
        bin_hz=bin_hz, fit_history=history,
    )


def estimate_activations(
    s: Spectrogram, d: BasisDictionary, iters: int = 200, eps: float = EPS,
    track_objective: bool = False,
) -> ActivationMatrix:
    """Multiplicative H-updates against the frozen dictionary, from a uniform start."""
    v = s.magnitudes
    if v.shape[0] != d.n_bins:
        raise ValueError(
            f"dictionary/spectrogram mismatch: {d.n_bins} dictionary bins vs {v.shape[0]} spectrogram bins"
        )
    w = d.bases
    k, n_frames = d.n_components, v.shape[1]
    level = v.sum() / max(float(w.sum()) * n_frames, eps)
    h = np.full((k, n_frames), max(level, 1e-6))
    col_sums = w.sum(axis=0)[:, None] + eps
    history = [kl_divergence(v, w @ h)] if track_objective else []
    for _ in range(iters):
        h *= (w.T @ (v / (w @ h + eps))) / col_sums
        if track_objective:
            history.append(kl_divergence(v, w @ h))
    return ActivationMatrix(activations=h, hop_s=s.hop_s, objective=tuple(history))


def source_activation(a: ActivationMatrix, d: BasisDictionary, source: Source | str) -> np.ndarray:
    source = Source(source) if not isinstance(source, Source) else source
    cols = d.columns_of(source)
    if cols.size == 0:
        raise KeyError(f"unknown source {source.value!r} for this dictionary")
    return a.activations[cols].sum(axis=0)


def source_traces(a: ActivationMatrix, d: BasisDictionary) -> dict[Source, np.ndarray]:
    return {src: source_activation(a, d, src) for src in d.sources}
