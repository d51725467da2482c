"""Disturbance screening, band masking defaults and the persistence rule.

Screening works in a small feature space (band-energy ratios plus spectral
centroid statistics and duration): a Mahalanobis model of known-clean
switching clips flags recordings that sit far from that cluster.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dsp import SignalError, Spectrogram

CLEANLINESS_SCHEMA = "switchsound/cleanliness"
CLEANLINESS_VERSION = 1
MIN_CLEAN_CLIPS = 10


class InsufficientTrainingData(ValueError):
    pass


def band_edges(nyquist: float, n_bands: int = 8, low_hz: float = 50.0) -> np.ndarray:
    """Log-spaced band edges; the first band is extended down to 0 Hz."""
    edges = np.geomspace(low_hz, nyquist, n_bands + 1)
    edges[0] = 0.0
    return edges


@dataclass(frozen=True)
class ClipFeatures:
    band_energy_ratios: np.ndarray
    spectral_centroid_mean: float
    spectral_centroid_var: float
    duration_s: float

    def vector(self) -> np.ndarray:
        return np.concatenate([
            self.band_energy_ratios,
            [self.spectral_centroid_mean, self.spectral_centroid_var, self.duration_s],
        ])


def extract_clip_features(s: Spectrogram, n_bands: int = 8, low_hz: float = 50.0) -> ClipFeatures:
    mags = s.magnitudes
    if mags.size == 0:
        raise SignalError("empty spectrogram")
    energy = mags**2
    if not np.any(energy > 0):
        raise SignalError("silent clip")
    freqs = s.freqs
    edges = band_edges(freqs[-1], n_bands, low_hz)
    band = np.clip(np.searchsorted(edges, freqs, side="right") - 1, 0, n_bands - 1)
    per_band = np.bincount(band, weights=energy.sum(axis=1), minlength=n_bands)
    ratios = per_band / per_band.sum()

    frame_mass = mags.sum(axis=0)
    live = frame_mass > 0
    centroids = (freqs @ mags[:, live]) / frame_mass[live]
    return ClipFeatures(
        band_energy_ratios=ratios,
        spectral_centroid_mean=float(centroids.mean()),
        spectral_centroid_var=float(centroids.var()),
        duration_s=s.n_frames * s.hop_s,
    )


class ScreenVerdict(enum.Enum):
    Clean = "Clean"
    Contaminated = "Contaminated"


@dataclass(frozen=True)
class CleanlinessModel:
    """Mahalanobis model held in per-feature standardized coordinates.

    ``covariance`` is the (ridge-regularized) covariance of the standardized
    features, so the distance is unchanged by any per-feature rescaling.
    """

    mean: np.ndarray
    scale: np.ndarray
    covariance: np.ndarray
    threshold: float

    def distance(self, features: ClipFeatures | np.ndarray) -> float:
        x = features.vector() if isinstance(features, ClipFeatures) else np.asarray(features, dtype=float)
        z = (x - self.mean) / self.scale
        return float(np.sqrt(max(z @ np.linalg.solve(self.covariance, z), 0.0)))

    def to_json(self) -> str:
        return json.dumps({
            "schema": CLEANLINESS_SCHEMA,
            "version": CLEANLINESS_VERSION,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "covariance": self.covariance.tolist(),
            "threshold": self.threshold,
        }, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CleanlinessModel":
        payload = json.loads(text)
        if payload.get("schema") != CLEANLINESS_SCHEMA or payload.get("version") != CLEANLINESS_VERSION:
            raise ValueError(f"not a {CLEANLINESS_SCHEMA} v{CLEANLINESS_VERSION} file")
        return cls(
            mean=np.array(payload["mean"], dtype=float),
            scale=np.array(payload["scale"], dtype=float),
            covariance=np.array(payload["covariance"], dtype=float),
            threshold=float(payload["threshold"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "CleanlinessModel":
        return cls.from_json(Path(path).read_text())


def fit_cleanliness(
    features: Sequence[ClipFeatures | np.ndarray], quantile: float = 0.99, ridge: float = 1e-6
) -> CleanlinessModel:
    if not 0 < quantile < 1:
        raise ValueError("quantile must be in (0, 1)")
    x = np.stack([f.vector() if isinstance(f, ClipFeatures) else np.asarray(f, float) for f in features]) \
        if len(features) else np.empty((0, 0))
    n = x.shape[0]
    if n < MIN_CLEAN_CLIPS:
        raise InsufficientTrainingData(
            f"insufficient training data: {n} clean clips, need >= {MIN_CLEAN_CLIPS}"
        )
    dim = x.shape[1]
    if n < dim:
        ridge = max(ridge, 1e-2)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    # constant features (up to rounding in the mean) carry no information
    scale = np.where(std > 1e-12 * np.maximum(np.abs(mean), 1.0), std, 1.0)
    z = (x - mean) / scale
    cov = (z.T @ z) / max(n - 1, 1) + ridge * np.eye(dim)
    model = CleanlinessModel(mean=mean, scale=scale, covariance=cov, threshold=np.inf)
    dists = np.array([model.distance(row) for row in x])
    threshold = float(np.quantile(dists, quantile))
    return CleanlinessModel(mean=mean, scale=scale, covariance=cov, threshold=max(threshold, 1e-12))


@dataclass(frozen=True)
class ScreenResult:
    verdict: ScreenVerdict
    distance: float


def screen_event(s: Spectrogram, m: CleanlinessModel, n_bands: int = 8, low_hz: float = 50.0) -> ScreenResult:
    d = m.distance(extract_clip_features(s, n_bands, low_hz))
    return ScreenResult(ScreenVerdict.Contaminated if d > m.threshold else ScreenVerdict.Clean, d)


class PersistenceVerdict(enum.Enum):
    PersistentAnomaly = "PersistentAnomaly"
    TransientDisturbance = "TransientDisturbance"
    Normal = "Normal"


def persistence_check(
    events: Sequence[tuple[str, Mapping[str, float]]],
    thresholds: Mapping[str, float],
    k: int = 2,
) -> dict[str, PersistenceVerdict]:
    """Per-phase verdicts over an ordered run of scored events.

    A phase is a persistent anomaly when its score exceeds its threshold in at
    least ``k`` consecutive events, a transient disturbance when it exceeds
    only in shorter runs, and normal when it never exceeds.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(events) < k:
        raise ValueError(f"need at least k={k} events, got {len(events)}")
    phases = list(events[0][1])
    for event_id, scores in events:
        if set(scores) != set(phases):
            raise ValueError(f"event {event_id!r} has mismatched phases")
    out = {}
    for p in phases:
        run = longest = 0
        for _, scores in events:
            run = run + 1 if scores[p] > thresholds[p] else 0
            longest = max(longest, run)
        if longest >= k:
            out[p] = PersistenceVerdict.PersistentAnomaly
        elif longest > 0:
            out[p] = PersistenceVerdict.TransientDisturbance
        else:
            out[p] = PersistenceVerdict.Normal
    return out
