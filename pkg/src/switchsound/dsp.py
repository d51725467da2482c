"""Time-frequency primitives: magnitude STFT, band masking, frame power, WAV I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.io import wavfile


class SignalError(ValueError):
    """Raised for unusable input signals (too short, non-finite, silent...)."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int
    event_id: str = ""
    captured_at: Optional[str] = None

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # [n_bins, n_frames]
    bin_hz: float
    hop_s: float
    window_len: int

    @property
    def n_bins(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[1]

    @property
    def sample_rate(self) -> float:
        return self.bin_hz * self.window_len

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_hz

    def with_magnitudes(self, magnitudes: np.ndarray) -> "Spectrogram":
        return Spectrogram(magnitudes, self.bin_hz, self.hop_s, self.window_len)


@dataclass(frozen=True)
class BandMask:
    keep: tuple[tuple[float, float], ...]

    def __post_init__(self):
        keep = tuple((float(lo), float(hi)) for lo, hi in self.keep)
        object.__setattr__(self, "keep", keep)
        for lo, hi in keep:
            if lo < 0 or hi < lo:
                raise ValueError(f"invalid band ({lo}, {hi})")
        for (_, hi), (lo, _) in zip(keep, keep[1:]):
            if lo <= hi:
                raise ValueError("band intervals must be sorted and non-overlapping")

    def validate(self, nyquist: float) -> None:
        if not self.keep:
            raise ValueError("mask removes entire spectrum")
        if self.keep[-1][1] > nyquist + 1e-9:
            raise ValueError(f"band edge {self.keep[-1][1]} Hz exceeds Nyquist {nyquist} Hz")

    def keep_bins(self, freqs: np.ndarray) -> np.ndarray:
        keep = np.zeros(len(freqs), dtype=bool)
        for lo, hi in self.keep:
            keep |= (freqs >= lo) & (freqs <= hi)
        return keep


def hann(window_len: int) -> np.ndarray:
    """Periodic Hann window."""
    n = np.arange(window_len)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / window_len)


def stft(w: Waveform, window_len: int = 1024, hop: int = 512) -> Spectrogram:
    """Magnitude STFT with a periodic Hann window.

    Frame ``t`` covers samples ``[t*hop, t*hop + window_len)``; frames are
    emitted while their start lies inside the clip, with the tail zero-padded,
    so there are ``ceil(len / hop)`` frames.
    """
    if window_len <= 0 or window_len & (window_len - 1):
        raise ValueError("window_len must be a power of two")
    if not 0 < hop <= window_len:
        raise ValueError("hop must satisfy 0 < hop <= window_len")
    x = np.asarray(w.samples, dtype=np.float64)
    if x.ndim != 1:
        raise SignalError("invalid signal: expected mono samples")
    if len(x) < window_len:
        raise SignalError("clip too short")
    if not np.all(np.isfinite(x)):
        raise SignalError("invalid signal")

    n_frames = -(-len(x) // hop)
    padded = np.zeros((n_frames - 1) * hop + window_len)
    padded[: len(x)] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, window_len)[::hop][:n_frames]
    mags = np.abs(np.fft.rfft(frames * hann(window_len), axis=1)).T
    return Spectrogram(
        magnitudes=np.ascontiguousarray(mags),
        bin_hz=w.sample_rate / window_len,
        hop_s=hop / w.sample_rate,
        window_len=window_len,
    )


def apply_band_mask(s: Spectrogram, m: BandMask) -> Spectrogram:
    """Zero every bin outside the mask's keep-intervals; kept bins are untouched."""
    m.validate(nyquist=(s.n_bins - 1) * s.bin_hz)
    out = s.magnitudes.copy()
    out[~m.keep_bins(s.freqs)] = 0.0
    return s.with_magnitudes(out)


def frame_power(s: Spectrogram) -> np.ndarray:
    return np.sum(s.magnitudes**2, axis=0)


def frame_of_time(t_s: float, hop_s: float) -> int:
    """Index of the first frame starting at or after ``t_s``."""
    return int(np.ceil(t_s / hop_s - 1e-9))


def read_wav(path: str | Path, event_id: Optional[str] = None) -> Waveform:
    """Load a mono PCM16 or float32 WAV, normalized to [-1, 1]."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise FileNotFoundError(f"WAV file not found: {path}") from None
    except ValueError as exc:
        raise SignalError(f"unreadable WAV {path}: {exc}") from None
    if data.ndim != 1:
        raise SignalError(f"{path}: multi-channel WAV ({data.shape[1]} channels); mono required")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise SignalError(f"{path}: unsupported sample format {data.dtype}; use PCM16 or float32")
    return Waveform(samples, int(rate), event_id if event_id is not None else path.stem)


def to_pcm16(samples: Sequence[float]) -> np.ndarray:
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 32767 / 32768)
    return np.round(x * 32768.0).astype(np.int16)


def write_wav(path: str | Path, w: Waveform) -> None:
    wavfile.write(Path(path), w.sample_rate, to_pcm16(w.samples))
