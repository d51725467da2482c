import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from switchsound.dsp import (
    BandMask,
    SignalError,
    Spectrogram,
    Waveform,
    apply_band_mask,
    frame_power,
    hann,
    read_wav,
    stft,
    write_wav,
)
from switchsound.phase import SwitchingPhase
from switchsound.synth import generate_event

SR = 16000


def brute_dft_mags(frame: np.ndarray) -> np.ndarray:
    """One-sided |DFT| by the defining sum, window applied explicitly."""
    n = len(frame)
    idx = np.arange(n)
    window = np.array([0.5 - 0.5 * np.cos(2 * np.pi * i / n) for i in idx])
    k = np.arange(n // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * idx[None, :] / n)
    return np.abs(basis @ (frame * window))


def test_zero_clip_gives_zero_matrix():
    s = stft(Waveform(np.zeros(SR), SR), 1024, 512)
    assert s.magnitudes.shape == (513, 32)
    assert not s.magnitudes.any()


def test_frame_count_and_bins():
    for n in (1024, 1025, 1536, 16000, 16001):
        s = stft(Waveform(np.ones(n), SR), 1024, 512)
        assert s.n_frames == -(-n // 512)
        assert s.n_bins == 513
    assert s.bin_hz == pytest.approx(15.625)
    assert s.hop_s == pytest.approx(0.032)


def test_sine_peak_bin_matches_brute_force():
    t = np.arange(SR) / SR
    x = np.sin(2 * np.pi * 1000 * t)
    s = stft(Waveform(x, SR), 1024, 512)
    assert round(1000 / s.bin_hz) == 64
    assert np.all(np.argmax(s.magnitudes[:, :-2], axis=0) == 64)
    for frame_index in (0, 7, 20):
        frame = x[frame_index * 512: frame_index * 512 + 1024]
        ref = brute_dft_mags(frame)
        assert np.argmax(ref) == 64
        np.testing.assert_allclose(s.magnitudes[:, frame_index], ref, atol=1e-9)


def test_last_frame_is_zero_padded():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(2000)
    s = stft(Waveform(x, SR), 1024, 512)
    last = np.zeros(1024)
    tail = x[3 * 512:]
    last[: len(tail)] = tail
    np.testing.assert_allclose(s.magnitudes[:, 3], brute_dft_mags(last), atol=1e-9)


def test_white_noise_is_spectrally_flat():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(SR)
    s = stft(Waveform(x, SR), 1024, 512)
    for t in range(0, (SR - 1024) // 512 + 1, 4):
        power = brute_dft_mags(x[t * 512: t * 512 + 1024])[1:-1] ** 2
        flatness = np.exp(np.mean(np.log(power))) / np.mean(power)
        assert flatness > 0.5
        np.testing.assert_allclose(s.magnitudes[1:-1, t] ** 2, power, rtol=1e-8)


def _two_sided_energy(s: Spectrogram) -> np.ndarray:
    m2 = s.magnitudes**2
    return 2 * m2.sum(axis=0) - m2[0] - m2[-1]


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.integers(1024, 6000), elements=st.floats(-1, 1)),
       st.sampled_from([(256, 64), (512, 256), (1024, 512), (1024, 1024)]))
def test_parseval_exact_window_weighting(x, shape):
    window_len, hop = shape
    s = stft(Waveform(x, SR), window_len, hop)
    w2 = hann(window_len) ** 2
    weight = np.zeros((s.n_frames - 1) * hop + window_len)
    for t in range(s.n_frames):
        weight[t * hop: t * hop + window_len] += w2
    expected = window_len * np.sum(x**2 * weight[: len(x)])
    assert np.sum(_two_sided_energy(s)) == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_parseval_analytic_hann_overlap_factor():
    # periodic Hann: mean(w^2) = 3/8, so each sample carries window_len * 3/8 / hop on average
    rng = np.random.default_rng(2)
    x = 0.1 * rng.standard_normal(4 * SR)
    for window_len, hop in ((1024, 512), (1024, 256), (512, 128)):
        s = stft(Waveform(x, SR), window_len, hop)
        analytic = window_len * (3 / 8) * window_len / hop * np.sum(x**2)
        assert np.sum(_two_sided_energy(s)) == pytest.approx(analytic, rel=0.01)


def test_stft_errors():
    with pytest.raises(SignalError, match="clip too short"):
        stft(Waveform(np.zeros(1000), SR))
    bad = np.zeros(2048)
    bad[5] = np.nan
    with pytest.raises(SignalError, match="invalid signal"):
        stft(Waveform(bad, SR))
    with pytest.raises(ValueError, match="power of two"):
        stft(Waveform(np.zeros(4000), SR), 1000, 500)
    with pytest.raises(ValueError, match="hop"):
        stft(Waveform(np.zeros(4000), SR), 1024, 2048)


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, st.integers(1024, 4000), elements=st.floats(-1, 1)))
def test_stft_deterministic_and_nonnegative(x):
    a = stft(Waveform(x, SR))
    b = stft(Waveform(x.copy(), SR))
    assert np.array_equal(a.magnitudes, b.magnitudes)
    assert np.all(a.magnitudes >= 0)


def _band_energy(s: Spectrogram, lo: float, hi: float) -> float:
    sel = (s.freqs >= lo) & (s.freqs <= hi)
    return float(sum(s.magnitudes[k, t] ** 2 for k in np.flatnonzero(sel) for t in range(s.n_frames)))


def test_mask_two_tone():
    t = np.arange(SR) / SR
    x = np.sin(2 * np.pi * 500 * t) + np.sin(2 * np.pi * 6000 * t)
    s = stft(Waveform(x, SR))
    masked = apply_band_mask(s, BandMask(((0.0, 2000.0),)))
    assert _band_energy(masked, 5800, 6200) == 0.0
    assert _band_energy(masked, 300, 700) == pytest.approx(_band_energy(s, 300, 700), abs=1e-9)


def test_mask_identity_zero_and_idempotent():
    rng = np.random.default_rng(3)
    s = stft(Waveform(rng.standard_normal(4000), SR))
    full = BandMask(((0.0, 8000.0),))
    assert np.array_equal(apply_band_mask(s, full).magnitudes, s.magnitudes)
    zero = s.with_magnitudes(np.zeros_like(s.magnitudes))
    assert not apply_band_mask(zero, BandMask(((50.0, 6000.0),))).magnitudes.any()
    m = BandMask(((100.0, 900.0), (2000.0, 3000.0)))
    once = apply_band_mask(s, m)
    assert np.array_equal(apply_band_mask(once, m).magnitudes, once.magnitudes)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 8000), min_size=2, max_size=6, unique=True))
def test_mask_keeps_bins_bitwise(edges):
    edges = sorted(edges)
    if len(edges) % 2:
        edges = edges[:-1]
    keep = tuple((edges[i], edges[i + 1]) for i in range(0, len(edges), 2))
    # adjacent intervals must not touch
    if any(b[0] <= a[1] for a, b in zip(keep, keep[1:])):
        return
    rng = np.random.default_rng(4)
    s = stft(Waveform(rng.standard_normal(3000), SR))
    m = BandMask(keep)
    out = apply_band_mask(s, m)
    kept = m.keep_bins(s.freqs)
    assert np.array_equal(out.magnitudes[kept], s.magnitudes[kept])
    assert not out.magnitudes[~kept].any()
    assert out.magnitudes.shape == s.magnitudes.shape


def test_mask_validation():
    s = stft(Waveform(np.zeros(2048), SR))
    with pytest.raises(ValueError, match="mask removes entire spectrum"):
        apply_band_mask(s, BandMask(()))
    with pytest.raises(ValueError, match="Nyquist"):
        apply_band_mask(s, BandMask(((0.0, 9000.0),)))
    with pytest.raises(ValueError):
        BandMask(((100.0, 50.0),))
    with pytest.raises(ValueError, match="non-overlapping"):
        BandMask(((0.0, 500.0), (400.0, 900.0)))


def test_frame_power():
    s = Spectrogram(np.array([[3.0], [4.0]]), 1.0, 1.0, 2)
    assert frame_power(s).tolist() == [25.0]
    zero = Spectrogram(np.zeros((5, 4)), 1.0, 1.0, 8)
    assert frame_power(zero).tolist() == [0.0] * 4


def test_motor_hum_power_rail_above_idle():
    wave, truth = generate_event(seed=11)
    s = stft(wave)
    power = frame_power(s)
    b = truth.boundaries(s.n_frames, s.hop_s, s.window_len / SR)

    def mean_power(p):
        return sum(power[b[p]: b[p + 1]]) / (b[p + 1] - b[p])

    rail = mean_power(SwitchingPhase.MovingRail)
    assert rail > mean_power(SwitchingPhase.IdleBeforeMoving)
    assert rail > mean_power(SwitchingPhase.IdleAfterMoving)


def test_wav_roundtrip_and_rejections(tmp_path):
    from scipy.io import wavfile

    rng = np.random.default_rng(5)
    x = np.clip(0.3 * rng.standard_normal(2000), -1, 1)
    path = tmp_path / "a.wav"
    write_wav(path, Waveform(x, SR, "a"))
    back = read_wav(path)
    assert back.sample_rate == SR and back.event_id == "a"
    assert np.max(np.abs(back.samples - x)) <= 1 / 32768

    wavfile.write(tmp_path / "f.wav", SR, x.astype(np.float32))
    assert np.allclose(read_wav(tmp_path / "f.wav").samples, x, atol=1e-7)

    wavfile.write(tmp_path / "stereo.wav", SR, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(SignalError, match="mono"):
        read_wav(tmp_path / "stereo.wav")
    wavfile.write(tmp_path / "i32.wav", SR, np.zeros(100, dtype=np.int32))
    with pytest.raises(SignalError, match="unsupported"):
        read_wav(tmp_path / "i32.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav")
    with pytest.raises(SignalError, match="unreadable"):
        read_wav(tmp_path / "junk.wav")
    with pytest.raises(FileNotFoundError, match="not found"):
        read_wav(tmp_path / "missing.wav")
