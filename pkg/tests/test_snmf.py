import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import kl_div

from switchsound.dsp import Spectrogram
from switchsound.phase import SwitchingPhase
from switchsound.snmf import (
    ActivationMatrix,
    BasisDictionary,
    Source,
    SourceLabel,
    _nmf,
    estimate_activations,
    fit_bases,
    kl_divergence,
    source_activation,
    source_traces,
)
from switchsound.synth import generate_event


def spec(mags: np.ndarray) -> Spectrogram:
    return Spectrogram(np.asarray(mags, dtype=float), 15.625, 0.032, 2 * (mags.shape[0] - 1))


def label(src: Source, event_id: str, start: int, end: int) -> SourceLabel:
    return SourceLabel(src, ((event_id, start, end),))


def reference_kl(v, approx) -> float:
    return float(kl_div(v, approx).sum())


def test_kl_matches_reference(rng):
    v = rng.uniform(0, 2, (7, 9))
    v[0, :3] = 0.0
    a = rng.uniform(0.1, 2, (7, 9))
    assert kl_divergence(v, a) == pytest.approx(reference_kl(v, a), rel=1e-12)
    assert kl_divergence(v, v) == pytest.approx(0.0, abs=1e-12)


def test_fit_objective_non_increasing_independent_check(rng):
    v = rng.uniform(0, 1, (20, 50))
    w_fixed = np.zeros((20, 0))
    objective = []
    for k in range(0, 31):
        w, h, hist = _nmf(v, w_fixed, 3, k, np.random.default_rng(9), 1e-12, track=True)
        assert np.all(w >= 0) and np.all(h >= 0)
        objective.append(reference_kl(v, w @ h))
        assert hist[-1] == pytest.approx(objective[-1], rel=1e-9)
    assert all(b <= a + 1e-9 for a, b in zip(objective, objective[1:]))


def test_fit_bases_tracks_objective(rng):
    v = rng.uniform(0, 1, (20, 50))
    d = fit_bases([(spec(v), label(Source.Relay, "e", 0, 50))], n_per_source=3, iters=60,
                  sources=[Source.Relay], residual=None, track_objective=True)
    hist = d.fit_history["Relay"]
    assert len(hist) == 61
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_estimate_objective_non_increasing_and_nonnegative(rng):
    w = rng.uniform(0, 1, (20, 4))
    d = BasisDictionary(w / np.linalg.norm(w, axis=0), (Source.Relay,) * 2 + (Source.Motor,) * 2, 2)
    v = rng.uniform(0, 1, (20, 50))
    before = d.bases.copy()
    objective = []
    for k in range(0, 40):
        a = estimate_activations(spec(v), d, iters=k)
        assert np.all(a.activations >= 0)
        objective.append(reference_kl(v, d.bases @ a.activations))
    assert all(b <= a + 1e-9 for a, b in zip(objective, objective[1:]))
    assert np.array_equal(d.bases, before)


def test_planted_factor_recovery():
    rng = np.random.default_rng(0)
    w = rng.uniform(0.1, 1, (6, 2))
    w /= np.linalg.norm(w, axis=0)
    h_true = rng.uniform(0, 3, (2, 8))
    v = w @ h_true
    d = BasisDictionary(w, (Source.Relay, Source.Motor), 1)
    a = estimate_activations(spec(v), d, iters=3000)
    err = np.linalg.norm(v - w @ a.activations) / np.linalg.norm(v)
    assert err < 1e-3


def test_disjoint_supports():
    rng = np.random.default_rng(1)
    a = np.zeros((20, 30))
    a[:10] = rng.uniform(0.5, 1.5, (10, 30))
    b = np.zeros((20, 30))
    b[10:] = rng.uniform(0.5, 1.5, (10, 30))
    d = fit_bases([(spec(a), label(Source.Relay, "a", 0, 30)), (spec(b), label(Source.Motor, "b", 0, 30))],
                  n_per_source=3, iters=200, sources=[Source.Relay, Source.Motor], residual=None)
    for src, support in ((Source.Relay, slice(0, 10)), (Source.Motor, slice(10, 20))):
        for col in d.bases[:, d.columns_of(src)].T:
            assert col[support].sum() / col.sum() >= 0.99


def test_rank_one_exact():
    v = np.abs(np.random.default_rng(2).standard_normal(12)) + 0.1
    frames = np.tile(v[:, None], (1, 15))
    d = fit_bases([(spec(frames), label(Source.Rod, "e", 0, 15))], n_per_source=1, iters=50,
                  sources=[Source.Rod], residual=None)
    np.testing.assert_allclose(d.bases[:, 0], v / np.linalg.norm(v), atol=1e-9)


def test_columns_normalized_and_owned(bundle):
    d = bundle.dictionary
    np.testing.assert_allclose(np.linalg.norm(d.bases, axis=0), 1.0, atol=1e-12)
    assert np.all(d.bases >= 0)
    assert d.n_components == 5 * d.n_per_source
    assert sorted(len(d.columns_of(s)) for s in Source) == [d.n_per_source] * 5


def test_fit_errors(rng):
    v = rng.uniform(0, 1, (8, 10))
    with pytest.raises(ValueError, match="unlabeled source: Rod"):
        fit_bases([(spec(v), label(Source.Relay, "e", 0, 10))], sources=[Source.Relay, Source.Rod])
    bad = v.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="invalid spectrogram"):
        fit_bases([(spec(bad), label(Source.Relay, "e", 0, 10))], sources=[Source.Relay])
    with pytest.raises(ValueError, match="unlabeled source"):
        fit_bases([])
    with pytest.raises(ValueError, match="outside"):
        fit_bases([(spec(v), label(Source.Relay, "e", 0, 11))], sources=[Source.Relay])


def test_fit_deterministic(rng):
    v = rng.uniform(0, 1, (10, 20))
    labeled = [(spec(v), label(Source.Relay, "e", 0, 20))]
    a = fit_bases(labeled, 2, 30, seed=3, sources=[Source.Relay], residual=None)
    b = fit_bases(labeled, 2, 30, seed=3, sources=[Source.Relay], residual=None)
    assert np.array_equal(a.bases, b.bases)


def test_zero_spectrogram_gives_zero_activations(rng):
    w = rng.uniform(0, 1, (10, 2))
    d = BasisDictionary(w / np.linalg.norm(w, axis=0), (Source.Relay, Source.Motor), 1)
    a = estimate_activations(spec(np.zeros((10, 6))), d)
    assert np.max(a.activations) < 1e-9
    assert np.linalg.norm(d.bases @ a.activations) < 1e-8


def test_mismatch_error(rng):
    d = BasisDictionary(np.ones((10, 1)) / np.sqrt(10), (Source.Relay,), 1)
    with pytest.raises(ValueError, match="dictionary/spectrogram mismatch"):
        estimate_activations(spec(np.ones((12, 3))), d)


def test_source_activation_basics(rng):
    d = BasisDictionary(np.eye(3), (Source.Relay, Source.Motor, Source.Rod), 1)
    h = rng.uniform(0, 1, (3, 5))
    a = ActivationMatrix(h, 0.032)
    np.testing.assert_array_equal(source_activation(a, d, "Motor"), h[1])
    zero = ActivationMatrix(np.zeros((3, 5)), 0.032)
    assert not source_activation(zero, d, Source.Rod).any()
    with pytest.raises(KeyError, match="LockPiece"):
        source_activation(a, d, Source.LockPiece)


@settings(max_examples=15, deadline=None)
@given(st.permutations(list(range(6))), st.integers(0, 1000))
def test_permuting_columns_leaves_traces_unchanged(perm, seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.01, 1, (12, 6))
    w /= np.linalg.norm(w, axis=0)
    owners = (Source.Relay, Source.Relay, Source.Motor, Source.Motor, Source.Rod, Source.Rod)
    v = rng.uniform(0, 1, (12, 9))
    d1 = BasisDictionary(w, owners, 2)
    d2 = BasisDictionary(w[:, perm], tuple(owners[i] for i in perm), 2)
    t1 = source_traces(estimate_activations(spec(v), d1, 50), d1)
    t2 = source_traces(estimate_activations(spec(v), d2, 50), d2)
    for src in t1:
        np.testing.assert_allclose(t1[src], t2[src], rtol=1e-9, atol=1e-12)


def test_dictionary_roundtrip(bundle, tmp_path):
    d = bundle.dictionary
    path = tmp_path / "d.json"
    d.save(path)
    back = BasisDictionary.load(path)
    np.testing.assert_allclose(back.bases, d.bases, rtol=1e-9, atol=0)
    assert back.component_owner == d.component_owner
    assert back.bin_hz == d.bin_hz
    text = path.read_text().replace('"version": 1', '"version": 2')
    with pytest.raises(ValueError, match="unsupported"):
        BasisDictionary.from_json(text)


def test_motor_dominates_idle_frames(bundle, masked_spec):
    wave, truth = generate_event(seed=321)
    s = masked_spec(wave)
    traces = source_traces(
        estimate_activations(s, bundle.dictionary, bundle.config.snmf.estimate_iters), bundle.dictionary
    )
    b = truth.boundaries(s.n_frames, s.hop_s, s.window_len / s.sample_rate)
    for p in (SwitchingPhase.IdleBeforeMoving, SwitchingPhase.IdleAfterMoving):
        # frames whose window lies wholly inside the phase
        frames = range(b[p] + 1, b[p + 1] - 1)
        for t in frames:
            for src in (Source.Relay, Source.LockPiece, Source.Rod, Source.Background):
                assert traces[Source.Motor][t] >= 5 * traces[src][t], (p.name, t, src.value)


def test_relay_peak_in_routines(bundle, masked_spec):
    for seed in (5, 6, 7):
        wave, truth = generate_event(seed=seed)
        s = masked_spec(wave)
        relay = source_traces(estimate_activations(s, bundle.dictionary), bundle.dictionary)[Source.Relay]
        b = truth.boundaries(s.n_frames, s.hop_s, s.window_len / s.sample_rate)
        peak = int(np.argmax(relay))
        in_start = peak < b[1] + 2
        in_end = peak >= b[6] - 2
        assert in_start or in_end
