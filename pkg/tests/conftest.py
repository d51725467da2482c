from __future__ import annotations

import numpy as np
import pytest

from switchsound.config import Config
from switchsound.dsp import BandMask, apply_band_mask, stft
from switchsound.pipeline import experiment_ladder, train_bundle
from switchsound.synth import LADDERS, CorpusSpec, generate_corpus

# Training corpus shared by the slow tests: normal events for the phase models
# plus a couple of undisturbed events per ladder step for the screening model.
TRAIN_SPEC = CorpusSpec(clean=60, ladders={"grease": 2, "adhesion": 2, "lock": 2})
TRAIN_SEED = 7
LADDER_PER_STEP = 10
LADDER_SEED = 4242


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion")


_acceptance: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, name = marker.args
    if report.when == "setup" and report.passed:
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if report.passed else "FAIL"
    _acceptance[number] = (name, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        name, status, detail = _acceptance[number]
        line = f"criterion {number:2d} [{status}] {name}"
        if detail:
            line += f" :: {detail}"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def config() -> Config:
    return Config()


@pytest.fixture(scope="session")
def corpus_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    return generate_corpus(TRAIN_SPEC, out, seed=TRAIN_SEED)


@pytest.fixture(scope="session")
def trained(tmp_path_factory, corpus_manifest, config):
    """The in-memory bundle straight from training, and the directory it was saved to."""
    out = tmp_path_factory.mktemp("bundle")
    return train_bundle(corpus_manifest, config, seed=0, out_dir=out), out


@pytest.fixture(scope="session")
def bundle_dir(trained):
    return trained[1]


@pytest.fixture(scope="session")
def bundle(bundle_dir):
    from switchsound.pipeline import Bundle

    return Bundle.load(bundle_dir)


@pytest.fixture(scope="session")
def ladders(bundle):
    return {
        name: experiment_ladder(name, bundle, per_step=LADDER_PER_STEP, seed=LADDER_SEED)
        for name in LADDERS
    }


@pytest.fixture(scope="session")
def masked_spec(config):
    mask = BandMask(config.dsp.keep_bands)

    def make(wave):
        return apply_band_mask(stft(wave, config.dsp.window_len, config.dsp.hop), mask)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SMALL_CONFIG = """\
[snmf]
fit_iters = 60

[anomaly]
epochs = 4
"""
SMALL_CORPUS = '{"clean": 45, "disturbances": {"ShinkansenViaduct": 0.1}}'


def run_small_pipeline(root):
    """synth -> train -> process -> report through the CLI with pinned seeds and clock."""
    import os

    from switchsound.cli import main

    root.mkdir(parents=True, exist_ok=True)
    (root / "config.toml").write_text(SMALL_CONFIG)
    (root / "corpus.json").write_text(SMALL_CORPUS)
    previous = os.environ.get("SOURCE_DATE_EPOCH")
    os.environ["SOURCE_DATE_EPOCH"] = "1700000000"
    try:
        codes = [
            main(["synth", "corpus", "--spec", str(root / "corpus.json"), "--out", str(root / "corpus"),
                  "--seed", "3"]),
            main(["train", "--manifest", str(root / "corpus" / "manifest.jsonl"), "--config",
                  str(root / "config.toml"), "--out", str(root / "bundle"), "--seed", "1"]),
            main(["process", "--bundle", str(root / "bundle"), "--wav", str(root / "corpus" / "wav" / "clean-000*.wav"),
                  "--ledger", str(root / "ledger.jsonl"), "--jobs", "2"]),
            main(["report", "--ledger", str(root / "ledger.jsonl"), "--out", str(root / "report")]),
        ]
    finally:
        if previous is None:
            os.environ.pop("SOURCE_DATE_EPOCH", None)
        else:
            os.environ["SOURCE_DATE_EPOCH"] = previous
    return codes


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("small") / "run"
    return root, run_small_pipeline(root)
