import dataclasses

import pytest

from switchsound.config import Config, DSPConfig, config_from_dict, load_config


def test_defaults():
    c = Config()
    assert (c.dsp.sample_rate, c.dsp.window_len, c.dsp.hop) == (16000, 1024, 512)
    assert c.dsp.keep_bands == ((50.0, 6000.0),)
    assert c.anomaly.sigma_mult == 3.0
    assert c.denoise.quantile == 0.99
    assert c.synth.phase_durations_s == (0.3, 0.5, 0.6, 3.0, 0.6, 0.5, 0.3)


def test_toml_roundtrip(tmp_path):
    c = dataclasses.replace(Config(), dsp=DSPConfig(hop=256, keep_bands=((50.0, 900.0), (1000.0, 6000.0))))
    path = tmp_path / "c.toml"
    path.write_text(c.dump_toml())
    back = load_config(path)
    assert back == c
    assert back.hash() == c.hash()


def test_partial_file_uses_defaults(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[anomaly]\nepochs = 5\nsigma_mult = 2\n")
    c = load_config(path)
    assert c.anomaly.epochs == 5 and c.anomaly.sigma_mult == 2.0
    assert c.dsp == DSPConfig()


def test_hash_stable_and_sensitive():
    assert Config().hash() == Config().hash()
    assert len(Config().hash()) == 64
    other = config_from_dict({"snmf": {"fit_iters": 201}})
    assert other.hash() != Config().hash()


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ValueError, match=r"unknown config keys in \[dsp\]: hopp"):
        config_from_dict({"dsp": {"hopp": 3}})
    with pytest.raises(ValueError, match="unknown config sections: extra"):
        config_from_dict({"extra": {}})
    with pytest.raises(FileNotFoundError, match="config file not found"):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[dsp\n")
    with pytest.raises(ValueError, match="cannot parse config"):
        load_config(bad)
