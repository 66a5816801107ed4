import json

import pytest
from hypothesis import given, settings, strategies as st

from meshfield.config import ConfigError, RunConfig, load_config


def test_defaults_round_trip():
    cfg = RunConfig()
    assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg


def test_unknown_key_named():
    with pytest.raises(ConfigError) as e:
        RunConfig.from_dict({"train": {"learning_rate": 0.1}})
    assert e.value.key == "train.learning_rate"


def test_wrong_type_named():
    with pytest.raises(ConfigError) as e:
        RunConfig.from_dict({"datagen": {"n_views": "20"}})
    assert e.value.key == "datagen.n_views"
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"no_body_embedding": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"train": 3})


def test_int_accepted_for_float():
    assert RunConfig.from_dict({"train": {"lr": 1}}).train.lr == 1.0


def test_invalid_network_section():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"network": {"feature_dim": -1}})


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"seed": 7}')
    assert load_config(p).seed == 7
    p.write_text("{oops")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(p)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 64), st.floats(1e-6, 1.0), st.booleans())
def test_round_trip_property(seed, workers, lr, flag):
    cfg = RunConfig.from_dict({"seed": seed, "workers": workers, "no_normal_guidance": flag,
                               "train": {"lr": lr}})
    assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg
    assert cfg.resolved_workers() == workers
