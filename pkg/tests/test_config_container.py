import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from picnet.config import DataConfig, RunConfig, canonical_json, config_diff
from picnet.container import decode, encode, read_csv, write_csv
from picnet.exceptions import ConfigError, FormatError


def test_defaults():
    cfg = RunConfig()
    assert (cfg.window, cfg.stride, cfg.depth) == (9, 2, 4)
    assert (cfg.optimizer, cfg.lr, cfg.momentum, cfg.weight_decay) == ("sgd", 0.1, 0.9, 1e-5)
    assert (cfg.epochs, cfg.batch_size, cfg.perm_seeds) == (100, 32, 10)
    assert RunConfig(optimizer="adam").lr == 0.01
    assert cfg.data.vocabulary == 120


def test_json_round_trip_bitwise():
    cfg = RunConfig(seed=3, variant="pic_ordered", learning_rate=0.05, data=DataConfig(noise_sigma=0.25))
    text = cfg.to_json()
    assert RunConfig.from_json(text) == cfg
    assert RunConfig.from_json(text).to_json() == text


@given(st.integers(0, 2**31), st.sampled_from(["pic", "pic_global", "temporal_conv"]),
       st.floats(0, 2, allow_nan=False), st.integers(1, 8))
@settings(max_examples=30, deadline=None)
def test_json_round_trip_property(seed, variant, sigma, depth):
    cfg = RunConfig(seed=seed, variant=variant, depth=depth, data=DataConfig(noise_sigma=sigma))
    assert RunConfig.from_json(cfg.to_json()).to_json() == cfg.to_json()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_json('{"depht": 3}')
    with pytest.raises(ConfigError):
        RunConfig.from_json('{"data": {"lenght": 3}}')
    with pytest.raises(ConfigError):
        RunConfig.from_json("[1, 2]")
    with pytest.raises(ConfigError):
        RunConfig.from_json("{not json")


@pytest.mark.parametrize("change", [
    {"variant": "lstm"}, {"depth": -1}, {"channels": 10}, {"window": 0}, {"task": "ranking"},
    {"optimizer": "rmsprop"}, {"epochs": -1}, {"data": {"layout": "grid"}}, {"data": {"noise_sigma": -1.0}},
])
def test_validate_rejects(change):
    with pytest.raises(ConfigError):
        RunConfig().replace(**change).validate()


def test_config_diff():
    a = RunConfig().to_dict()
    b = RunConfig(channels=32, data=DataConfig(length=10)).to_dict()
    assert config_diff(a, b) == {"channels": (64, 32), "data.length": (64, 10)}


def test_canonical_json_is_sorted_and_compact():
    assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


# -- containers -------------------------------------------------------------------

def test_container_round_trip():
    arrays = {"a": np.arange(6.0).reshape(2, 3), "scalar": np.array(2.5), "empty": np.zeros((0, 4))}
    raw = encode(b"TEST", {"k": [1, "x"]}, arrays)
    header, back = decode(b"TEST", raw)
    assert header == {"k": [1, "x"]}
    for k, v in arrays.items():
        assert back[k].shape == v.shape and np.array_equal(back[k], v)


def test_container_layout_prefix():
    raw = encode(b"TEST", {}, {})
    assert raw == b"TEST" + (1).to_bytes(4, "little") + (2).to_bytes(4, "little") + b"{}" + bytes(4)


@pytest.mark.parametrize("mutate", [
    lambda r: b"XXXX" + r[4:],
    lambda r: r[:4] + (9).to_bytes(4, "little") + r[8:],
    lambda r: r[:-3],
    lambda r: r + b"\0",
])
def test_container_rejects_corruption(mutate):
    raw = encode(b"TEST", {"a": 1}, {"x": np.ones(3)})
    with pytest.raises(FormatError):
        decode(b"TEST", mutate(raw))


def test_csv_round_trip(tmp_path):
    rows = [{"epoch": 1, "loss": 0.1 + 0.2, "metric": None}]
    write_csv(tmp_path / "h.csv", rows, ["epoch", "loss", "metric"], '{"a":1}')
    meta, back = read_csv(tmp_path / "h.csv")
    assert meta == {"format_version": "1", "config": '{"a":1}'}
    assert back == [{"epoch": "1", "loss": repr(0.1 + 0.2), "metric": ""}]
    assert float(back[0]["loss"]) == 0.1 + 0.2


def test_csv_to_buffer_and_version_check(tmp_path):
    buf = io.StringIO()
    write_csv(buf, [{"a": 1}], ["a"])
    path = tmp_path / "x.csv"
    path.write_text(buf.getvalue().replace("format_version=1", "format_version=7"))
    with pytest.raises(FormatError):
        read_csv(path)
