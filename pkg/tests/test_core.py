import pytest
from hypothesis import given
from hypothesis import strategies as st

from laacoex.core import (
    PRIORITY_CLASSES,
    SystemConfig,
    WifiState,
    WifiStateSpace,
    enumerate_wifi_states,
    laa_backoff_state,
    laa_stage,
    load_config,
    class4_preset,
    parse_kv_text,
    subframe_start_state,
    wifi_state_count,
)


def test_class4_preset_dimensions():
    cfg = class4_preset(8, "first", 54)
    assert cfg.M == 888
    assert cfg.windows == (16, 32, 64, 128, 256, 512, 1024, 1024)
    assert cfg.cw_max == 1024
    assert wifi_state_count(cfg) == 3064
    assert class4_preset(10, "last_eligible").rsf == 6
    assert class4_preset(8, "last_eligible").rsf == 4
    assert class4_preset(10).M == 1110


@pytest.mark.parametrize(
    "cw_min, m, expected",
    [(16, 6, 3064), (2, 0, 6), (4, 1, 23)],
)
def test_wifi_state_count_examples(cw_min, m, expected):
    cfg = SystemConfig(cw_min=cw_min, m=m, n_sf=2, sf_slot=2)
    assert wifi_state_count(cfg) == expected
    assert WifiStateSpace.from_config(cfg).size == expected


def test_priority_class_4_constants():
    cw_min, cw_max, mcot_ms = PRIORITY_CLASSES[4]
    assert (cw_min, cw_max, mcot_ms) == (16, 1024, (8, 10))
    cfg = class4_preset(8)
    assert (cfg.cw_min, cfg.cw_max) == (cw_min, cw_max)


@pytest.mark.parametrize(
    "changes",
    [dict(cw_min=0), dict(m=-1), dict(rsf=0), dict(rsf=9), dict(t_wifi=0.5), dict(z2=1.5),
     dict(n_sf=0), dict(mcot_slots=10)],
)
def test_invalid_configs_rejected(changes):
    with pytest.raises(ValueError):
        SystemConfig(**{**dict(n_sf=8, sf_slot=111), **changes})


def test_replace_recomputes_mcot_length():
    cfg = class4_preset(8)
    assert cfg.replace(n_sf=10).M == 1110
    assert cfg.replace(t_wifi=4).M == 888


def test_config_hash_tracks_content():
    a = class4_preset(8, "first", 54)
    assert a.config_hash() == class4_preset(8, "first", 54.0).config_hash()
    assert a.config_hash() != a.replace(rsf=2).config_hash()


def test_laa_index_helpers():
    cfg = SystemConfig(cw_min=4, m=1, n_sf=4, sf_slot=5)
    assert laa_backoff_state(cfg, 0) == 21
    assert laa_stage(cfg, 23) == 2
    assert [subframe_start_state(cfg, r) for r in range(1, 5)] == [1, 6, 11, 16]
    with pytest.raises(ValueError):
        laa_stage(cfg, 20)
    with pytest.raises(ValueError):
        subframe_start_state(cfg, 5)


@given(cw_min=st.sampled_from([1, 2, 4, 8, 16]), m=st.integers(0, 4))
def test_state_space_is_a_bijection(cw_min, m):
    cfg = SystemConfig(cw_min=cw_min, m=m, n_sf=2, sf_slot=2)
    space = WifiStateSpace.from_config(cfg)
    states = enumerate_wifi_states(cfg)
    assert len(states) == len(set(states)) == space.size
    for idx, state in enumerate(states):
        assert space.encode(state) == idx
        assert space.decode(idx) == state
    # stage-major, counter ascending, overlap states last
    backoff = [s for s in states if not s.overlap]
    assert backoff == sorted(backoff)
    assert all(s.overlap for s in states[space.n_backoff:])


def test_transmitting_selector():
    cfg = SystemConfig(cw_min=2, m=0, n_sf=2, sf_slot=2)
    space = WifiStateSpace.from_config(cfg)
    expected = [s.transmitting for s in space]
    assert list(space.transmitting.astype(bool)) == expected
    assert WifiState(0, 0, True).bc == 0
    assert WifiState(1, 3).bc == 3


def test_kv_config_round_trip(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\ncw_min = 4\nm=1  # inline\nn_sf = 4\nsf_slot = 5\nt_wifi = 3\n"
                    "wifi_retry_reset = no\n")
    cfg = load_config(path, rsf=2)
    assert (cfg.cw_min, cfg.m, cfg.M, cfg.rsf, cfg.t_wifi) == (4, 1, 20, 2, 3.0)
    assert cfg.wifi_retry_reset is False


def test_kv_config_errors(tmp_path):
    with pytest.raises(ValueError):
        parse_kv_text("cw_min 4")
    path = tmp_path / "bad.cfg"
    path.write_text("cwmin = 4\n")
    with pytest.raises(ValueError, match="unknown config key"):
        load_config(path)
