import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from laacoex.core import SystemConfig, WifiStateSpace, class4_preset
from laacoex.wifi_chain import (
    REGIME_PARAMS,
    Regime,
    build_all_inner,
    build_inner_matrix,
    dump_triplets,
    load_triplets,
)

from oracles import wifi_explicit_matrix

configs = st.builds(
    lambda cw, m, t, reset: SystemConfig(cw_min=cw, m=m, n_sf=2, sf_slot=3, t_wifi=t, wifi_retry_reset=reset),
    st.sampled_from([1, 2, 4, 8]),
    st.integers(0, 3),
    st.floats(1.0, 300.0),
    st.booleans(),
)


@given(configs)
def test_matches_explicit_construction(cfg):
    for regime, (p_c, _, flag) in REGIME_PARAMS.items():
        got = build_inner_matrix(cfg, regime).matrix.toarray()
        want = wifi_explicit_matrix(cfg.windows, cfg.p_o, p_c, flag, cfg.wifi_retry_reset)
        assert np.max(np.abs(got - want)) <= 1e-15


@given(configs)
def test_rows_are_stochastic(cfg):
    for inner in build_all_inner(cfg).values():
        assert inner.row_sum_residual() <= 1e-12
        assert inner.matrix.data.min() >= 0.0 and inner.matrix.data.max() <= 1.0


def test_regime_constants():
    assert REGIME_PARAMS[Regime.MC] == (1.0, 0.0, False)
    assert REGIME_PARAMS[Regime.OW] == (0.0, 0.0, False)
    assert REGIME_PARAMS[Regime.OL] == (1.0, 0.0, True)


def test_ow_success_fanout_example():
    cfg = class4_preset(8, "first", 54)
    space = WifiStateSpace.from_config(cfg)
    P = build_inner_matrix(cfg, "OW", space).matrix
    row = P.getrow(space.backoff_index(3, 0)).toarray().ravel()
    stage0 = [space.backoff_index(0, k) for k in range(16)]
    assert np.allclose(row[stage0], (1 / 54) / 16, rtol=0, atol=1e-17)
    assert row[space.backoff_index(3, 0)] == pytest.approx(53 / 54)
    assert row.sum() == pytest.approx(1.0)


def test_mc_retry_limit_resets_to_stage_zero():
    cfg = class4_preset(8, "first", 54)
    space = WifiStateSpace.from_config(cfg)
    P = build_inner_matrix(cfg, "MC", space).matrix
    row = P.getrow(space.backoff_index(cfg.m + 1, 0)).toarray().ravel()
    stage0 = [space.backoff_index(0, k) for k in range(16)]
    assert np.allclose(row[stage0], (1 / 54) / 16)


def test_retry_toggle_saturates_instead():
    cfg = SystemConfig(cw_min=2, m=1, n_sf=2, sf_slot=2, t_wifi=4, wifi_retry_reset=False)
    space = WifiStateSpace.from_config(cfg)
    row = build_inner_matrix(cfg, "MC", space).matrix.getrow(space.backoff_index(2, 0)).toarray().ravel()
    top = [space.backoff_index(2, k) for k in range(1, 4)]
    assert np.allclose(row[top], 0.25 / 4)
    assert row[space.backoff_index(2, 0)] == pytest.approx(0.75 + 0.25 / 4)
    assert row[: space.backoff_index(2, 0)].sum() == 0.0


def test_ol_reroutes_to_overlap_state():
    cfg = class4_preset(8, "first", 54)
    space = WifiStateSpace.from_config(cfg)
    P = build_inner_matrix(cfg, "OL", space).matrix
    for i in range(cfg.n_stages):
        src = space.backoff_index(i, 0)
        assert P[src, space.overlap_index(i)] == pytest.approx(53 / 54)
        assert P[src, src] == 0.0


def test_matrices_differ_only_where_documented():
    cfg = SystemConfig(cw_min=4, m=2, n_sf=2, sf_slot=3, t_wifi=7)
    space = WifiStateSpace.from_config(cfg)
    mats = {r: m.matrix.toarray() for r, m in build_all_inner(cfg, space).items()}
    tx_rows = [space.backoff_index(i, 0) for i in range(cfg.n_stages)]
    diff_ol = np.flatnonzero(np.any(mats[Regime.MC] != mats[Regime.OL], axis=1))
    diff_ow = np.flatnonzero(np.any(mats[Regime.MC] != mats[Regime.OW], axis=1))
    assert list(diff_ol) == tx_rows
    # with the retry reset, collision and success from stage m+1 both restart at stage 0
    assert list(diff_ow) == tx_rows[:-1]


def test_overlap_states_only_reachable_under_ol():
    cfg = SystemConfig(cw_min=4, m=2, n_sf=2, sf_slot=3, t_wifi=7)
    space = WifiStateSpace.from_config(cfg)
    overlap_cols = slice(space.n_backoff, space.size)
    for regime in (Regime.MC, Regime.OW):
        P = build_inner_matrix(cfg, regime, space).matrix.toarray()
        assert P[: space.n_backoff, overlap_cols].sum() == 0.0


def test_pure_ow_never_increases_stage():
    cfg = SystemConfig(cw_min=4, m=2, n_sf=2, sf_slot=3, t_wifi=7)
    space = WifiStateSpace.from_config(cfg)
    P = build_inner_matrix(cfg, "OW", space).matrix.tocoo()
    backoff = ~space.overlap[P.row]
    assert np.all(space.stage[P.col[backoff]] <= space.stage[P.row[backoff]])


def test_unit_duration_completes_every_slot():
    cfg = SystemConfig(cw_min=4, m=1, n_sf=2, sf_slot=3, t_wifi=1)
    space = WifiStateSpace.from_config(cfg)
    P = build_inner_matrix(cfg, "OL", space).matrix
    assert P[space.backoff_index(0, 0), space.overlap_index(0)] == 0.0


def test_generic_parameterisation():
    cfg = SystemConfig(cw_min=4, m=1, n_sf=2, sf_slot=3, t_wifi=5)
    inner = build_inner_matrix(cfg, "OW", p_c=0.3, p_b=0.2)
    assert inner.row_sum_residual() <= 1e-12
    want = wifi_explicit_matrix(cfg.windows, cfg.p_o, 0.3, False)
    got = inner.matrix.toarray()
    space = WifiStateSpace.from_config(cfg)
    tx = space.transmitting.astype(bool)
    assert np.allclose(got[tx], want[tx])
    k = space.backoff_index(1, 3)
    assert got[k, k] == pytest.approx(0.2) and got[k, k - 1] == pytest.approx(0.8)


def test_triplet_round_trip(tmp_path):
    cfg = SystemConfig(cw_min=4, m=1, n_sf=2, sf_slot=3, t_wifi=5)
    inner = build_inner_matrix(cfg, "OL")
    path = tmp_path / "ol.txt"
    dump_triplets(inner, path)
    assert path.read_text().startswith("# regime=OL n=23")
    assert (load_triplets(path) != inner.matrix).nnz == 0
