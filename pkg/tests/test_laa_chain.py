from fractions import Fraction

import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from laacoex.core import SystemConfig
from laacoex.laa_chain import (
    bc_one_ratio,
    bc_one_ratio_for_window,
    solve_closed_form,
    stage_occupancy_at_mcot_end,
    tau_l_closed_form,
)

from oracles import dense_stationary, laa_explicit_chain


def small_config(cw_min, m, M):
    return SystemConfig(cw_min=cw_min, m=m, n_sf=1, sf_slot=M, rsf=1)


def closed_form_vector(sol, labels):
    out = []
    for kind, i, x in labels:
        out.append(sol.b_backoff[i][x - 1] if kind == "b" else sol.b_tx[i])
    return np.array(out)


def test_anchor_example_pd_zero():
    cfg = SystemConfig(cw_min=16, m=6, n_sf=1, sf_slot=4)
    sol = solve_closed_form(cfg, 0.0, 0.0)
    assert sol.b00_1 == pytest.approx(2 / 23, abs=1e-15)
    assert sol.tau_l == pytest.approx(8 / 23, abs=1e-15)
    assert np.all(sol.b_tx[1:] == 0.0)


def test_anchor_example_against_dense_oracle():
    P, labels = laa_explicit_chain((16, 32), 4, 0.0, 0.0)
    pi = dense_stationary(P)
    b00 = pi[labels.index(("t", 0, 1))]
    assert b00 == pytest.approx(2 / 23, abs=1e-12)


def test_tau_l_matches_dense_example():
    cfg = small_config(4, 1, 10)
    sol = solve_closed_form(cfg, 0.2, 0.3)
    P, labels = laa_explicit_chain(cfg.windows, cfg.M, 0.2, 0.3)
    pi = dense_stationary(P)
    tx = sum(p for p, lab in zip(pi, labels) if lab[0] == "t")
    assert abs(sol.tau_l - tx) <= 1e-10


@given(
    cw_min=st.sampled_from([2, 4, 8]),
    m=st.integers(0, 2),
    M=st.integers(4, 20),
    p_b=st.floats(0.0, 0.9),
    p_d=st.floats(0.0, 0.9),
)
def test_closed_form_equals_explicit_chain(cw_min, m, M, p_b, p_d):
    cfg = small_config(cw_min, m, M)
    sol = solve_closed_form(cfg, p_b, p_d)
    P, labels = laa_explicit_chain(cfg.windows, M, p_b, p_d)
    pi = dense_stationary(P)
    assert np.max(np.abs(closed_form_vector(sol, labels) - pi)) <= 1e-10


@given(
    cw_min=st.sampled_from([1, 2, 4, 16]),
    m=st.integers(0, 6),
    M=st.integers(1, 900),
    p_b=st.floats(0.0, 0.999),
    p_d=st.floats(0.0, 1.0),
)
@example(cw_min=1, m=0, M=1, p_b=0.0, p_d=0.5695299087188205)  # no backoff states: tau_L is exactly 1
def test_normalization_and_ranges(cw_min, m, M, p_b, p_d):
    sol = solve_closed_form(small_config(cw_min, m, M), p_b, p_d)
    assert sol.normalization_residual() <= 1e-12
    assert 0.0 <= sol.tau_l <= 1.0
    assert sol.p_stage_at_end.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(sol.b_tx, sol.b00_1 * p_d ** np.arange(m + 2))
    for arr in sol.b_backoff:
        assert np.all((arr >= 0) & (arr <= 1))


@pytest.mark.parametrize("p_d", [0.5, 1.0])
def test_removable_singularities_are_continuous(p_d):
    cfg = small_config(16, 6, 888)
    here = solve_closed_form(cfg, 0.1, p_d).tau_l
    for eps in (1e-6, -1e-6):
        near = solve_closed_form(cfg, 0.1, min(p_d + eps, 1.0)).tau_l
        assert here == pytest.approx(near, abs=1e-5)


def test_tau_l_geometric_form_away_from_singularities():
    cfg = small_config(16, 6, 888)
    M, p_d = cfg.M, 0.3
    sol = solve_closed_form(cfg, 0.2, p_d)
    expected = M * sol.b00_1 * (1 - p_d ** (cfg.m + 2)) / (1 - p_d)
    assert sol.tau_l == pytest.approx(expected, rel=1e-13)


def test_stage_occupancy_examples():
    cfg = small_config(4, 1, 5)
    assert np.allclose(stage_occupancy_at_mcot_end(solve_closed_form(cfg, 0, 0)), [1, 0, 0])
    assert np.allclose(stage_occupancy_at_mcot_end(solve_closed_form(cfg, 0, 1)), [1 / 3] * 3)
    ps = stage_occupancy_at_mcot_end(solve_closed_form(cfg, 0, 0.5))
    assert [Fraction(x).limit_denominator(100) for x in ps] == [Fraction(4, 7), Fraction(2, 7), Fraction(1, 7)]


@pytest.mark.parametrize("w, expected", [(16, Fraction(1, 8)), (2, Fraction(1)), (4, Fraction(1, 2))])
def test_bc_one_ratio_examples(w, expected):
    by_hand = Fraction(w - 1, sum(w - k for k in range(1, w)))
    assert by_hand == expected
    assert bc_one_ratio_for_window(w) == float(expected)


def test_bc_one_ratio_from_solution_and_errors():
    sol = solve_closed_form(small_config(16, 1, 4), 0.3, 0.2)
    for stage, arr in enumerate(sol.b_backoff):
        assert bc_one_ratio(sol, stage) == pytest.approx(arr[0] / arr.sum(), rel=1e-14)
    with pytest.raises(ValueError):
        bc_one_ratio_for_window(1)
    with pytest.raises(ValueError):
        bc_one_ratio(sol, 3)


def test_rejects_saturated_busy_probability():
    with pytest.raises(ValueError):
        solve_closed_form(small_config(4, 1, 4), 1.0, 0.2)
    with pytest.raises(ValueError):
        solve_closed_form(small_config(4, 1, 4), 0.2, 1.2)


def test_tau_l_monotone_in_inputs():
    cfg = small_config(16, 6, 888)
    grid = np.linspace(0, 0.95, 20)
    by_pd = [tau_l_closed_form(cfg, 0.2, p) for p in grid]
    by_pb = [tau_l_closed_form(cfg, p, 0.2) for p in grid]
    assert np.all(np.diff(by_pd) < 0)
    assert np.all(np.diff(by_pb) < 0)
