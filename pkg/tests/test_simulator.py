import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laacoex.core import SystemConfig
from laacoex.metrics import AnalyticModel, fixed_point
from laacoex.simulator import (
    COUNTER_NAMES,
    SimConfig,
    batch_means,
    measure,
    run,
    run_seeds,
    save_stats,
)

from conftest import DESK


def sim(system, slots=200_000, warmup=2_000, **kw):
    return SimConfig(system, total_slots=slots, warmup_slots=warmup, **kw)


@pytest.fixture(scope="module")
def desk_stats():
    return run(sim(SystemConfig(**DESK), 10_000_000, 100_000))


def test_same_seed_same_counters():
    cfg = sim(SystemConfig(**DESK), seed=11)
    a, b = run(cfg), run(cfg)
    assert np.array_equal(a.counters, b.counters)
    assert np.array_equal(a.sf_counts, b.sf_counts)
    assert a.to_json() == b.to_json()
    c = run(dataclasses.replace(cfg, seed=12))
    assert not np.array_equal(a.counters, c.counters)


@settings(max_examples=8)
@given(seed=st.integers(0, 2**31), t_wifi=st.floats(1.0, 12.0), rsf=st.integers(1, 4))
def test_compiled_kernel_matches_python(seed, t_wifi, rsf):
    system = SystemConfig(**{**DESK, "t_wifi": t_wifi, "rsf": rsf})
    cfg = sim(system, 6_000, 500, seed=seed, n_batches=3)
    fast, slow = run(cfg, trace_events=50), run(cfg, trace_events=50, use_jit=False)
    assert np.array_equal(fast.counters, slow.counters)
    assert np.array_equal(fast.sf_counts, slow.sf_counts)
    assert np.array_equal(fast.trace, slow.trace)


def test_chunk_size_does_not_change_the_run():
    cfg = sim(SystemConfig(**DESK), 50_000, 1_000, seed=5)
    assert np.array_equal(run(cfg, chunk=1000).counters, run(cfg).counters)


def test_silent_node_h_gives_renewal_share():
    # node L alone: MCOT of M slots, then a stage-0 backoff of mean (W0 - 1) / 2
    system = SystemConfig(**DESK)
    rep = measure(run(sim(system, 2_000_000, 10_000, node_h=False)))
    expected = system.M / (system.M + (system.cw_min - 1) / 2)
    ci = rep.diagnostics["ci_halfwidth"]["tau_l"]
    assert abs(rep.tau_l - expected) <= max(3 * ci, 1e-3)
    assert rep.tau_h == 0.0 and rep.p_d == 0.0
    assert rep.diagnostics["packets"] == 0


def test_unit_packets_last_one_slot():
    system = SystemConfig(**{**DESK, "t_wifi": 1.0})
    rep = measure(run(sim(system)))
    assert rep.diagnostics["mean_packet_slots"] == 1.0
    assert rep.p_overlap == 0.0


def test_mean_packet_length(desk_stats):
    rep = measure(desk_stats)
    assert rep.diagnostics["mean_packet_slots"] == pytest.approx(DESK["t_wifi"], rel=0.01)


def test_counter_invariants(desk_stats):
    s, M = desk_stats, desk_stats.config.system.M
    assert s.slots == desk_stats.config.post_warmup_slots
    assert s.h_tx_slots == s.h_tx_mcot_slots + s.h_tx_ow_slots
    # MCOTs straddling the warmup or the run end are partly counted
    assert abs(s.mcot_slots - M * s.mcots) <= 2 * M
    assert s.collided_packets <= s.packets
    assert s.z_packets <= s.collided_packets
    assert s.doublings <= s.mcots
    rsf = desk_stats.config.system.rsf
    assert s.doublings == s.subframe_overlaps[rsf - 1]


def test_estimators_are_mutually_consistent(desk_stats):
    rep = measure(desk_stats)
    assert rep.p_d == rep.c_sf[desk_stats.config.system.rsf - 1]
    assert rep.tau_h == pytest.approx(rep.tau_h_mc_abs + rep.tau_h_ow_abs, abs=1e-15)
    assert rep.s_l == pytest.approx(rep.alpha * rep.tau_l)
    assert rep.avg_collided_sf == pytest.approx(sum(rep.c_sf))
    assert 0.0 <= rep.z2 <= 1.0
    d = rep.diagnostics
    assert rep.e_d_l == pytest.approx(d["e_d_l_formula"], rel=0.01)
    assert rep.e_d_h == pytest.approx(d["e_d_h_formula"], rel=0.01)


def test_confidence_intervals(desk_stats):
    point, half = batch_means(desk_stats)
    assert set(point) == set(half)
    assert 0 < half["tau_l"] < 0.01
    assert all(math.isnan(v) or v >= 0 for v in half.values())


def test_desk_scale_agrees_with_analytic_model(desk_stats):
    system = desk_stats.config.system
    analytic = fixed_point(system, model=AnalyticModel(system)).report
    rep = measure(desk_stats)
    for key in ("tau_l", "tau_h", "tau_h_ow", "p_d"):
        assert abs(getattr(analytic, key) - getattr(rep, key)) <= 0.02, key
    assert abs(analytic.avg_collided_sf - rep.avg_collided_sf) <= 0.05


def test_merge_and_run_seeds():
    cfg = sim(SystemConfig(**DESK), 30_000, 1_000, n_batches=4)
    a = run(dataclasses.replace(cfg, seed=1))
    b = run(dataclasses.replace(cfg, seed=2))
    merged = run_seeds(cfg, [1, 2])
    assert merged.seeds == (1, 2)
    assert np.array_equal(merged.counters, a.counters + b.counters)
    assert merged.slots == 2 * a.slots
    with pytest.raises(ValueError):
        a.merge(run(dataclasses.replace(cfg, seed=3, total_slots=40_000)))


def test_trace_log():
    stats = run(sim(SystemConfig(**DESK), 5_000, 0), trace_events=40)
    lines = stats.trace_lines()
    assert len(lines) == 40
    slots = [int(line.split()[0]) for line in lines]
    assert slots == sorted(slots)
    kinds = {line.split()[1] for line in lines}
    assert kinds <= {"mcot_start", "mcot_end", "packet_start", "packet_end"}
    assert run(sim(SystemConfig(**DESK), 5_000, 0)).trace_lines() == []


def test_stats_serialisation(tmp_path):
    stats = run(sim(SystemConfig(**DESK), 20_000, 1_000, n_batches=4))
    path = tmp_path / "stats.json"
    save_stats(stats, path)
    data = json.loads(path.read_text())
    assert set(data["totals"]) == set(COUNTER_NAMES)
    assert data["config"]["system"]["t_wifi"] == DESK["t_wifi"]
    assert len(data["batches"]) == 4
    with pytest.raises(AttributeError):
        stats.not_a_counter


@pytest.mark.parametrize(
    "kw",
    [dict(total_slots=10, warmup_slots=10), dict(warmup_slots=-1), dict(n_batches=1),
     dict(doubling_rule="any_overlap")],
)
def test_sim_config_validation(kw):
    with pytest.raises(ValueError):
        SimConfig(SystemConfig(**DESK), **{**dict(total_slots=100, warmup_slots=0), **kw})


def test_subframe_limit():
    with pytest.raises(ValueError):
        SimConfig(SystemConfig(cw_min=4, m=1, n_sf=63, sf_slot=2))
