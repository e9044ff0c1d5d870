"""Slot-level simulation of node L (LBT with MCOTs) and hidden node H (DCF).

Rules per slot ``t`` (state observed at ``t``, transition to ``t + 1``):

* Node H never senses node L.  An idle node H decrements its counter every
  slot and transmits in the slot after it reaches zero.  A finished packet is
  collided iff any of its slots fell inside an MCOT.
* Node L in backoff freezes while node H transmits in slot ``t`` and
  otherwise decrements; the MCOT starts in the slot after the counter hits
  zero.  At MCOT end the window doubles iff node H was on air in any slot of
  the reference subframe.
* Random numbers come from numpy's PCG64 generator, consumed strictly in
  order by the kernel, so a run is a pure function of (config, seed).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy import stats as sps

from .core import SystemConfig

# ---- kernel layout -------------------------------------------------------

(S_T, S_LMODE, S_LJ, S_LSTAGE, S_LBC, S_LSTART, S_LSFMASK, S_LLASTEND,
 S_HTX, S_HREM, S_HSTAGE, S_HBC, S_HSTART, S_HDUR, S_HTOUCH, S_HSTARTMC,
 S_HOWSLOTS, S_HLASTEND, S_UPOS, S_TRACEPOS, S_INIT, S_TRACE_OVERFLOW) = range(22)
N_STATE = 22

(P_M, P_NSF, P_SFSLOT, P_RSF, P_MAXSTAGE, P_WARMUP, P_TOTAL, P_NBATCH,
 P_HRESET, P_HOFF) = range(10)
N_PARAM = 10

COUNTER_NAMES = (
    "slots", "mcot_slots", "h_tx_slots", "h_tx_mcot_slots", "h_tx_ow_slots",
    "packets", "collided_packets", "success_packet_slots", "packet_slots",
    "x_packets", "y_packets", "z_packets", "z2_sum",
    "mcots", "doublings", "l_gap_sum", "l_gap_count", "h_gap_sum", "h_gap_count",
    "simultaneous_starts",
)
(C_SLOTS, C_MCOT_SLOTS, C_HTX, C_HTX_MC, C_HTX_OW, C_PKTS, C_PKT_COLL,
 C_SUCC_SLOTS, C_PKT_SLOTS, C_X, C_Y, C_Z, C_Z2SUM, C_MCOTS, C_DOUBLE,
 C_LGAP_SUM, C_LGAP_N, C_HGAP_SUM, C_HGAP_N, C_SIMUL) = range(len(COUNTER_NAMES))
N_COUNTERS = len(COUNTER_NAMES)

EV_MCOT_START, EV_MCOT_END, EV_PKT_START, EV_PKT_END = 1, 2, 3, 4
EVENT_NAMES = {EV_MCOT_START: "mcot_start", EV_MCOT_END: "mcot_end",
               EV_PKT_START: "packet_start", EV_PKT_END: "packet_end"}


def _kernel(params, windows, p_o, state, u, counters, sf_counts, trace):
    """Advance the simulation until the slot budget or the uniform buffer runs out.

    Returns 0 when finished, 1 when more uniforms are needed.
    """
    M = params[P_M]
    n_sf = params[P_NSF]
    sf_slot = params[P_SFSLOT]
    rsf = params[P_RSF]
    max_stage = params[P_MAXSTAGE]  # m + 1
    warmup = params[P_WARMUP]
    total = params[P_TOTAL]
    n_batch = params[P_NBATCH]
    h_reset = params[P_HRESET]
    span = total - warmup
    log_q = math.log(1.0 - p_o) if p_o < 1.0 else 0.0
    n_u = u.shape[0]
    trace_cap = trace.shape[0]

    pos = state[S_UPOS]

    if state[S_INIT] == 0:
        if pos + 3 > n_u:
            return 1
        state[S_INIT] = 1
        state[S_LSTAGE] = 0
        state[S_LLASTEND] = -1
        state[S_HLASTEND] = -1
        bc = int(u[pos] * windows[0])
        pos += 1
        if bc == 0:
            state[S_LMODE] = 1
            state[S_LJ] = 1
            state[S_LSTART] = 0
            state[S_LSFMASK] = 0
        else:
            state[S_LMODE] = 0
            state[S_LBC] = bc
        state[S_HSTAGE] = 0
        bc = int(u[pos] * windows[0])
        pos += 1
        if params[P_HOFF] == 1:
            bc = total + 1  # never expires: node H stays silent
        if bc == 0:
            if p_o >= 1.0:
                dur = 1
            else:
                dur = 1 + int(math.floor(math.log(1.0 - u[pos]) / log_q))
            pos += 1
            state[S_HTX] = 1
            state[S_HREM] = dur
            state[S_HDUR] = dur
            state[S_HSTART] = 0
            state[S_HTOUCH] = 0
            state[S_HOWSLOTS] = 0
            state[S_HSTARTMC] = state[S_LMODE]
        else:
            state[S_HTX] = 0
            state[S_HBC] = bc

    t = state[S_T]
    tpos = state[S_TRACEPOS]
    while t < total:
        if pos + 3 > n_u:
            break
        lmc = state[S_LMODE] == 1
        htx = state[S_HTX] == 1
        counted = t >= warmup
        b = 0
        if counted:
            b = (t - warmup) * n_batch // span
            counters[b, C_SLOTS] += 1.0
            if lmc:
                counters[b, C_MCOT_SLOTS] += 1.0
            if htx:
                counters[b, C_HTX] += 1.0
                if lmc:
                    counters[b, C_HTX_MC] += 1.0
                else:
                    counters[b, C_HTX_OW] += 1.0
        if htx:
            if lmc:
                state[S_HTOUCH] = 1
                r = (state[S_LJ] - 1) // sf_slot
                if r > n_sf - 1:
                    r = n_sf - 1
                state[S_LSFMASK] |= 1 << r
            else:
                state[S_HOWSLOTS] += 1

        # ---- node L ----
        mcot_next = False
        if lmc:
            if state[S_LJ] < M:
                state[S_LJ] += 1
            else:
                mask = state[S_LSFMASK]
                overlapped = (mask >> (rsf - 1)) & 1
                if state[S_LSTART] >= warmup:
                    bt = (t - warmup) * n_batch // span
                    counters[bt, C_MCOTS] += 1.0
                    counters[bt, C_DOUBLE] += overlapped
                    for r in range(n_sf):
                        if (mask >> r) & 1:
                            sf_counts[bt, r] += 1.0
                if overlapped == 1 and state[S_LSTAGE] < max_stage:
                    state[S_LSTAGE] += 1
                else:
                    state[S_LSTAGE] = 0
                if tpos < trace_cap:
                    trace[tpos, 0] = t
                    trace[tpos, 1] = EV_MCOT_END
                    trace[tpos, 2] = overlapped
                    trace[tpos, 3] = state[S_LSTAGE]
                    tpos += 1
                elif trace_cap > 0:
                    state[S_TRACE_OVERFLOW] = 1
                state[S_LLASTEND] = t
                bc = int(u[pos] * windows[state[S_LSTAGE]])
                pos += 1
                if bc == 0:
                    mcot_next = True
                else:
                    state[S_LMODE] = 0
                    state[S_LBC] = bc
        elif not htx:
            state[S_LBC] -= 1
            if state[S_LBC] == 0:
                mcot_next = True
        if mcot_next:
            state[S_LMODE] = 1
            state[S_LJ] = 1
            state[S_LSTART] = t + 1
            state[S_LSFMASK] = 0
            last = state[S_LLASTEND]
            if last >= warmup and counted:
                counters[b, C_LGAP_SUM] += t - last
                counters[b, C_LGAP_N] += 1.0
            if tpos < trace_cap:
                trace[tpos, 0] = t + 1
                trace[tpos, 1] = EV_MCOT_START
                trace[tpos, 2] = state[S_LSTAGE]
                trace[tpos, 3] = 0
                tpos += 1
            elif trace_cap > 0:
                state[S_TRACE_OVERFLOW] = 1
        l_next_mc = state[S_LMODE] == 1

        # ---- node H ----
        pkt_next = False
        if htx:
            state[S_HREM] -= 1
            if state[S_HREM] == 0:
                coll = state[S_HTOUCH]
                dur = state[S_HDUR]
                if state[S_HSTART] >= warmup:
                    counters[b, C_PKTS] += 1.0
                    counters[b, C_PKT_SLOTS] += dur
                    if coll == 1:
                        counters[b, C_PKT_COLL] += 1.0
                    else:
                        counters[b, C_SUCC_SLOTS] += dur
                    if state[S_HSTARTMC] == 1:
                        if lmc:
                            counters[b, C_X] += 1.0
                        else:
                            counters[b, C_Z] += 1.0
                            counters[b, C_Z2SUM] += state[S_HOWSLOTS] / dur
                    else:
                        counters[b, C_Y] += 1.0
                if tpos < trace_cap:
                    trace[tpos, 0] = t
                    trace[tpos, 1] = EV_PKT_END
                    trace[tpos, 2] = coll
                    trace[tpos, 3] = state[S_HOWSLOTS]
                    tpos += 1
                elif trace_cap > 0:
                    state[S_TRACE_OVERFLOW] = 1
                if coll == 1:
                    if state[S_HSTAGE] < max_stage:
                        state[S_HSTAGE] += 1
                    elif h_reset == 1:
                        state[S_HSTAGE] = 0
                else:
                    state[S_HSTAGE] = 0
                state[S_HLASTEND] = t
                bc = int(u[pos] * windows[state[S_HSTAGE]])
                pos += 1
                if bc == 0:
                    pkt_next = True
                else:
                    state[S_HTX] = 0
                    state[S_HBC] = bc
        else:
            state[S_HBC] -= 1
            if state[S_HBC] == 0:
                pkt_next = True
        if pkt_next:
            if p_o >= 1.0:
                dur = 1
            else:
                dur = 1 + int(math.floor(math.log(1.0 - u[pos]) / log_q))
            pos += 1
            state[S_HTX] = 1
            state[S_HREM] = dur
            state[S_HDUR] = dur
            state[S_HSTART] = t + 1
            state[S_HTOUCH] = 0
            state[S_HOWSLOTS] = 0
            state[S_HSTARTMC] = 1 if l_next_mc else 0
            last = state[S_HLASTEND]
            if counted:
                if last >= warmup:
                    counters[b, C_HGAP_SUM] += t - last
                    counters[b, C_HGAP_N] += 1.0
                if mcot_next:
                    counters[b, C_SIMUL] += 1.0
            if tpos < trace_cap:
                trace[tpos, 0] = t + 1
                trace[tpos, 1] = EV_PKT_START
                trace[tpos, 2] = state[S_HSTAGE]
                trace[tpos, 3] = dur
                tpos += 1
            elif trace_cap > 0:
                state[S_TRACE_OVERFLOW] = 1
        t += 1

    state[S_T] = t
    state[S_UPOS] = pos
    state[S_TRACEPOS] = tpos
    return 0 if t >= total else 1


_kernel_jit = njit(cache=True, nogil=True)(_kernel)


# ---- public API ------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    system: SystemConfig
    seed: int = 1
    total_slots: int = 10_000_000
    warmup_slots: int = 100_000
    n_batches: int = 20
    doubling_rule: str = "rsf_overlap"
    node_h: bool = True  # False silences node H (sanity runs)

    def __post_init__(self):
        if not self.total_slots > self.warmup_slots >= 0:
            raise ValueError("need total_slots > warmup_slots >= 0")
        if self.n_batches < 2:
            raise ValueError("need at least two batches for confidence intervals")
        if self.doubling_rule != "rsf_overlap":
            raise ValueError(f"unsupported doubling rule {self.doubling_rule!r}")
        if self.system.n_sf > 62:
            raise ValueError("simulator tracks at most 62 subframes per MCOT")

    @property
    def post_warmup_slots(self) -> int:
        return self.total_slots - self.warmup_slots


@dataclass
class SimStats:
    config: SimConfig
    counters: np.ndarray = field(repr=False)  # (n_batches, N_COUNTERS)
    sf_counts: np.ndarray = field(repr=False)  # (n_batches, n_sf)
    seeds: tuple[int, ...] = ()
    trace: np.ndarray | None = field(default=None, repr=False)

    def total(self, name: str) -> float:
        return float(self.counters[:, COUNTER_NAMES.index(name)].sum())

    def __getattr__(self, name):
        if name in COUNTER_NAMES:
            return self.total(name)
        raise AttributeError(name)

    @property
    def z_count(self) -> float:
        return self.total("z_packets")

    @property
    def subframe_overlaps(self) -> np.ndarray:
        return self.sf_counts.sum(axis=0)

    def merge(self, other: "SimStats") -> "SimStats":
        if dataclasses.replace(self.config, seed=0) != dataclasses.replace(other.config, seed=0):
            raise ValueError("can only merge runs of the same configuration")
        return SimStats(
            self.config,
            self.counters + other.counters,
            self.sf_counts + other.sf_counts,
            self.seeds + other.seeds,
        )

    def to_dict(self) -> dict:
        totals = {name: self.total(name) for name in COUNTER_NAMES}
        return {
            "config": {**dataclasses.asdict(self.config), "system": self.config.system.to_dict()},
            "seeds": list(self.seeds),
            "totals": totals,
            "subframe_overlaps": self.subframe_overlaps.tolist(),
            "batches": self.counters.tolist(),
            "batch_subframe_overlaps": self.sf_counts.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def trace_lines(self) -> list[str]:
        """Line-delimited event log (only present when the run was traced)."""
        if self.trace is None:
            return []
        return [f"{int(s)} {EVENT_NAMES[int(k)]} {int(a)} {int(b)}" for s, k, a, b in self.trace]


def _params(cfg: SimConfig) -> np.ndarray:
    s = cfg.system
    p = np.zeros(N_PARAM, dtype=np.int64)
    p[P_M] = s.M
    p[P_NSF] = s.n_sf
    p[P_SFSLOT] = s.sf_slot
    p[P_RSF] = s.rsf
    p[P_MAXSTAGE] = s.m + 1
    p[P_WARMUP] = cfg.warmup_slots
    p[P_TOTAL] = cfg.total_slots
    p[P_NBATCH] = cfg.n_batches
    p[P_HRESET] = 1 if s.wifi_retry_reset else 0
    p[P_HOFF] = 0 if cfg.node_h else 1
    return p


def run(
    cfg: SimConfig,
    *,
    trace_events: int = 0,
    chunk: int = 1 << 20,
    use_jit: bool = True,
) -> SimStats:
    """Simulate ``cfg.total_slots`` slots; deterministic in ``cfg.seed``.

    ``trace_events > 0`` records up to that many events for :meth:`SimStats.trace_lines`.
    """
    kernel = _kernel_jit if use_jit else _kernel
    system = cfg.system
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    params = _params(cfg)
    windows = np.asarray(system.windows, dtype=np.int64)
    state = np.zeros(N_STATE, dtype=np.int64)
    counters = np.zeros((cfg.n_batches, N_COUNTERS))
    sf_counts = np.zeros((cfg.n_batches, system.n_sf))
    trace = np.zeros((trace_events, 4), dtype=np.int64)
    u = rng.random(chunk)
    while kernel(params, windows, system.p_o, state, u, counters, sf_counts, trace) != 0:
        u = np.concatenate([u[state[S_UPOS]:], rng.random(chunk)])
        state[S_UPOS] = 0
    recorded = trace[: state[S_TRACEPOS]] if trace_events else None
    return SimStats(cfg, counters, sf_counts, (cfg.seed,), recorded)


def run_seeds(cfg: SimConfig, seeds) -> SimStats:
    """Independent runs merged by counter addition."""
    merged = None
    for seed in seeds:
        s = run(dataclasses.replace(cfg, seed=int(seed)))
        merged = s if merged is None else merged.merge(s)
    return merged


# ---- measurement -------------------------------------------------------------


def _div(a: float, b: float) -> float:
    return a / b if b > 0 else math.nan


def _metrics_from_counts(c: np.ndarray, sf: np.ndarray, system: SystemConfig) -> dict[str, float]:
    slots = c[C_SLOTS]
    mcot_slots = c[C_MCOT_SLOTS]
    mcots = c[C_MCOTS]
    pkts = c[C_PKTS]
    tau_l = _div(mcot_slots, slots)
    tau_h = _div(c[C_HTX], slots)
    p_c = _div(c[C_PKT_COLL], pkts)
    c_sf = sf / mcots if mcots > 0 else np.full(system.n_sf, math.nan)
    avg = float(np.sum(c_sf))
    alpha = 1.0 - avg / system.n_sf
    out = {
        "tau_l": tau_l,
        "tau_h": tau_h,
        "tau_h_mc": _div(c[C_HTX_MC], mcot_slots),
        "tau_h_ow": _div(c[C_HTX_OW], slots - mcot_slots),
        "tau_h_mc_abs": _div(c[C_HTX_MC], slots),
        "tau_h_ow_abs": _div(c[C_HTX_OW], slots),
        "p_b_l": _div(c[C_HTX_OW], slots - mcot_slots),
        "p_overlap": _div(c[C_Z], pkts),
        "p_c_h": p_c,
        "p_d": _div(c[C_DOUBLE], mcots),
        "alpha": alpha,
        "s_l": alpha * tau_l,
        "s_h": (1.0 - p_c) * tau_h,
        "e_d_l": _div(c[C_LGAP_SUM], c[C_LGAP_N]),
        "e_d_h": _div(c[C_HGAP_SUM], c[C_HGAP_N]),
        "avg_collided_sf": avg,
        "z2": _div(c[C_Z2SUM], c[C_Z]),
    }
    for r in range(system.n_sf):
        out[f"c_sf_{r + 1}"] = float(c_sf[r])
    return out


def batch_means(stats: SimStats) -> tuple[dict[str, float], dict[str, float]]:
    """Point estimates from pooled counts and 95% half-widths from batch means."""
    system = stats.config.system
    point = _metrics_from_counts(stats.counters.sum(axis=0), stats.subframe_overlaps, system)
    per_batch = [
        _metrics_from_counts(stats.counters[i], stats.sf_counts[i], system)
        for i in range(stats.counters.shape[0])
    ]
    n = len(per_batch)
    t_crit = float(sps.t.ppf(0.975, n - 1))
    half = {}
    for key in point:
        vals = np.array([pb[key] for pb in per_batch], dtype=float)
        vals = vals[np.isfinite(vals)]
        half[key] = t_crit * float(vals.std(ddof=1)) / math.sqrt(len(vals)) if len(vals) > 1 else math.nan
    return point, half


def measure(stats: SimStats):
    """Empirical :class:`~laacoex.metrics.MetricsReport` from simulator counters."""
    from .metrics import MetricsReport

    system = stats.config.system
    point, half = batch_means(stats)

    def val(key):
        v = point[key]
        return None if v is None or (isinstance(v, float) and math.isnan(v)) else v

    totals = stats.counters.sum(axis=0)
    mcots = totals[C_MCOTS]
    tau_l = point["tau_l"]
    tau_h = point["tau_h"]
    diagnostics = {
        "ci_halfwidth": half,
        "x_per_cycle": _div(totals[C_X], mcots),
        "y_per_cycle": _div(totals[C_Y], mcots),
        "z_per_cycle": _div(totals[C_Z], mcots),
        "z_count": float(totals[C_Z]),
        "s_h_direct": _div(totals[C_SUCC_SLOTS], totals[C_SLOTS]),
        "e_d_l_formula": system.M * (1 - tau_l) / tau_l if tau_l and tau_l > 0 else math.inf,
        "e_d_h_formula": system.t_wifi * (1 - tau_h) / tau_h if tau_h and tau_h > 0 else math.inf,
        "mean_packet_slots": _div(totals[C_PKT_SLOTS], totals[C_PKTS]),
        "simultaneous_starts": float(totals[C_SIMUL]),
        "mcots": float(mcots),
        "packets": float(totals[C_PKTS]),
    }
    z2 = val("z2") if totals[C_Z] > 0 else None
    return MetricsReport(
        tau_l=tau_l,
        tau_h=tau_h,
        tau_h_mc=val("tau_h_mc"),
        tau_h_ow=val("tau_h_ow"),
        tau_h_mc_abs=point["tau_h_mc_abs"],
        tau_h_ow_abs=point["tau_h_ow_abs"],
        p_b_l=val("p_b_l"),
        p_overlap=val("p_overlap"),
        p_c_h=val("p_c_h"),
        c_sf=[point[f"c_sf_{r}"] for r in range(1, system.n_sf + 1)],
        p_d=val("p_d"),
        alpha=point["alpha"],
        s_l=point["s_l"],
        s_h=val("s_h"),
        e_d_l=point["e_d_l"],
        e_d_h=point["e_d_h"],
        avg_collided_sf=point["avg_collided_sf"],
        z2=z2,
        diagnostics=diagnostics,
    )


def save_stats(stats: SimStats, path: str | Path) -> None:
    Path(path).write_text(stats.to_json())
