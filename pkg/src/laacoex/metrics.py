"""Performance metrics from a joint distribution, and the (p_b^L, p_d) fixed point."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import SystemConfig, WifiStateSpace, subframe_start_state
from .jmc import (
    ConvergenceError,
    JointDistribution,
    RegenerativeSolver,
    Solver,
    build_outer_transitions,
    stationary,
)
from .laa_chain import solve_closed_form
from .wifi_chain import build_all_inner

log = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    tau_l: float
    tau_h: float
    tau_h_mc: float | None
    tau_h_ow: float | None
    tau_h_mc_abs: float
    tau_h_ow_abs: float
    p_b_l: float | None
    p_overlap: float | None
    p_c_h: float | None
    c_sf: list[float]
    p_d: float | None
    alpha: float
    s_l: float
    s_h: float | None
    e_d_l: float
    e_d_h: float
    avg_collided_sf: float
    z2: float | None = None
    diagnostics: dict = field(default_factory=dict)

    # column order of the flattened CSV row
    SCALAR_FIELDS = (
        "tau_l", "tau_h", "tau_h_mc", "tau_h_ow", "tau_h_mc_abs", "tau_h_ow_abs",
        "p_b_l", "p_overlap", "p_c_h", "p_d", "alpha", "s_l", "s_h", "e_d_l", "e_d_h",
        "avg_collided_sf", "z2",
    )

    def metric_items(self) -> list[tuple[str, float | None]]:
        """Flat (name, value) pairs; subframe probabilities become ``c_sf_<r>``."""
        items = [(name, getattr(self, name)) for name in self.SCALAR_FIELDS]
        items += [(f"c_sf_{r}", v) for r, v in enumerate(self.c_sf, 1)]
        return items

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=_json_default)

    def csv_header(self) -> list[str]:
        return [name for name, _ in self.metric_items()]

    def csv_row(self) -> list[str]:
        return ["" if v is None else repr(float(v)) for _, v in self.metric_items()]


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj))


def _safe_div(num: float, den: float) -> float | None:
    return None if den == 0 else num / den


def transmit_probabilities(dist: JointDistribution, config: SystemConfig | None = None):
    """``(tau_l, tau_h, tau_h_mc, tau_h_ow)``; conditionals are ``None`` when undefined."""
    config = config or dist.config
    selector = WifiStateSpace.from_config(config).transmitting
    blocks = dist.blocks
    M = config.M
    tau_l = float(blocks[:M].sum())
    tx_mc = float((blocks[:M] @ selector).sum())
    tx_ow = float((blocks[M:] @ selector).sum())
    return tau_l, tx_mc + tx_ow, _safe_div(tx_mc, tau_l), _safe_div(tx_ow, 1.0 - tau_l)


def collision_probability(
    tau_l: float, tau_h: float, tau_h_mc: float | None, config: SystemConfig
) -> tuple[float | None, float | None]:
    """Per-packet collision probability of node H and its overlap probability."""
    if tau_h <= 0:
        return None, None
    mc = 0.0 if tau_h_mc is None else tau_h_mc
    p_overlap = tau_l * mc * (config.t_wifi - 1.0) / (config.M * tau_h)
    p_c = mc * tau_l / tau_h + config.z2 * p_overlap
    if not 0.0 <= p_c <= 1.0:
        log.warning("p_c_h = %.6g clamped to [0, 1]", p_c)
        p_c = min(max(p_c, 0.0), 1.0)
    return p_c, p_overlap


def _subframe_probs(dist: JointDistribution, config: SystemConfig, selector: np.ndarray) -> np.ndarray:
    out = np.empty(config.n_sf)
    for r in range(1, config.n_sf + 1):
        block = dist.blocks[subframe_start_state(config, r) - 1]
        mass = block.sum()
        if mass <= 0:
            raise ValueError(f"no stationary mass at the start of subframe {r}")
        out[r - 1] = float(block @ selector) / mass
    return out


CSF_RULES = ("inflight", "backoff_only")


def csf_selector(config: SystemConfig, rule: str = "inflight", space: WifiStateSpace | None = None) -> np.ndarray:
    """Node H states counted as hitting a subframe, judged at its first slot.

    ``backoff_only`` counts backoff counters with ``1 <= BC < sf_slot``;
    ``inflight`` additionally counts a transmission already on air
    (``BC = 0`` and overlap states).
    """
    space = space or WifiStateSpace.from_config(config)
    bc = space.bc
    if rule == "inflight":
        return (bc < config.sf_slot).astype(float)
    if rule == "backoff_only":
        return ((bc >= 1) & (bc < config.sf_slot)).astype(float)
    raise ValueError(f"unknown subframe collision rule {rule!r}")


def subframe_collision(dist: JointDistribution, config: SystemConfig | None = None, rule: str = "inflight"):
    """``C_sf(r)`` for ``r = 1..n_sf`` and the doubling probability ``C_sf(rsf)``."""
    config = config or dist.config
    c_sf = _subframe_probs(dist, config, csf_selector(config, rule))
    return c_sf, float(c_sf[config.rsf - 1])


def throughput_delay(
    tau_l: float, tau_h: float, p_c_h: float | None, c_sf: Sequence[float], config: SystemConfig
):
    """``(s_l, e_d_l, s_h, e_d_h, alpha)``; delays are ``inf`` for a silent node."""
    alpha = 1.0 - float(np.sum(c_sf)) / config.n_sf
    s_l = alpha * tau_l
    e_d_l = config.M * (1.0 - tau_l) / tau_l if tau_l > 0 else math.inf
    s_h = None if p_c_h is None else (1.0 - p_c_h) * tau_h
    e_d_h = config.t_wifi * (1.0 - tau_h) / tau_h if tau_h > 0 else math.inf
    return s_l, e_d_l, s_h, e_d_h, alpha


def report_from_distribution(
    dist: JointDistribution, config: SystemConfig | None = None, csf_rule: str = "inflight"
) -> MetricsReport:
    config = config or dist.config
    tau_l, tau_h, tau_h_mc, tau_h_ow = transmit_probabilities(dist, config)
    p_c_h, p_overlap = collision_probability(tau_l, tau_h, tau_h_mc, config)
    c_sf, c_rsf = subframe_collision(dist, config, csf_rule)
    other = "backoff_only" if csf_rule == "inflight" else "inflight"
    s_l, e_d_l, s_h, e_d_h, alpha = throughput_delay(tau_l, tau_h, p_c_h, c_sf, config)
    diagnostics = {
        "c_sf_rsf": c_rsf,
        "residual": dist.residual,
        "solver": dist.solver,
        "csf_rule": csf_rule,
        f"c_sf_{other}": subframe_collision(dist, config, other)[0].tolist(),
    }
    if dist.p_b_l is not None and dist.p_d is not None:
        diagnostics["tau_l_closed_form"] = solve_closed_form(config, dist.p_b_l, dist.p_d).tau_l
    return MetricsReport(
        tau_l=tau_l,
        tau_h=tau_h,
        tau_h_mc=tau_h_mc,
        tau_h_ow=tau_h_ow,
        tau_h_mc_abs=0.0 if tau_h_mc is None else tau_h_mc * tau_l,
        tau_h_ow_abs=0.0 if tau_h_ow is None else tau_h_ow * (1.0 - tau_l),
        p_b_l=dist.p_b_l if dist.p_b_l is not None else tau_h_ow,
        p_overlap=p_overlap,
        p_c_h=p_c_h,
        c_sf=c_sf.tolist(),
        p_d=dist.p_d if dist.p_d is not None else c_rsf,
        alpha=alpha,
        s_l=s_l,
        s_h=s_h,
        e_d_l=e_d_l,
        e_d_h=e_d_h,
        avg_collided_sf=float(c_sf.sum()),
        # the chain does not measure z2; it assumes the configured split wherever overlaps occur
        z2=config.z2 if p_overlap else None,
        diagnostics=diagnostics,
    )


# --------------------------------------------------------------------------
# fixed point
# --------------------------------------------------------------------------


@dataclass
class FixedPointRound:
    p_b_l: float
    p_d: float
    tau_h_ow: float
    c_sf_rsf: float
    delta: float


@dataclass
class FixedPointResult:
    report: MetricsReport
    dist: JointDistribution
    trace: list[FixedPointRound]
    seconds: float = 0.0

    @property
    def rounds(self) -> int:
        return len(self.trace)


class AnalyticModel:
    """Per-configuration solver cache for repeated stationary solves."""

    def __init__(self, config: SystemConfig, solver: Solver = "auto", csf_rule: str = "inflight"):
        self.config = config
        self.csf_rule = csf_rule
        self.space = WifiStateSpace.from_config(config)
        self.inner = build_all_inner(config, self.space)
        self.solver = "regenerative" if solver == "auto" else solver
        self._regen = RegenerativeSolver(config, self.inner, self.space) if self.solver == "regenerative" else None

    def for_rsf(self, rsf: int) -> "AnalyticModel":
        """Same chain, different reference subframe (reuses all precomputation)."""
        clone = object.__new__(AnalyticModel)
        clone.__dict__.update(self.__dict__)
        clone.config = self.config.replace(rsf=rsf)
        return clone

    def solve(self, p_b_l: float, p_d: float, **kwargs) -> JointDistribution:
        sol = solve_closed_form(self.config, p_b_l, p_d)
        transitions = build_outer_transitions(self.config, sol, self.space)
        return stationary(
            self.config, sol, transitions, self.inner, solver=self.solver,
            regenerative=self._regen, **kwargs,
        )

    def analyze(self, p_b_l: float, p_d: float) -> MetricsReport:
        return report_from_distribution(self.solve(p_b_l, p_d), self.config, self.csf_rule)


FIXED_POINT_METHODS = ("secant", "damped")


def fixed_point(
    config: SystemConfig,
    seed_p_b_l: float = 0.0,
    seed_p_d: float = 0.0,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_rounds: int = 500,
    *,
    method: str = "secant",
    solver: Solver = "auto",
    csf_rule: str = "inflight",
    model: AnalyticModel | None = None,
) -> FixedPointResult:
    """Alternate stationary solves with ``p_b^L <- tau_H^OW`` and ``p_d <- C_sf(rsf)``.

    ``damped`` mixes old and new values with weight ``damping``. ``secant``
    exploits that the joint chain depends on ``p_d`` alone: it takes secant
    steps on ``C_sf(rsf) - p_d`` and copies ``tau_H^OW`` into ``p_b^L``
    directly, falling back to a damped step when the secant is undefined or
    leaves ``[0, 1)``.
    """
    if not (0.0 <= seed_p_b_l < 1.0 and 0.0 <= seed_p_d < 1.0):
        raise ValueError("seeds must lie in [0, 1)")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if method not in FIXED_POINT_METHODS:
        raise ValueError(f"unknown fixed point method {method!r}")
    start = time.perf_counter()
    model = model or AnalyticModel(config, solver, csf_rule)
    if model.config != config:
        model = model.for_rsf(config.rsf)
    p_b, p_d = seed_p_b_l, seed_p_d
    trace: list[FixedPointRound] = []
    for _ in range(max_rounds):
        dist = model.solve(p_b, p_d)
        _, _, _, tau_h_ow = transmit_probabilities(dist, config)
        tau_h_ow = 0.0 if tau_h_ow is None else tau_h_ow
        _, c_rsf = subframe_collision(dist, config, csf_rule)
        delta = max(abs(tau_h_ow - p_b), abs(c_rsf - p_d))
        trace.append(FixedPointRound(p_b, p_d, tau_h_ow, c_rsf, delta))
        log.debug("fixed point round %d: p_b=%.12f p_d=%.12f delta=%.3e", len(trace), p_b, p_d, delta)
        if delta <= tol:
            report = report_from_distribution(dist, config, csf_rule)
            report.diagnostics["rounds"] = len(trace)
            return FixedPointResult(report, dist, trace, time.perf_counter() - start)
        next_d = (1.0 - damping) * p_d + damping * c_rsf
        if method == "secant":
            p_b = tau_h_ow
            if len(trace) >= 2:
                prev = trace[-2]
                g0, g1 = prev.c_sf_rsf - prev.p_d, c_rsf - p_d
                if g1 != g0:
                    guess = p_d - g1 * (p_d - prev.p_d) / (g1 - g0)
                    if 0.0 <= guess < 1.0:
                        next_d = guess
        else:
            p_b = (1.0 - damping) * p_b + damping * tau_h_ow
        p_d = next_d
        p_b = min(p_b, 1.0 - 1e-12)
    raise ConvergenceError(f"fixed point not reached in {max_rounds} rounds", trace[-1].delta, trace)


def measure_z2_assumption(sim_stats, min_events: int = 100) -> float | None:
    """Mean share of an overlapping packet that falls on the OW side."""
    count = sim_stats.z_count if hasattr(sim_stats, "z_count") else sim_stats["z_count"]
    total = sim_stats.z2_sum if hasattr(sim_stats, "z2_sum") else sim_stats["z2_sum"]
    if count < min_events:
        return None
    return total / count
