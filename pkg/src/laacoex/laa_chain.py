"""Closed-form stationary solution of node L's backoff/MCOT chain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SystemConfig


@dataclass(frozen=True)
class LaaChainSolution:
    config: SystemConfig
    p_b_l: float
    p_d: float
    b00_1: float
    b_tx: np.ndarray  # b_{i,0^j}, same for every MCOT slot j
    b_backoff: tuple[np.ndarray, ...]  # b_backoff[i][k - 1] = b_{i,k}, k = 1..W_i-1
    tau_l: float
    p_stage_at_end: np.ndarray
    bc_one_ratio: np.ndarray

    def normalization_residual(self) -> float:
        total = sum(float(b.sum()) for b in self.b_backoff) + self.config.M * float(self.b_tx.sum())
        return abs(total - 1.0)


def stage_weights(p_d: float, n_stages: int) -> np.ndarray:
    """``p_d ** i`` for ``i = 0..n_stages-1`` (with ``0 ** 0 = 1``)."""
    return np.power(float(p_d), np.arange(n_stages), dtype=float)


def bc_one_ratio_for_window(w: int) -> float:
    """Share of backoff mass sitting at BC = 1 within a stage of window ``w``.

    ``(W - 1) / sum_{k=1}^{W-1} (W - k)``, which simplifies to ``2 / W``.
    """
    if w < 2:
        raise ValueError(f"window {w} has no backoff counters")
    return 2.0 / w


def solve_closed_form(config: SystemConfig, p_b_l: float, p_d: float) -> LaaChainSolution:
    """Stationary masses of node L given its busy and doubling probabilities.

    The geometric sums over stages are evaluated term by term, which sidesteps
    the removable singularities of the factored expression at ``p_d = 1/2``
    and ``p_d = 1``.
    """
    if not 0.0 <= p_b_l < 1.0:
        raise ValueError(f"p_b_l must lie in [0, 1), got {p_b_l}")
    if not 0.0 <= p_d <= 1.0:
        raise ValueError(f"p_d must lie in [0, 1], got {p_d}")
    windows = np.asarray(config.windows, dtype=float)
    M = config.M
    weights = stage_weights(p_d, config.n_stages)

    backoff_per_anchor = float(np.sum(weights * (windows - 1.0) / 2.0)) / (1.0 - p_b_l)
    tx_per_anchor = M * float(weights.sum())
    b00 = 1.0 / (backoff_per_anchor + tx_per_anchor)

    b_tx = weights * b00
    b_backoff = tuple(
        (w - np.arange(1, int(w))) / (w * (1.0 - p_b_l)) * b_tx[i] for i, w in enumerate(windows)
    )
    ratios = np.array([bc_one_ratio_for_window(int(w)) if w >= 2 else np.nan for w in windows])
    return LaaChainSolution(
        config=config,
        p_b_l=float(p_b_l),
        p_d=float(p_d),
        b00_1=b00,
        b_tx=b_tx,
        b_backoff=b_backoff,
        tau_l=min(M * float(b_tx.sum()), 1.0),  # rounding can overshoot when no backoff states exist
        p_stage_at_end=weights / weights.sum(),
        bc_one_ratio=ratios,
    )


def tau_l_closed_form(config: SystemConfig, p_b_l: float, p_d: float) -> float:
    return solve_closed_form(config, p_b_l, p_d).tau_l


def stage_occupancy_at_mcot_end(sol: LaaChainSolution) -> np.ndarray:
    """Probability node L is in each backoff stage at the last MCOT slot."""
    return sol.p_stage_at_end.copy()


def bc_one_ratio(sol: LaaChainSolution, stage: int) -> float:
    n = sol.config.n_stages
    if not 0 <= stage < n:
        raise ValueError(f"stage {stage} out of range 0..{n - 1}")
    return bc_one_ratio_for_window(sol.config.windows[stage])
