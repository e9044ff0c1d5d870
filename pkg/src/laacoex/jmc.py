"""Simplified joint chain of (node L, node H): assembly and stationary solve.

The joint kernel is never materialized at full scale.  It is described by a
list of outer transitions ``l -> l'``, each carrying a diagonal scaling over
node H's states and the inner regime applied to node H on that step.

Three solvers are available:

``power``
    Block-structured power iteration on the full kernel.
``dense``
    Direct sparse factorization of the materialized kernel (small configs).
``regenerative``
    Solves the chain embedded at MCOT starts (state of node H at ``l = 1``),
    then rebuilds every block.  This is what makes full-scale solves cheap:
    MCOT slots are a deterministic walk, so only a ``|S_H|``-sized system is
    solved per call.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import SystemConfig, WifiStateSpace
from .laa_chain import LaaChainSolution, bc_one_ratio_for_window
from .wifi_chain import InnerMatrix, Regime, build_all_inner

log = logging.getLogger(__name__)

Solver = Literal["power", "dense", "regenerative", "auto"]


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, trace=None):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual
        self.trace = trace


@dataclass(frozen=True)
class OuterTransition:
    from_l: int
    to_l: int
    diag: float | np.ndarray
    regime: Regime
    case: int

    def diag_vector(self, n_wifi: int) -> np.ndarray:
        if np.ndim(self.diag) == 0:
            return np.full(n_wifi, float(self.diag))
        return np.asarray(self.diag, dtype=float)


def _stage_entry_scalars(config: SystemConfig, sol: LaaChainSolution) -> tuple[float, np.ndarray]:
    """Probability of restarting an MCOT at once, and of landing in each backoff stage."""
    W = np.asarray(config.windows, dtype=float)
    ps = sol.p_stage_at_end
    p_d = sol.p_d
    m = config.m
    to_stage0 = float(ps[: m + 1].sum() * (1.0 - p_d) + ps[m + 1])
    restart = to_stage0 / W[0] + float(np.sum(ps[: m + 1] * p_d / W[1:]))
    landing = np.empty(config.n_stages)
    landing[0] = to_stage0 * (W[0] - 1.0) / W[0]
    landing[1:] = ps[: m + 1] * p_d * (W[1:] - 1.0) / W[1:]
    return restart, landing


def build_outer_transitions(
    config: SystemConfig,
    sol: LaaChainSolution,
    space: WifiStateSpace | None = None,
) -> list[OuterTransition]:
    if sol.config.windows != config.windows or sol.config.M != config.M:
        raise ValueError("chain solution was computed for a different configuration")
    space = space or WifiStateSpace.from_config(config)
    M = config.M
    tx = space.transmitting.astype(bool)
    restart, landing = _stage_entry_scalars(config, sol)

    out = [OuterTransition(l, l + 1, 1.0, Regime.MC, 1) for l in range(1, M)]
    out.append(OuterTransition(M, 1, restart, Regime.MC, 2))
    for j in range(config.n_stages):
        out.append(OuterTransition(M, M + 1 + j, float(landing[j]), Regime.OL, 3))
    for j, w in enumerate(config.windows):
        ratio = bc_one_ratio_for_window(w) if w >= 2 else 1.0
        leave = np.where(tx, 0.0, ratio)
        l = M + 1 + j
        out.append(OuterTransition(l, 1, leave, Regime.OW, 4))
        out.append(OuterTransition(l, l, 1.0 - leave, Regime.OW, 5))
    return out


class JointKernel:
    """Block view of the joint transition matrix built from outer transitions."""

    def __init__(
        self,
        config: SystemConfig,
        transitions: Sequence[OuterTransition],
        inner: dict[Regime, InnerMatrix],
    ):
        self.config = config
        self.transitions = list(transitions)
        self.inner = {Regime(k): v.matrix.tocsr() for k, v in inner.items()}
        self.n_laa = config.n_laa_states
        self.n_wifi = next(iter(self.inner.values())).shape[0]
        self._inner_T = {k: v.T.tocsr() for k, v in self.inner.items()}

        # Case-1 transitions form a shift along the MCOT; vectorize when the set is complete
        shift = [t for t in self.transitions if t.case == 1]
        self._shift_ok = (
            len(shift) == config.M - 1
            and all(np.ndim(t.diag) == 0 and float(t.diag) == 1.0 and t.regime == Regime.MC for t in shift)
            and sorted((t.from_l, t.to_l) for t in shift) == [(l, l + 1) for l in range(1, config.M)]
        )
        self._others = [t for t in self.transitions if not (self._shift_ok and t.case == 1)]

    def _apply(self, regime: Regime, rows: np.ndarray) -> np.ndarray:
        """``rows @ P_regime`` for a 1-D or 2-D (stacked rows) array."""
        return (self._inner_T[regime] @ rows.T).T

    def step(self, pi_blocks: np.ndarray) -> np.ndarray:
        new = np.zeros_like(pi_blocks)
        if self._shift_ok and self.config.M > 1:
            new[1 : self.config.M] = self._apply(Regime.MC, pi_blocks[: self.config.M - 1])
        for t in self._others:
            src = pi_blocks[t.from_l - 1]
            scaled = src * t.diag if np.ndim(t.diag) else src * float(t.diag)
            new[t.to_l - 1] += self._apply(t.regime, scaled)
        return new

    def outer_completeness(self) -> np.ndarray:
        """``sum_{l'} D^{l,l'}(h)`` for every (l, h); ones for a valid kernel."""
        total = np.zeros((self.n_laa, self.n_wifi))
        for t in self.transitions:
            total[t.from_l - 1] += t.diag_vector(self.n_wifi)
        return total

    def to_sparse(self) -> sp.csr_matrix:
        n = self.n_wifi
        blocks_r, blocks_c, blocks_v = [], [], []
        for t in self.transitions:
            block = sp.diags(t.diag_vector(n)) @ self.inner[t.regime]
            block = block.tocoo()
            blocks_r.append(block.row + (t.from_l - 1) * n)
            blocks_c.append(block.col + (t.to_l - 1) * n)
            blocks_v.append(block.data)
        size = self.n_laa * n
        P = sp.coo_matrix(
            (np.concatenate(blocks_v), (np.concatenate(blocks_r), np.concatenate(blocks_c))),
            shape=(size, size),
        ).tocsr()
        P.sum_duplicates()
        return P

    def row_sum_residual(self) -> float:
        """Max deviation from 1 of the joint kernel's row sums, without materializing it."""
        total = np.zeros((self.n_laa, self.n_wifi))
        for t in self.transitions:
            rs = np.asarray(self.inner[t.regime].sum(axis=1)).ravel()
            total[t.from_l - 1] += t.diag_vector(self.n_wifi) * rs
        return float(np.max(np.abs(total - 1.0)))

    def residual(self, pi_blocks: np.ndarray) -> float:
        return float(np.abs(self.step(pi_blocks) - pi_blocks).sum())


@dataclass
class JointDistribution:
    config: SystemConfig
    pi: np.ndarray = field(repr=False)
    residual: float
    solver: str
    iterations: int = 0
    p_b_l: float | None = None
    p_d: float | None = None
    residual_history: list[float] = field(default_factory=list, repr=False)

    @property
    def n_laa(self) -> int:
        return self.config.n_laa_states

    @property
    def n_wifi(self) -> int:
        return self.pi.size // self.n_laa

    @property
    def blocks(self) -> np.ndarray:
        return self.pi.reshape(self.n_laa, self.n_wifi)

    def block_masses(self) -> np.ndarray:
        return self.blocks.sum(axis=1)

    def marginal(self, l: int) -> np.ndarray:
        return marginal(self, l)


def marginal(dist: JointDistribution, l: int) -> np.ndarray:
    """Node H sub-vector ``pi^l`` for aggregated node-L state ``l`` (1-based)."""
    if not 1 <= l <= dist.n_laa:
        raise IndexError(f"state {l} outside 1..{dist.n_laa}")
    return dist.blocks[l - 1].copy()


def _power(kernel: JointKernel, tol: float, max_iters: int, cesaro: bool, pi0=None):
    shape = (kernel.n_laa, kernel.n_wifi)
    pi = np.full(shape, 1.0 / (shape[0] * shape[1])) if pi0 is None else pi0.reshape(shape).copy()
    avg = pi.copy()
    history: list[float] = []
    for it in range(1, max_iters + 1):
        nxt = kernel.step(pi)
        nxt /= nxt.sum()
        delta = float(np.abs(nxt - pi).sum())
        pi = nxt
        if cesaro:
            avg += (pi - avg) / (it + 1)
            delta = kernel.residual(avg) if it % 50 == 0 else np.inf
        history.append(delta)
        if delta <= tol:
            out = avg if cesaro else pi
            return out / out.sum(), it, history
    raise ConvergenceError(f"power iteration did not converge in {max_iters} iterations", history[-1], history)


def _dense(kernel: JointKernel, cap: int):
    size = kernel.n_laa * kernel.n_wifi
    if size > cap:
        raise ValueError(f"dense solve limited to {cap} states, config has {size}")
    P = kernel.to_sparse()
    A = (P.T - sp.identity(size, format="csr")).tolil()
    A[size - 1, :] = np.ones(size)
    b = np.zeros(size)
    b[-1] = 1.0
    pi = spla.spsolve(A.tocsc(), b)
    pi = np.clip(pi, 0.0, None)
    return (pi / pi.sum()).reshape(kernel.n_laa, kernel.n_wifi)


class RegenerativeSolver:
    """Stationary solver exploiting the deterministic MCOT walk.

    Everything independent of the outer scalars (the ``p_d``-dependent Case 2
    and Case 3 probabilities) is precomputed once per configuration, so each
    call to :meth:`solve` costs one ``|S_H|``-sized dense solve plus a rebuild.
    """

    def __init__(self, config: SystemConfig, inner: dict[Regime, InnerMatrix] | None = None,
                 space: WifiStateSpace | None = None):
        self.config = config
        self.space = space or WifiStateSpace.from_config(config)
        inner = inner or build_all_inner(config, self.space)
        self.P_mc = inner[Regime.MC].matrix.tocsr()
        self.P_ow = inner[Regime.OW].matrix.tocsr()
        self.P_ol = inner[Regime.OL].matrix.tocsr()
        self._P_mc_T = self.P_mc.T.tocsr()
        self._P_ol_T = self.P_ol.T.tocsr()
        n = self.space.size
        M = config.M
        tx = self.space.transmitting.astype(bool)

        A = np.linalg.matrix_power(self.P_mc.toarray(), M - 1)  # MCOT slot 1 -> slot M
        self.A_P_mc = np.asarray((self._P_mc_T @ A.T).T)
        A_P_ol = np.asarray((self._P_ol_T @ A.T).T)
        del A

        # one backoff block per distinct window
        self._backoff_lu: dict[int, spla.SuperLU] = {}
        self.A_G: list[np.ndarray] = []
        cache: dict[int, np.ndarray] = {}
        self._leave: list[np.ndarray] = []
        for w in config.windows:
            ratio = bc_one_ratio_for_window(w) if w >= 2 else 1.0
            leave = np.where(tx, 0.0, ratio)
            self._leave.append(leave)
            if w not in cache:
                stay = sp.diags(1.0 - leave) @ self.P_ow
                K = (sp.identity(n, format="csc") - stay).tocsc()
                lu = spla.splu(K.T.tocsc())
                self._backoff_lu[w] = lu
                exit_map = (sp.diags(leave) @ self.P_ow).toarray()
                F = sla.solve(K.toarray(), exit_map, overwrite_a=True, overwrite_b=True)
                cache[w] = A_P_ol @ F
            self.A_G.append(cache[w])

    def solve(self, restart: float, landing: np.ndarray) -> tuple[np.ndarray, float]:
        """Return the full stationary blocks and the embedded-chain residual."""
        T = restart * self.A_P_mc
        for c, G in zip(landing, self.A_G):
            if c != 0.0:
                T = T + c * G
        n = T.shape[0]
        lhs = T.T - np.eye(n)
        lhs[-1, :] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        nu = np.linalg.solve(lhs, rhs)
        nu = np.clip(nu, 0.0, None)
        nu /= nu.sum()
        embedded_residual = float(np.abs(nu @ T - nu).sum())
        return self.rebuild(nu, landing), embedded_residual

    def rebuild(self, nu: np.ndarray, landing: np.ndarray) -> np.ndarray:
        M = self.config.M
        blocks = np.empty((self.config.n_laa_states, nu.size))
        blocks[0] = nu
        for l in range(1, M):
            blocks[l] = self._P_mc_T @ blocks[l - 1]
        entry = self._P_ol_T @ blocks[M - 1]
        for j, w in enumerate(self.config.windows):
            if landing[j] == 0.0:
                blocks[M + j] = 0.0
            else:
                blocks[M + j] = landing[j] * self._backoff_lu[w].solve(entry)
        blocks = np.clip(blocks, 0.0, None)
        return blocks / blocks.sum()


def stationary(
    config: SystemConfig,
    sol: LaaChainSolution,
    transitions: Sequence[OuterTransition] | None = None,
    inner_matrices: dict[Regime, InnerMatrix] | None = None,
    solver: Solver = "auto",
    tol: float = 1e-10,
    max_iters: int = 200_000,
    *,
    dense_cap: int = 50_000,
    cesaro: bool = False,
    regenerative: RegenerativeSolver | None = None,
    pi0: np.ndarray | None = None,
) -> JointDistribution:
    """Stationary distribution of the joint chain at the given node-L solution."""
    space = WifiStateSpace.from_config(config)
    inner_matrices = inner_matrices or build_all_inner(config, space)
    transitions = transitions or build_outer_transitions(config, sol, space)
    kernel = JointKernel(config, transitions, inner_matrices)
    if solver == "auto":
        solver = "regenerative"

    history: list[float] = []
    iterations = 0
    if solver == "power":
        blocks, iterations, history = _power(kernel, tol, max_iters, cesaro, pi0)
    elif solver == "dense":
        blocks = _dense(kernel, dense_cap)
    elif solver == "regenerative":
        regen = regenerative or RegenerativeSolver(config, inner_matrices, space)
        restart, landing = _scalars_from_transitions(config, transitions)
        blocks, _ = regen.solve(restart, landing)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    residual = kernel.residual(blocks)
    return JointDistribution(
        config=config,
        pi=blocks.ravel(),
        residual=residual,
        solver=solver,
        iterations=iterations,
        p_b_l=sol.p_b_l,
        p_d=sol.p_d,
        residual_history=history,
    )


def _scalars_from_transitions(config: SystemConfig, transitions: Sequence[OuterTransition]):
    M = config.M
    restart = None
    landing = np.zeros(config.n_stages)
    for t in transitions:
        if t.case == 2:
            restart = float(t.diag)
        elif t.case == 3:
            landing[t.to_l - M - 1] = float(t.diag)
    if restart is None:
        raise ValueError("transition list lacks the MCOT restart transition")
    return restart, landing


# --------------------------------------------------------------------------
# dump / restore keyed by configuration hash
# --------------------------------------------------------------------------


def distribution_key(config: SystemConfig, p_b_l: float | None, p_d: float | None) -> str:
    return f"{config.config_hash()}-{p_b_l!r}-{p_d!r}".replace("/", "_")


def dump_distribution(dist: JointDistribution, path: str | Path) -> None:
    meta = {
        "config": dist.config.to_dict(),
        "config_hash": dist.config.config_hash(),
        "residual": dist.residual,
        "solver": dist.solver,
        "iterations": dist.iterations,
        "p_b_l": dist.p_b_l,
        "p_d": dist.p_d,
    }
    np.savez_compressed(path, pi=dist.pi, meta=np.array(json.dumps(meta)))


def load_distribution(path: str | Path, expect: SystemConfig | None = None) -> JointDistribution:
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        pi = data["pi"]
    config = SystemConfig(**meta["config"])
    if expect is not None and expect.config_hash() != config.config_hash():
        raise ValueError("stored distribution belongs to a different configuration")
    return JointDistribution(
        config=config, pi=pi, residual=meta["residual"], solver=meta["solver"],
        iterations=meta["iterations"], p_b_l=meta["p_b_l"], p_d=meta["p_d"],
    )
