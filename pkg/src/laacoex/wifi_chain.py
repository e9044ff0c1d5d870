"""Node H's inner transition matrices for the three period regimes.

MC  - node L is transmitting: every completed packet collided.
OW  - node L is backing off: packets that started in the OW period succeed.
OL  - last MCOT slot followed by a backoff slot: an ongoing transmission is
      rerouted to its overlap state, which later completes as a collision.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core import SystemConfig, WifiStateSpace


class Regime(str, Enum):
    MC = "MC"
    OW = "OW"
    OL = "OL"


# (p_c, p_b, overlap indicator) per regime
REGIME_PARAMS = {
    Regime.MC: (1.0, 0.0, False),
    Regime.OW: (0.0, 0.0, False),
    Regime.OL: (1.0, 0.0, True),
}


@dataclass(frozen=True)
class InnerMatrix:
    regime: Regime
    matrix: sp.csr_matrix
    p_c: float
    p_b: float
    overlap_flag: bool
    p_o: float

    @property
    def shape(self):
        return self.matrix.shape

    def row_sum_residual(self) -> float:
        return float(np.max(np.abs(np.asarray(self.matrix.sum(axis=1)).ravel() - 1.0)))


def _next_stage(stage: int, config: SystemConfig) -> int:
    if stage <= config.m:
        return stage + 1
    return 0 if config.wifi_retry_reset else config.m + 1


def build_inner_matrix(
    config: SystemConfig,
    regime: Regime | str,
    space: WifiStateSpace | None = None,
    *,
    p_c: float | None = None,
    p_b: float | None = None,
) -> InnerMatrix:
    """Transition matrix of node H under one regime.

    ``p_c`` and ``p_b`` default to the regime constants; overriding them
    yields the generic parameterized chain.
    """
    regime = Regime(regime)
    space = space or WifiStateSpace.from_config(config)
    default_pc, default_pb, flag = REGIME_PARAMS[regime]
    p_c = default_pc if p_c is None else p_c
    p_b = default_pb if p_b is None else p_b
    p_o = config.p_o
    windows = space.windows

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    def add(r, c, v):
        r = np.atleast_1d(np.asarray(r, dtype=np.int64))
        c = np.atleast_1d(np.asarray(c, dtype=np.int64))
        v = np.broadcast_to(np.asarray(v, dtype=float), np.broadcast(r, c).shape)
        r, c = np.broadcast_arrays(r, c)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.asarray(v).ravel())

    def fan_out(src: int, stage: int, mass: float):
        lo = int(space.offsets[stage])
        add(src, np.arange(lo, lo + windows[stage]), mass / windows[stage])

    for i, w in enumerate(windows):
        lo = int(space.offsets[i])
        # backoff decrements
        if w > 1:
            ks = np.arange(1, w)
            add(lo + ks, lo + ks - 1, 1.0 - p_b)
            if p_b > 0:
                add(lo + ks, lo + ks, p_b)
        # transmitting (i, 0)
        tx = lo
        if p_o < 1.0:
            target = space.overlap_index(i) if flag else tx
            add(tx, target, 1.0 - p_o)
        collide_stage = _next_stage(i, config)
        if p_c > 0:
            fan_out(tx, collide_stage, p_o * p_c)
        if p_c < 1:
            fan_out(tx, 0, p_o * (1.0 - p_c))
        # overlapping transmission always completes as a collision
        ov = space.overlap_index(i)
        if p_o < 1.0:
            add(ov, ov, 1.0 - p_o)
        fan_out(ov, collide_stage, p_o)

    n = space.size
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    matrix.sum_duplicates()
    return InnerMatrix(regime, matrix, p_c, p_b, flag, p_o)


def build_all_inner(config: SystemConfig, space: WifiStateSpace | None = None) -> dict[Regime, InnerMatrix]:
    space = space or WifiStateSpace.from_config(config)
    return {r: build_inner_matrix(config, r, space) for r in Regime}


def dump_triplets(inner: InnerMatrix, path: str | Path) -> None:
    """Write ``row col value`` lines (plus a header comment) for debugging."""
    coo = inner.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# regime={inner.regime.value} n={inner.shape[0]} nnz={coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")


def load_triplets(path: str | Path) -> sp.csr_matrix:
    header = Path(path).read_text().splitlines()[0]
    n = int(header.split("n=")[1].split()[0])
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((n, n))
    return sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, n)).tocsr()
