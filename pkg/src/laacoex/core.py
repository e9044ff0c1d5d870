"""System configuration and state-space bookkeeping shared by both engines.

Node L (the LAA eNB) uses the aggregated chain with ``M + m + 2`` states:
``1..M`` are MCOT slots and ``M + 1 + i`` is backoff stage ``i``.  Node H
(the hidden Wi-Fi AP) uses backoff states ``(i, k)`` plus one overlapping
transmission state per stage.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal, NamedTuple

import numpy as np

# Table of 3GPP channel access priority classes: (CW_min, CW_max, T_MCOT options in ms).
PRIORITY_CLASSES = {
    1: (4, 8, (2,)),
    2: (8, 16, (3,)),
    3: (16, 64, (8, 10)),
    4: (16, 1024, (8, 10)),
}

DEFAULT_T_WIFI = (4, 54, 104, 154, 204)
LAST_ELIGIBLE_RSF = {8: 4, 10: 6}


@dataclass(frozen=True)
class SystemConfig:
    """All parameters of the two-node coexistence model.

    ``mcot_slots`` defaults to ``n_sf * sf_slot``; pass it explicitly only to
    probe other roundings of the MCOT length.
    """

    cw_min: int = 16
    m: int = 6
    n_sf: int = 8
    rsf: int = 1
    t_wifi: float = 54.0
    sf_slot: int = 111
    mcot_slots: int | None = None
    t_slot_us: float = 9.0
    z2: float = 0.5
    wifi_retry_reset: bool = True

    def __post_init__(self):
        if self.mcot_slots is None:
            object.__setattr__(self, "mcot_slots", self.n_sf * self.sf_slot)
        object.__setattr__(self, "t_wifi", float(self.t_wifi))
        if self.cw_min < 1:
            raise ValueError(f"cw_min must be positive, got {self.cw_min}")
        if self.m < 0:
            raise ValueError(f"m must be nonnegative, got {self.m}")
        if self.n_sf < 1 or self.sf_slot < 1:
            raise ValueError("n_sf and sf_slot must be positive")
        if not 1 <= self.rsf <= self.n_sf:
            raise ValueError(f"rsf must lie in 1..{self.n_sf}, got {self.rsf}")
        if self.mcot_slots < self.sf_slot:
            raise ValueError("mcot_slots must be at least one subframe long")
        if self.t_wifi < 1:
            raise ValueError(f"t_wifi must be >= 1 slot, got {self.t_wifi}")
        if not 0.0 <= self.z2 <= 1.0:
            raise ValueError(f"z2 must lie in [0, 1], got {self.z2}")
        if self.t_slot_us <= 0:
            raise ValueError("t_slot_us must be positive")

    @property
    def M(self) -> int:
        return self.mcot_slots

    @property
    def n_stages(self) -> int:
        return self.m + 2

    @property
    def windows(self) -> tuple[int, ...]:
        """Contention window ``W_i`` of every stage ``0..m+1``."""
        return tuple(min(2**i, 2**self.m) * self.cw_min for i in range(self.n_stages))

    @property
    def cw_max(self) -> int:
        return 2**self.m * self.cw_min

    @property
    def p_o(self) -> float:
        return 1.0 / self.t_wifi

    @property
    def n_laa_states(self) -> int:
        return self.mcot_slots + self.m + 2

    def replace(self, **changes) -> "SystemConfig":
        if "n_sf" in changes or "sf_slot" in changes:
            changes.setdefault("mcot_slots", None)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def class4_preset(
    t_mcot_ms: Literal[8, 10] = 8,
    rsf_choice: Literal["first", "last_eligible"] = "first",
    t_wifi: float = 54,
) -> SystemConfig:
    """Priority class 4 with 111-slot subframes; ``t_mcot_ms`` is 8 or 10."""
    if t_mcot_ms not in LAST_ELIGIBLE_RSF:
        raise ValueError(f"t_mcot_ms must be 8 or 10, got {t_mcot_ms}")
    if rsf_choice == "first":
        rsf = 1
    elif rsf_choice == "last_eligible":
        rsf = LAST_ELIGIBLE_RSF[t_mcot_ms]
    else:
        raise ValueError(f"unknown rsf_choice {rsf_choice!r}")
    return SystemConfig(cw_min=16, m=6, n_sf=t_mcot_ms, sf_slot=111, rsf=rsf, t_wifi=t_wifi)


# --------------------------------------------------------------------------
# Node L aggregated state indices
# --------------------------------------------------------------------------


def laa_stage(config: SystemConfig, l: int) -> int:
    """Backoff stage of aggregated node-L state ``l`` (must be a backoff state)."""
    if not config.M < l <= config.n_laa_states:
        raise ValueError(f"state {l} is not a backoff state")
    return l - config.M - 1


def laa_backoff_state(config: SystemConfig, stage: int) -> int:
    if not 0 <= stage <= config.m + 1:
        raise ValueError(f"stage {stage} out of range")
    return config.M + 1 + stage


def subframe_start_state(config: SystemConfig, r: int) -> int:
    """MCOT slot index at which subframe ``r`` (1-based) begins."""
    if not 1 <= r <= config.n_sf:
        raise ValueError(f"subframe {r} out of range 1..{config.n_sf}")
    return (r - 1) * config.sf_slot + 1


# --------------------------------------------------------------------------
# Node H state space
# --------------------------------------------------------------------------


class WifiState(NamedTuple):
    stage: int
    counter: int
    overlap: bool = False

    @property
    def transmitting(self) -> bool:
        return self.overlap or self.counter == 0

    @property
    def bc(self) -> int:
        return 0 if self.overlap else self.counter


@dataclass(frozen=True)
class WifiStateSpace:
    """Dense indexing of node H's states.

    Order: stage-major backoff states ``(i, 0..W_i-1)`` followed by the
    overlap states of stages ``0..m+1``.
    """

    windows: tuple[int, ...]
    offsets: np.ndarray = field(repr=False)
    stage: np.ndarray = field(repr=False)
    counter: np.ndarray = field(repr=False)
    overlap: np.ndarray = field(repr=False)

    @classmethod
    def from_config(cls, config: SystemConfig) -> "WifiStateSpace":
        windows = config.windows
        offsets = np.concatenate([[0], np.cumsum(windows)]).astype(np.int64)
        n_backoff = int(offsets[-1])
        n_stages = len(windows)
        stage = np.concatenate(
            [np.repeat(np.arange(n_stages), windows), np.arange(n_stages)]
        ).astype(np.int64)
        counter = np.concatenate(
            [np.concatenate([np.arange(w) for w in windows]), np.zeros(n_stages)]
        ).astype(np.int64)
        overlap = np.zeros(n_backoff + n_stages, dtype=bool)
        overlap[n_backoff:] = True
        for arr in (offsets, stage, counter, overlap):
            arr.setflags(write=False)
        return cls(windows, offsets, stage, counter, overlap)

    @property
    def n_stages(self) -> int:
        return len(self.windows)

    @property
    def n_backoff(self) -> int:
        return int(self.offsets[-1])

    @property
    def size(self) -> int:
        return self.n_backoff + self.n_stages

    def __len__(self) -> int:
        return self.size

    def backoff_index(self, stage: int, counter: int) -> int:
        if not 0 <= counter < self.windows[stage]:
            raise ValueError(f"counter {counter} outside stage {stage}")
        return int(self.offsets[stage]) + counter

    def overlap_index(self, stage: int) -> int:
        if not 0 <= stage < self.n_stages:
            raise ValueError(f"stage {stage} out of range")
        return self.n_backoff + stage

    def encode(self, state: WifiState) -> int:
        if state.overlap:
            return self.overlap_index(state.stage)
        return self.backoff_index(state.stage, state.counter)

    def decode(self, index: int) -> WifiState:
        if not 0 <= index < self.size:
            raise IndexError(index)
        return WifiState(int(self.stage[index]), int(self.counter[index]), bool(self.overlap[index]))

    def __iter__(self) -> Iterator[WifiState]:
        return (self.decode(i) for i in range(self.size))

    @property
    def transmitting(self) -> np.ndarray:
        """0/1 selector of transmitting states (``(i, 0)`` and overlap states)."""
        return (self.overlap | (self.counter == 0)).astype(float)

    @property
    def bc(self) -> np.ndarray:
        return np.where(self.overlap, 0, self.counter)


def enumerate_wifi_states(config: SystemConfig) -> list[WifiState]:
    return list(WifiStateSpace.from_config(config))


def wifi_state_count(config: SystemConfig) -> int:
    return sum(config.windows) + config.n_stages


# --------------------------------------------------------------------------
# Flat key-value config files
# --------------------------------------------------------------------------

_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def coerce_config_fields(values: dict[str, str]) -> dict:
    """Convert string values for the keys that name SystemConfig fields."""
    kinds = {f.name: f.type for f in dataclasses.fields(SystemConfig)}
    out = {}
    for key, value in values.items():
        if key not in kinds:
            raise ValueError(f"unknown config key {key!r}")
        kind = kinds[key]
        if "bool" in kind:
            out[key] = _BOOL_WORDS[value.lower()]
        elif "None" in kind and value.lower() in ("", "none"):
            out[key] = None
        elif "int" in kind:
            out[key] = int(value)
        else:
            out[key] = float(value)
    return out


def load_config(path: str | Path, **overrides) -> SystemConfig:
    values = coerce_config_fields(parse_kv_text(Path(path).read_text()))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SystemConfig(**values)
