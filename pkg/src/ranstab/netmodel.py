"""Radio and load primitives: path loss, SINR, PRB demand, RU load, RSRP,
and the A3 handover trigger, plus the RU adjacency topology."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Topology:
    """Undirected RU adjacency: symmetric binary matrix with zero diagonal."""

    n: int
    adjacency: np.ndarray

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=float)
        if self.n < 1:
            raise ValueError("topology needs at least one RU")
        if self.adjacency.shape != (self.n, self.n):
            raise ValueError(
                f"adjacency shape {self.adjacency.shape} does not match n={self.n}"
            )
        if not np.array_equal(self.adjacency, self.adjacency.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(self.adjacency) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if not np.all(np.isin(self.adjacency, (0.0, 1.0))):
            raise ValueError("adjacency entries must be 0 or 1")

    @classmethod
    def from_edges(cls, n, edges):
        adj = np.zeros((n, n))
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop on RU {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i},{j}) out of range for n={n}")
            adj[i, j] = adj[j, i] = 1.0
        return cls(n=n, adjacency=adj)

    def edges(self):
        return [
            (i, j)
            for i in range(self.n)
            for j in range(i + 1, self.n)
            if self.adjacency[i, j]
        ]

    def neighbors(self, i):
        return [j for j in range(self.n) if self.adjacency[i, j]]

    def to_dict(self):
        return {"n": self.n, "edges": [[i, j] for i, j in self.edges()]}

    @classmethod
    def from_dict(cls, d):
        return cls.from_edges(int(d["n"]), d["edges"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class RadioParams:
    """Shared radio constants: PRB bandwidth, noise power, per-UE PRB cap,
    and the log-distance path-loss model."""

    alpha: float = 180e3  # Hz per PRB
    n0: float = 1e-13  # W
    bc: float = 20  # max PRBs per UE
    pathloss_exponent: float = 3.5
    pathloss_ref_gain: float = 1e-3  # gain at 1 m

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.n0 <= 0:
            raise ValueError("n0 must be positive")
        if self.bc < 1:
            raise ValueError("bc must be at least 1")
        if self.pathloss_exponent <= 0:
            raise ValueError("pathloss_exponent must be positive")


@dataclass
class RuConfig:
    """Per-RU radio unit configuration."""

    id: int
    position: tuple
    tx_power: float  # W
    prb_min: int = 10
    prb_max: int = 100
    cio: dict = field(default_factory=dict)  # neighbor id -> dB offset
    hys: float = 3.0  # dB

    def __post_init__(self):
        if not (0 < self.prb_min <= self.prb_max):
            raise ValueError("need 0 < prb_min <= prb_max")
        if self.tx_power <= 0:
            raise ValueError("tx_power must be positive")

    def cio_toward(self, j):
        return float(self.cio.get(j, self.cio.get(str(j), 0.0)))


@dataclass
class UeDemand:
    """A user with a constant bit-rate requirement and a finite lifetime."""

    id: int
    position: tuple
    bitrate: float  # bits/s
    lifetime: int  # steps remaining

    def __post_init__(self):
        if self.bitrate < 0:
            raise ValueError("bitrate must be nonnegative")
        if self.lifetime < 0:
            raise ValueError("lifetime must be nonnegative")


def channel_gain(ru_pos, ue_pos, params: RadioParams) -> float:
    """Log-distance path gain, distance clamped at 1 m."""
    d = math.hypot(ru_pos[0] - ue_pos[0], ru_pos[1] - ue_pos[1])
    return params.pathloss_ref_gain * max(d, 1.0) ** (-params.pathloss_exponent)


def sinr(serving_power_gain, interference_powers, n0) -> float:
    return serving_power_gain / (n0 + sum(interference_powers))


def prb_rate(alpha, sinr_value) -> float:
    """Shannon rate over one PRB (bits/s)."""
    return alpha * math.log2(1.0 + sinr_value)


def required_prbs(demand, rate, bc) -> float:
    """Real-valued PRB demand, capped at bc; rate 0 with demand maps to the cap."""
    if demand == 0:
        return 0.0
    if rate <= 0:
        return float(bc)
    return min(demand / rate, float(bc))


def ru_load(required, provisioned) -> float:
    """Total required PRBs over provisioned PRBs."""
    if provisioned <= 0:
        raise ValueError("provisioned PRBs must be positive")
    return float(sum(required)) / provisioned


def rsrp_dbm(tx_power, gain) -> float:
    return 10.0 * math.log10(tx_power * gain * 1000.0)


def a3_trigger(m_i, m_j, cio_j_to_i, cio_i_to_j, hys) -> bool:
    """A3 handover event: neighbor j beats serving i by more than hysteresis."""
    return m_j + cio_j_to_i > hys + m_i + cio_i_to_j
