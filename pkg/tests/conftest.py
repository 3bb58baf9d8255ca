"""Shared fixtures: the synthetic coupled-dynamics generator used by the
identification tests and the acceptance suite."""

import numpy as np
import pytest

from ranstab import TelemetrySeries
from ranstab.simulator import grid_topology

SELF_COEFFS = (1.229, -1.35, 0.0, 0.122)  # ascending powers of l
COUPLING_P = -0.4


def reference_rhs(loads, adjacency):
    """dl/dt = 1.229 - 1.35 l + 0.122 l^3 + p * sum_j a_ij (l_i - l_j)."""
    loads = np.asarray(loads, dtype=float)
    gaps = (adjacency * (loads[:, None] - loads[None, :])).sum(axis=1)
    return 1.229 - 1.35 * loads + 0.122 * loads**3 + COUPLING_P * gaps


def rk4_trajectory(x0, adjacency, n_steps, dt):
    x = np.asarray(x0, dtype=float).copy()
    traj = [x.copy()]
    for _ in range(n_steps - 1):
        k1 = reference_rhs(x, adjacency)
        k2 = reference_rhs(x + 0.5 * dt * k1, adjacency)
        k3 = reference_rhs(x + 0.5 * dt * k2, adjacency)
        k4 = reference_rhs(x + dt * k3, adjacency)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        traj.append(x.copy())
    return np.array(traj)


def synthetic_segments(topology, seed=0, n_segments=40, samples=50, dt=0.01):
    """Short restarts from independent random initial loads: 2000 samples in
    total, rich enough to expose both the self cubic and the coupling."""
    rng = np.random.default_rng(seed)
    segments = []
    for _ in range(n_segments):
        x0 = rng.uniform(0.2, 2.4, topology.n)
        loads = rk4_trajectory(x0, topology.adjacency, samples, dt)
        segments.append(TelemetrySeries(times=np.arange(samples) * dt, loads=loads))
    return segments


@pytest.fixture(scope="session")
def grid12():
    return grid_topology()
