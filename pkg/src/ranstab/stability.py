"""Stability certification of the balanced state: linearization of the
identified dynamics, Gershgorin disc test, eigenvalue verdict, and
projection of an unstable coupling policy onto the certified-stable set."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .netmodel import Topology
from .sysid import IdentifiedModel

NEAR_ZERO_MARGIN = 1e-6


@dataclass
class Tolerances:
    eq: float = 0.05  # |f(l*)| allowance
    sym_rel: float = 0.05  # |p_ij - p_ji| allowance relative to max|P|
    margin: float = NEAR_ZERO_MARGIN


@dataclass
class GershgorinDisc:
    center: float
    radius: float


@dataclass
class Linearization:
    l_star: float
    f_at: np.ndarray
    f_prime: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    K: np.ndarray


@dataclass
class StabilityReport:
    checklist: dict  # condition name -> bool
    check_details: dict
    discs: List[GershgorinDisc]
    gershgorin_verdict: str  # "conclusive-stable" | "inconclusive"
    max_eigenvalue: float
    verdict: str  # "stable" | "unstable" | "indeterminate"
    tolerances: Tolerances
    linearization: Optional[Linearization] = None
    stabilized_coupling: Optional[np.ndarray] = None

    def to_dict(self):
        d = {
            "checklist": self.checklist,
            "check_details": self.check_details,
            "discs": [{"center": g.center, "radius": g.radius} for g in self.discs],
            "gershgorin_verdict": self.gershgorin_verdict,
            "max_eigenvalue": self.max_eigenvalue,
            "verdict": self.verdict,
            "tolerances": {
                "eq": self.tolerances.eq,
                "sym_rel": self.tolerances.sym_rel,
                "margin": self.tolerances.margin,
            },
        }
        if self.linearization is not None:
            d["K"] = self.linearization.K.tolist()
            d["P"] = self.linearization.P.tolist()
            d["f_at"] = self.linearization.f_at.tolist()
            d["f_prime"] = self.linearization.f_prime.tolist()
            d["l_star"] = self.linearization.l_star
        if self.stabilized_coupling is not None:
            d["stabilized_coupling"] = self.stabilized_coupling.tolist()
        return d


def self_at(model: IdentifiedModel, ru: int, l_star: float = 1.0):
    """Evaluate an RU's identified self polynomial and its derivative."""
    coeffs = model.self_coefficients(ru)  # ascending powers
    powers = np.arange(len(coeffs))
    f = float(np.sum(coeffs * l_star**powers))
    fp = float(np.sum(coeffs[1:] * powers[1:] * l_star ** (powers[1:] - 1)))
    return f, fp


def coupling_matrix(model: IdentifiedModel, topology: Topology, l_star: float = 1.0) -> np.ndarray:
    """Partial derivative of the coupling terms in l_i at the symmetric point:
    only the linear gap coefficient survives (higher powers of the gap vanish)."""
    n = topology.n
    P = np.zeros((n, n))
    for i in range(n):
        for j in topology.neighbors(i):
            P[i, j] = model.coupling_linear_coefficient(i, j)
    return P


def assemble_jacobian(f_prime: np.ndarray, P: np.ndarray, topology: Topology) -> np.ndarray:
    """K = diag(f') + Q - A*P with Q = diag(row sums of A*P)."""
    A = topology.adjacency
    AP = A * P
    Q = np.diag(AP.sum(axis=1))
    return np.diag(np.asarray(f_prime, dtype=float)) + Q - AP


def gershgorin_check(K: np.ndarray):
    """Row discs and a sufficient-only verdict: conclusive-stable iff every
    disc lies strictly in the left half plane."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("K must be square")
    discs = []
    conclusive = True
    for i in range(K.shape[0]):
        radius = float(np.sum(np.abs(K[i])) - abs(K[i, i]))
        discs.append(GershgorinDisc(center=float(K[i, i]), radius=radius))
        if K[i, i] + radius >= 0:
            conclusive = False
    return discs, ("conclusive-stable" if conclusive else "inconclusive")


def max_eigenvalue(K: np.ndarray, sym_tol: float = 1e-10) -> float:
    """Largest eigenvalue (symmetric path) or largest real part (general path)."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("K must be square")
    scale = max(np.abs(K).max(), 1.0)
    if np.abs(K - K.T).max() <= sym_tol * scale:
        return float(np.linalg.eigvalsh(K)[-1])
    return float(np.max(np.linalg.eigvals(K).real))


def check_proposition1(
    model: IdentifiedModel,
    topology: Optional[Topology] = None,
    tolerances: Optional[Tolerances] = None,
    l_star: float = 1.0,
) -> StabilityReport:
    """Evaluate the balanced-state stability conditions on an identified
    model: self dynamics vanish at l* with negative slope, coupling rates
    symmetric and negative on edges; report the Gershgorin discs and the
    eigenvalue verdict of the linearization."""
    topology = topology or model.topology
    n = topology.n
    f_at = np.empty(n)
    f_prime = np.empty(n)
    for i in range(n):
        f_at[i], f_prime[i] = self_at(model, i, l_star)
    P = coupling_matrix(model, topology, l_star)
    return check_linearization(f_at, f_prime, P, topology, tolerances, l_star)


def check_linearization(
    f_at: np.ndarray,
    f_prime: np.ndarray,
    P: np.ndarray,
    topology: Topology,
    tolerances: Optional[Tolerances] = None,
    l_star: float = 1.0,
) -> StabilityReport:
    """Certify an explicit linearization (f(l*), f'(l*), coupling rates P);
    check_proposition1 derives these from an identified model, the pipeline
    also certifies a designed coupling directly after stabilize_policy."""
    tol = tolerances or Tolerances()
    f_at = np.asarray(f_at, dtype=float)
    f_prime = np.asarray(f_prime, dtype=float)
    P = np.asarray(P, dtype=float)
    K = assemble_jacobian(f_prime, P, topology)
    lin = Linearization(
        l_star=l_star,
        f_at=f_at,
        f_prime=f_prime,
        P=P,
        Q=np.diag((topology.adjacency * P).sum(axis=1)),
        K=K,
    )
    sym_tol = tol.sym_rel * max(np.abs(P).max(), 1e-12)
    edge_mask = topology.adjacency > 0
    asym = np.abs(P - P.T)[edge_mask]
    checklist = {
        "self_zero_at_lstar": bool(np.all(np.abs(f_at) <= tol.eq)),
        "self_slope_negative": bool(np.all(f_prime < -tol.margin)),
        "coupling_symmetric": bool(asym.size == 0 or np.max(asym) <= sym_tol),
        "coupling_negative": bool(np.all(P[edge_mask] < -tol.margin)) if edge_mask.any() else True,
    }
    details = {
        "max_abs_f_at": float(np.max(np.abs(f_at))),
        "max_f_prime": float(np.max(f_prime)),
        "max_coupling_asymmetry": float(np.max(asym)) if asym.size else 0.0,
        "max_edge_coupling": float(np.max(P[edge_mask])) if edge_mask.any() else None,
    }
    discs, gersh = gershgorin_check(K)
    lam_max = max_eigenvalue(K)
    if lam_max < -tol.margin:
        verdict = "stable"
    elif lam_max > tol.margin:
        verdict = "unstable"
    else:
        verdict = "indeterminate"
    return StabilityReport(
        checklist=checklist,
        check_details=details,
        discs=discs,
        gershgorin_verdict=gersh,
        max_eigenvalue=lam_max,
        verdict=verdict,
        tolerances=tol,
        linearization=lin,
    )


def stabilize_policy(P: np.ndarray, topology: Topology, epsilon: float) -> np.ndarray:
    """Project a coupling-rate matrix onto the certified-stable set:
    symmetrize each edge and clamp it at -epsilon or below."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    P = np.asarray(P, dtype=float)
    A = topology.adjacency
    sym = 0.5 * (P + P.T)
    out = np.where(A > 0, np.minimum(sym, -epsilon), 0.0)
    return out


def beta_from_coupling(P_tilde: np.ndarray, provisioned: np.ndarray, dt: float = 1.0) -> np.ndarray:
    """Map stabilized coupling rates back onto the simulator's offload
    coefficients: beta_ij = -p_ij * B_i * dt (PRBs per unit load gap)."""
    provisioned = np.asarray(provisioned, dtype=float)
    beta = -P_tilde * provisioned[:, None] * dt
    return np.clip(beta, 0.0, None)
