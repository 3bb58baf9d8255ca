"""Identification of coupled load dynamics from telemetry: derivative
estimation, polynomial candidate libraries over self load and neighbor
load gaps, L1-penalized regression with least-squares debiasing, and
forward simulation of the identified model."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .netmodel import Topology
from .store import TelemetrySeries

CD_TOL = 1e-8
CD_MAX_SWEEPS = 10_000


class IdentificationError(RuntimeError):
    pass


@dataclass
class LibrarySpec:
    """Candidate-function library: self powers 0..degree_self of l_i and
    gap powers 1..degree_coupling of (l_i - l_j)."""

    degree_self: int = 3
    degree_coupling: int = 3
    coupling_mode: str = "aggregated"  # or "per-edge"

    def __post_init__(self):
        if self.degree_self < 1 or self.degree_coupling < 1:
            raise ValueError("library degrees must be at least 1")
        if self.coupling_mode not in ("aggregated", "per-edge"):
            raise ValueError(f"unknown coupling_mode {self.coupling_mode!r}")


@dataclass
class DerivativeMatrix:
    ldot: np.ndarray  # (k, n)
    times: np.ndarray  # (k,)
    row_offset: int  # index of the first aligned sample in the source series


@dataclass
class RuFit:
    ru_id: int
    xi_f: np.ndarray  # length degree_self + 1, ascending powers
    xi_g: np.ndarray  # aggregated: (degree_coupling,); per-edge: (n_neighbors, degree_coupling)
    neighbors: List[int]
    r2: Optional[float]
    residual_norm: float


@dataclass
class IdentifiedModel:
    library: LibrarySpec
    gamma: float
    topology: Topology
    fits: List[RuFit]

    @property
    def n(self):
        return self.topology.n

    def self_coefficients(self, i) -> np.ndarray:
        return self.fits[i].xi_f

    def coupling_linear_coefficient(self, i, j) -> float:
        """Coefficient of the (l_i - l_j) term on edge (i, j), seen from i."""
        fit = self.fits[i]
        if self.topology.adjacency[i, j] == 0:
            return 0.0
        if self.library.coupling_mode == "aggregated":
            return float(fit.xi_g[0]) if fit.xi_g.size else 0.0
        k = fit.neighbors.index(j)
        return float(fit.xi_g[k, 0])

    def rate(self, loads: np.ndarray) -> np.ndarray:
        """Vector field at a load vector: self polynomial plus coupling terms."""
        loads = np.asarray(loads, dtype=float)
        out = np.empty(self.n)
        for i in range(self.n):
            fit = self.fits[i]
            val = np.polyval(fit.xi_f[::-1], loads[i])
            if self.library.coupling_mode == "aggregated":
                for p in range(1, self.library.degree_coupling + 1):
                    gap_sum = sum((loads[i] - loads[j]) ** p for j in fit.neighbors)
                    val += fit.xi_g[p - 1] * gap_sum
            else:
                for k, j in enumerate(fit.neighbors):
                    gap = loads[i] - loads[j]
                    for p in range(1, self.library.degree_coupling + 1):
                        val += fit.xi_g[k, p - 1] * gap**p
            out[i] = val
        return out

    def to_dict(self):
        return {
            "library": {
                "degree_self": self.library.degree_self,
                "degree_coupling": self.library.degree_coupling,
                "coupling_mode": self.library.coupling_mode,
            },
            "gamma": self.gamma,
            "topology": self.topology.to_dict(),
            "rus": [
                {
                    "id": f.ru_id,
                    "xi_f": f.xi_f.tolist(),
                    "xi_g": f.xi_g.tolist(),
                    "neighbors": f.neighbors,
                    "r2": f.r2,
                    "residual_norm": f.residual_norm,
                }
                for f in self.fits
            ],
        }

    @classmethod
    def from_dict(cls, d):
        lib = LibrarySpec(**d["library"])
        topo = Topology.from_dict(d["topology"])
        fits = [
            RuFit(
                ru_id=r["id"],
                xi_f=np.array(r["xi_f"], dtype=float),
                xi_g=np.array(r["xi_g"], dtype=float),
                neighbors=list(r["neighbors"]),
                r2=r["r2"],
                residual_norm=r["residual_norm"],
            )
            for r in d["rus"]
        ]
        return cls(library=lib, gamma=d["gamma"], topology=topo, fits=fits)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def estimate_derivatives(series: TelemetrySeries, scheme: str = "forward") -> DerivativeMatrix:
    """Finite-difference load rates: forward differences aligned to the left
    sample, or central differences aligned to interior samples."""
    t = series.times
    L = series.loads
    if scheme == "forward":
        if len(t) < 2:
            raise IdentificationError("forward differences need at least 2 samples")
        dt = np.diff(t)[:, None]
        return DerivativeMatrix(ldot=(L[1:] - L[:-1]) / dt, times=t[:-1], row_offset=0)
    if scheme == "central":
        if len(t) < 3:
            raise IdentificationError("central differences need at least 3 samples")
        span = (t[2:] - t[:-2])[:, None]
        return DerivativeMatrix(ldot=(L[2:] - L[:-2]) / span, times=t[1:-1], row_offset=1)
    raise ValueError(f"unknown differencing scheme {scheme!r}")


def library_labels(spec: LibrarySpec, neighbors: List[int]) -> List[str]:
    labels = [f"l^{p}" for p in range(spec.degree_self + 1)]
    if spec.coupling_mode == "aggregated":
        labels += [f"sum_gap^{p}" for p in range(1, spec.degree_coupling + 1)]
    else:
        for j in neighbors:
            labels += [f"gap[{j}]^{p}" for p in range(1, spec.degree_coupling + 1)]
    return labels


def build_library(series: TelemetrySeries, topology: Topology, spec: LibrarySpec) -> List[np.ndarray]:
    """Per-RU regressor matrices over all samples (caller aligns rows to the
    derivative estimate)."""
    L = series.loads
    if L.shape[1] != topology.n:
        raise ValueError("series RU count does not match topology")
    m = L.shape[0]
    thetas = []
    for i in range(topology.n):
        cols = [L[:, i] ** p for p in range(spec.degree_self + 1)]
        neighbors = topology.neighbors(i)
        if spec.coupling_mode == "aggregated":
            for p in range(1, spec.degree_coupling + 1):
                agg = np.zeros(m)
                for j in neighbors:
                    agg += (L[:, i] - L[:, j]) ** p
                cols.append(agg)
        else:
            for j in neighbors:
                gap = L[:, i] - L[:, j]
                for p in range(1, spec.degree_coupling + 1):
                    cols.append(gap**p)
        thetas.append(np.column_stack(cols))
    return thetas


def _soft_threshold(z, gamma):
    return np.sign(z) * max(abs(z) - gamma, 0.0)


def sparse_regress(theta: np.ndarray, ldot: np.ndarray, gamma: float) -> np.ndarray:
    """Minimize 0.5*||ldot - theta @ xi||^2 + gamma*||xi||_1 by cyclic
    coordinate descent on norm-scaled columns, then debias with a
    sequentially thresholded least-squares refit on the selected support
    (scaled coefficients below gamma are zeroed; the support only shrinks)."""
    theta = np.asarray(theta, dtype=float)
    ldot = np.asarray(ldot, dtype=float)
    if theta.ndim != 2 or theta.shape[0] != ldot.shape[0]:
        raise ValueError("theta rows must match ldot length")
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(ldot))):
        raise ValueError("non-finite values in regression data")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    p = theta.shape[1]
    norms = np.linalg.norm(theta, axis=0)
    active = norms > 1e-12
    xi = np.zeros(p)
    if not np.any(active):
        return xi
    Ts = theta[:, active] / norms[active]
    if gamma == 0:
        coef = np.linalg.lstsq(Ts, ldot, rcond=None)[0]
    else:
        G = Ts.T @ Ts
        b = Ts.T @ ldot
        k = Ts.shape[1]
        coef = np.zeros(k)
        for _ in range(CD_MAX_SWEEPS):
            max_change = 0.0
            for idx in range(k):
                resid_corr = b[idx] - G[idx] @ coef + coef[idx]
                new = _soft_threshold(resid_corr, gamma)
                change = abs(new - coef[idx])
                if change > max_change:
                    max_change = change
                coef[idx] = new
            if max_change < CD_TOL:
                break
        # Sequentially thresholded debias: refit by least squares on the
        # lasso support, drop scaled coefficients below gamma, repeat until
        # the support is stable.  Shrinkage makes the lasso keep strongly
        # collinear columns at tiny magnitudes regardless of gamma; the
        # threshold removes them and never grows the support.
        support = coef != 0
        while True:
            if not np.any(support):
                coef = np.zeros(k)
                break
            refit = np.linalg.lstsq(Ts[:, support], ldot, rcond=None)[0]
            coef = np.zeros(k)
            coef[support] = refit
            kept = support & (np.abs(coef) >= gamma)
            if kept.sum() == support.sum():
                break
            support = kept
    xi[active] = coef / norms[active]
    return xi


def select_gamma(thetas, ldots, grid=None) -> float:
    """Pick one shared sparsity weight by 5-fold time-blocked cross-validation
    over a logarithmic grid, summed across RUs."""
    if grid is None:
        grid = np.logspace(-4, 0, 9)
    totals = np.zeros(len(grid))
    for theta, ldot in zip(thetas, ldots):
        m = len(ldot)
        bounds = np.linspace(0, m, 6).astype(int)
        for f in range(5):
            lo, hi = bounds[f], bounds[f + 1]
            if hi - lo == 0:
                continue
            mask = np.ones(m, dtype=bool)
            mask[lo:hi] = False
            if mask.sum() < theta.shape[1]:
                continue
            for g_idx, g in enumerate(grid):
                xi = sparse_regress(theta[mask], ldot[mask], g)
                totals[g_idx] += np.sum((ldot[~mask] - theta[~mask] @ xi) ** 2)
    return float(grid[int(np.argmin(totals))])


def _split_coefficients(xi, spec: LibrarySpec, neighbors):
    n_self = spec.degree_self + 1
    xi_f = xi[:n_self]
    rest = xi[n_self:]
    if spec.coupling_mode == "aggregated":
        xi_g = rest.copy()
    else:
        xi_g = rest.reshape(len(neighbors), spec.degree_coupling).copy()
    return xi_f, xi_g


def _assemble_regression(series, topology, spec, scheme, mask_saturated, prb_max):
    """Per-RU (theta, ldot) pairs from one series, rows aligned to the
    derivative estimate and optionally stripped of saturated samples."""
    deriv = estimate_derivatives(series, scheme=scheme)
    thetas_full = build_library(series, topology, spec)
    k = deriv.ldot.shape[0]
    sl = slice(deriv.row_offset, deriv.row_offset + k)
    thetas, ldots = [], []
    for i in range(topology.n):
        theta = thetas_full[i][sl]
        ldot = deriv.ldot[:, i]
        keep = np.ones(k, dtype=bool)
        if mask_saturated and series.provisioned is not None:
            ceiling = (
                prb_max[i]
                if prb_max is not None
                else series.provisioned[:, i].max()
            )
            saturated = (series.provisioned[sl, i] >= ceiling) & (series.loads[sl, i] > 1.0)
            keep &= ~saturated
        thetas.append(theta[keep])
        ldots.append(ldot[keep])
    return thetas, ldots


def identify_network(
    series,
    topology: Topology,
    spec: LibrarySpec = None,
    gamma: Optional[float] = None,
    scheme: str = "central",
    mask_saturated: bool = False,
    prb_max: Optional[np.ndarray] = None,
) -> IdentifiedModel:
    """Per-RU sparse regression of estimated load rates onto the candidate
    library. `series` may be one TelemetrySeries or a list of them (segments
    are differentiated independently and their regressions stacked).
    gamma=None triggers cross-validated selection. mask_saturated drops
    samples where an RU is pinned at its PRB ceiling with load > 1."""
    spec = spec or LibrarySpec()
    segments = series if isinstance(series, (list, tuple)) else [series]
    thetas = [[] for _ in range(topology.n)]
    ldots = [[] for _ in range(topology.n)]
    for seg in segments:
        seg_thetas, seg_ldots = _assemble_regression(
            seg, topology, spec, scheme, mask_saturated, prb_max
        )
        for i in range(topology.n):
            thetas[i].append(seg_thetas[i])
            ldots[i].append(seg_ldots[i])
    thetas = [np.vstack(t) for t in thetas]
    ldots = [np.concatenate(y) for y in ldots]
    if gamma is None:
        gamma = select_gamma(thetas, ldots)
    fits = []
    for i in range(topology.n):
        try:
            xi = sparse_regress(thetas[i], ldots[i], gamma)
        except ValueError as exc:
            raise IdentificationError(f"RU {i}: {exc}") from exc
        xi_f, xi_g = _split_coefficients(xi, spec, topology.neighbors(i))
        resid = ldots[i] - thetas[i] @ xi
        ss_res = float(resid @ resid)
        centered = ldots[i] - ldots[i].mean() if len(ldots[i]) else ldots[i]
        ss_tot = float(centered @ centered)
        r2 = None if ss_tot == 0 else 1.0 - ss_res / ss_tot
        fits.append(
            RuFit(
                ru_id=i,
                xi_f=xi_f,
                xi_g=xi_g,
                neighbors=topology.neighbors(i),
                r2=r2,
                residual_norm=float(np.sqrt(ss_res)),
            )
        )
    return IdentifiedModel(library=spec, gamma=float(gamma), topology=topology, fits=fits)


def simulate_model(model: IdentifiedModel, initial_loads, horizon: float, step: float) -> tuple:
    """Fixed-step RK4 integration of the identified vector field. Returns
    (times, trajectory) including the initial state."""
    if step <= 0:
        raise ValueError("step must be positive")
    if horizon < step:
        raise ValueError("horizon must be at least one step")
    x = np.asarray(initial_loads, dtype=float).copy()
    n_steps = int(round(horizon / step))
    times = np.arange(n_steps + 1) * step
    traj = np.empty((n_steps + 1, len(x)))
    traj[0] = x
    for k in range(n_steps):
        k1 = model.rate(x)
        k2 = model.rate(x + 0.5 * step * k1)
        k3 = model.rate(x + 0.5 * step * k2)
        k4 = model.rate(x + step * k3)
        x = x + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IdentificationError(f"trajectory diverged at t={times[k + 1]:.6g}")
        traj[k + 1] = x
    return times, traj


def fit_diagnostics(model: IdentifiedModel, series: TelemetrySeries, scheme: str = "central"):
    """Recompute per-RU R^2 and residual norms of the model on a series.
    Constant responses yield R^2 = None."""
    deriv = estimate_derivatives(series, scheme=scheme)
    thetas = build_library(series, model.topology, model.library)
    sl = slice(deriv.row_offset, deriv.row_offset + deriv.ldot.shape[0])
    out = []
    for i in range(model.topology.n):
        fit = model.fits[i]
        xi = np.concatenate([fit.xi_f, np.ravel(fit.xi_g)])
        pred = thetas[i][sl] @ xi
        ldot = deriv.ldot[:, i]
        resid = ldot - pred
        centered = ldot - ldot.mean()
        ss_tot = float(centered @ centered)
        r2 = None if ss_tot == 0 else 1.0 - float(resid @ resid) / ss_tot
        out.append({"ru_id": i, "r2": r2, "residual_norm": float(np.linalg.norm(resid))})
    return out
