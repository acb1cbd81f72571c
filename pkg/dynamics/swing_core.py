# dynamics/swing_core.py
"""
Linearized swing dynamics of the Ibus voltages and their closed-form solution.

Within one validity region the machine voltages w = (x_I; y_I) obey

    d2w/dt2 + diag(D/M) dw/dt + L w + l = 0

which is solved through the eigenstructure of T = [[0, I], [-L, -diag(D/M)]].
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg

from network.case_model import AugmentedNetwork, GeneratorDynamic
from network.errors import DefectiveSystemError, FitDegeneracyError, SingularSwingError, SwingError
from dynamics.he_linearizer import PadeLinearization
from dynamics.trajectory import angles_from_state, coi_reference

logger = logging.getLogger(__name__)

DEFECTIVE_COND = 1e10
RANK_RTOL = 1e-10
OFFSET_COND = 1e12


@dataclass(frozen=True, eq=False)
class SwingSystem:
    L: np.ndarray
    l: np.ndarray
    damping: np.ndarray  # D/M per row of w
    offset: np.ndarray  # equilibrium -L^-1 l
    b0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    speeds: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rank: int = 0

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def T(self) -> np.ndarray:
        n = self.n
        return np.block([[np.zeros((n, n)), np.eye(n)], [-self.L, -np.diag(self.damping)]])

    @property
    def J(self) -> np.ndarray:
        """Rotation generator at the region-start speeds: dw/dt = J w."""
        s = np.diag(self.speeds)
        z = np.zeros_like(s)
        return np.block([[z, -s], [s, z]])

    def acceleration(self, w: np.ndarray, dw: np.ndarray) -> np.ndarray:
        return -(np.asarray(dw) * self.damping + np.asarray(w) @ self.L.T + self.l)

    @classmethod
    def from_matrices(cls, L: np.ndarray, l: np.ndarray, damping: np.ndarray) -> "SwingSystem":
        L = np.atleast_2d(np.asarray(L, dtype=float))
        l = np.asarray(l, dtype=float)
        damping = np.broadcast_to(np.asarray(damping, dtype=float), (L.shape[0],)).copy()
        offset, rank = equilibrium_offset(L, l)
        return cls(L=L, l=l, damping=damping, offset=offset, rank=rank)


def equilibrium_offset(L: np.ndarray, l: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    -L^-1 l: direct solve when L is well conditioned, least squares when L is
    rank deficient but l lies in its range, an error otherwise.
    """
    sv = scipy.linalg.svd(L, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > RANK_RTOL * max(smax, 1e-300)))
    if rank == L.shape[0] and sv[-1] > smax / OFFSET_COND:
        return -scipy.linalg.solve(L, l), rank
    x, *_ = scipy.linalg.lstsq(L, -l)
    if np.linalg.norm(L @ x + l) > 1e-8 * max(np.linalg.norm(l), 1.0):
        raise SingularSwingError("L is singular and l is outside its range", rank=rank)
    logger.warning("L is near singular (rank %d of %d); using least-squares equilibrium", rank, L.shape[0])
    return x, rank


def build_swing_system(
    lin: PadeLinearization,
    gens: Sequence[GeneratorDynamic],
    net: AugmentedNetwork,
    w0: np.ndarray,
    dw0: Optional[np.ndarray] = None,
) -> SwingSystem:
    """
    L rows per machine j (Kbus k, link admittance Y = Ybus(j, k)), scaled by 1/M_j:

      x row: b0 E^2 e_j + (p_m - g E^2) e_{NI+j} - H_xi[j] - E^2 (Im Y H_x[k] + Re Y H_y[k])
      y row: b0 E^2 e_{NI+j} - (p_m - g E^2) e_j - H_zeta[j] + E^2 (Re Y H_x[k] - Im Y H_y[k])

    with b0 = b + (M/E^2) (d delta/dt)^2 frozen at the region start.
    """
    ni = len(gens)
    if ni != lin.NI:
        raise SwingError(f"{ni} machines but the linearization has {lin.NI} Ibus")
    w0 = np.asarray(w0, dtype=float)
    dw0 = np.zeros_like(w0) if dw0 is None else np.asarray(dw0, dtype=float)
    if any(g.D < 0 for g in gens):
        raise SwingError("damping must be nonnegative")
    _, speeds = angles_from_state(w0, dw0)

    H_km, h_km = lin.block("km")
    H_xi, h_xi = lin.block("xi")
    H_zeta, h_zeta = lin.block("zeta")
    nk = lin.NKM
    km_pos = {bus: p for p, bus in enumerate(lin.km_ids)}

    L = np.zeros((2 * ni, 2 * ni))
    l = np.zeros(2 * ni)
    b0 = np.zeros(ni)
    for j, (g, ibus) in enumerate(zip(gens, net.ibus_ids)):
        link = net.gen_link[ibus]
        E2 = g.E**2
        b0[j] = link.b_jj + (g.M / E2) * speeds[j] ** 2
        pm = g.p_mech - link.g_jj * E2
        p = km_pos[link.kbus]
        Hx, hx = H_km[p], h_km[p]
        Hy, hy = H_km[nk + p], h_km[nk + p]
        Y = link.y_jk

        row_x = -H_xi[j] - E2 * (Y.imag * Hx + Y.real * Hy)
        row_x[j] += b0[j] * E2
        row_x[ni + j] += pm
        row_y = -H_zeta[j] + E2 * (Y.real * Hx - Y.imag * Hy)
        row_y[ni + j] += b0[j] * E2
        row_y[j] -= pm
        L[j] = row_x / g.M
        L[ni + j] = row_y / g.M
        l[j] = -(h_xi[j] + E2 * (Y.imag * hx + Y.real * hy)) / g.M
        l[ni + j] = (-h_zeta[j] + E2 * (Y.real * hx - Y.imag * hy)) / g.M

    damping = np.tile([g.D / g.M for g in gens], 2)
    offset, rank = equilibrium_offset(L, l)
    logger.debug("Swing system: rank(L) = %d, b0 = %s", rank, np.array2string(b0, precision=4))
    return SwingSystem(L=L, l=l, damping=damping, offset=offset, b0=b0, speeds=speeds, rank=rank)


# ------------------ eigen-solution ------------------

@dataclass(frozen=True, eq=False)
class ModeSet:
    """One entry per real eigenvalue and one per conjugate pair (positive imaginary part)."""

    eigenvalues: np.ndarray  # complex
    vectors: np.ndarray  # complex, one column per entry
    is_pair: np.ndarray  # bool
    residual: float

    @property
    def basis_size(self) -> int:
        return int(np.sum(np.where(self.is_pair, 2, 1)))

    def basis(self, tau: np.ndarray) -> np.ndarray:
        """
        Real basis functions at elapsed times tau: (len(tau), 4NI, basis_size).
        Real lambda -> v e^{lambda t}; pair -> Re and Im of v e^{lambda t}.
        """
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        z = self.vectors[None, :, :] * np.exp(np.outer(tau, self.eigenvalues))[:, None, :]
        cols = []
        for k, pair in enumerate(self.is_pair):
            cols.append(z[:, :, k].real)
            if pair:
                cols.append(z[:, :, k].imag)
        return np.stack(cols, axis=2)


def eigensolve(sys: SwingSystem) -> ModeSet:
    """Eigenstructure of T; real eigenvalues ascending, then pairs by |Im|."""
    T = sys.T
    lam, V = scipy.linalg.eig(T)
    scale = max(np.linalg.norm(T, 2), 1.0)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > DEFECTIVE_COND:
        gaps = np.abs(lam[:, None] - lam[None, :]) + np.eye(len(lam)) * np.inf
        i, _ = np.unravel_index(np.argmin(gaps), gaps.shape)
        raise DefectiveSystemError("companion matrix is defective", eigenvalue=complex(lam[i]))

    tol = 1e-9 * scale
    real_idx = [i for i in range(len(lam)) if abs(lam[i].imag) <= tol]
    pair_idx = [i for i in range(len(lam)) if lam[i].imag > tol]
    real_idx.sort(key=lambda i: lam[i].real)
    pair_idx.sort(key=lambda i: (abs(lam[i].imag), lam[i].real))

    vals, vecs, pairs = [], [], []
    for i in real_idx:
        v = V[:, i]
        v = v * np.exp(-1j * np.angle(v[np.argmax(np.abs(v))]))
        vals.append(lam[i].real + 0j)
        vecs.append(v.real + 0j)
        pairs.append(False)
    for i in pair_idx:
        vals.append(lam[i])
        vecs.append(V[:, i])
        pairs.append(True)
    vals = np.array(vals)
    vecs = np.column_stack(vecs) if vecs else np.zeros((T.shape[0], 0), dtype=complex)
    resid = float(np.max(np.linalg.norm(T @ vecs - vecs * vals[None, :], axis=0), initial=0.0))
    if resid > 1e-8 * scale:
        logger.warning("Eigenvector residual %.2e exceeds 1e-8 |T|", resid)
    return ModeSet(eigenvalues=vals, vectors=vecs, is_pair=np.array(pairs, dtype=bool), residual=resid)


def fit_beta(
    modes: ModeSet,
    w0: np.ndarray,
    dw0: np.ndarray,
    offset: np.ndarray,
) -> Tuple[np.ndarray, float]:
    """Least-squares coefficients reproducing (w0 - offset; dw0) at tau = 0."""
    Phi = modes.basis(np.zeros(1))[0]
    rhs = np.concatenate([np.asarray(w0) - offset, np.asarray(dw0)])
    sv = scipy.linalg.svd(Phi, compute_uv=False)
    if sv.size == 0 or sv[-1] <= RANK_RTOL * sv[0]:
        raise FitDegeneracyError("mode matrix is rank deficient")
    beta, *_ = scipy.linalg.lstsq(Phi, rhs)
    residual = float(np.linalg.norm(Phi @ beta - rhs))
    if residual > 1e-8 * max(np.linalg.norm(rhs), 1.0):
        logger.warning("beta fit residual %.2e", residual)
    return beta, residual


@dataclass(frozen=True, eq=False)
class AnalyticSolution:
    system: SwingSystem
    modes: ModeSet
    beta: np.ndarray
    t0: float
    fit_residual: float

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.modes.eigenvalues

    @property
    def stable(self) -> bool:
        return bool(np.all(self.modes.eigenvalues.real < 0))

    def evaluate_many(self, ts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        z = self.modes.basis(ts - self.t0) @ self.beta
        n = self.system.n
        return z[:, :n] + self.system.offset, z[:, n:]

    def evaluate(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        W, DW = self.evaluate_many(np.array([t]))
        return W[0], DW[0]

    def acceleration(self, t: float) -> np.ndarray:
        w, dw = self.evaluate(t)
        return self.system.acceleration(w, dw)

    def mode_frame(self) -> pd.DataFrame:
        lam = self.modes.eigenvalues
        return pd.DataFrame(
            {
                "real": lam.real,
                "imag": lam.imag,
                "pair": self.modes.is_pair,
                "frequency_hz": np.abs(lam.imag) / (2.0 * np.pi),
                "damping_ratio": np.where(np.abs(lam) > 0, -lam.real / np.maximum(np.abs(lam), 1e-300), 1.0),
            }
        )


def solve_region(sys: SwingSystem, w0: np.ndarray, dw0: np.ndarray, t0: float = 0.0) -> AnalyticSolution:
    modes = eigensolve(sys)
    beta, residual = fit_beta(modes, w0, dw0, sys.offset)
    return AnalyticSolution(system=sys, modes=modes, beta=beta, t0=float(t0), fit_residual=residual)


# ------------------ angle referencing ------------------

def to_coi_angles(delta: np.ndarray, M: Sequence[float]) -> np.ndarray:
    """Angles relative to the inertia-weighted centre; accepts one state or rows of states."""
    delta = np.asarray(delta, dtype=float)
    M = np.asarray(M, dtype=float)
    if delta.shape[-1] != M.shape[0]:
        raise ValueError(f"{delta.shape[-1]} angles but {M.shape[0]} inertias")
    if M.sum() <= 0:
        raise ValueError("total inertia must be positive")
    ref = coi_reference(np.atleast_2d(delta), M)
    out = np.atleast_2d(delta) - ref[:, None]
    return out[0] if delta.ndim == 1 else out


def rotor_angle(w: np.ndarray) -> np.ndarray:
    """Imaginary part of log(x + jy)."""
    w = np.asarray(w)
    ni = w.shape[-1] // 2
    return np.imag(np.log(w[..., :ni] + 1j * w[..., ni:]))
