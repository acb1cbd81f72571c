# dynamics/he_linearizer.py
"""
Holomorphic-embedding linearization of the quasi power flow.

Every series coefficient is an affine map of the real Ibus vector
w = (x_I; y_I), stored as one augmented array G = [A | a] so that the
coefficient value at w is A @ w + a. The embedding is

    Ytr_KK vK(s) + Ytr_KI vI(s) = s conj(S) W(s) - s Ysh_K vK(s) - s i0
    vI(s) = E_ref + s (vI - E_ref),   W(s) conj(vK(conj s)) = 1

so s = 1 recovers S = v conj(Ybus v + i0) at every KM bus. Products of two
affine coefficients are linearized about the expansion point w0.

Each entry of the output blocks (KM voltages, p, q, xi = q x, zeta = q y) is
summed at s = 1 by its own Pade approximant. A block-wide fit with one shared
denominator is kept for the W_b diagnostics and as the fallback value. The
constant term is then anchored on the QPF solution at the expansion point.
"""
import logging
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from network.case_model import AugmentedNetwork, GeneratorDynamic
from network.errors import (
    OrderTruncationError,
    PadeDegeneracyWarning,
    PadePoleError,
    QpfError,
    ReductionError,
    SensitivityError,
    StructuralSingularityError,
    TruncatedCoefficientError,
    UndefinedBoundError,
)
from network.qpf import QPF_TOL, assemble_qpf, flat_start, solve_qpf
from network.zip_loads import ExtendedLoadSet, modified_ybus

logger = logging.getLogger(__name__)

PADE_L = 4
PADE_M = 4
BLOCKS = ("km", "p", "q", "xi", "zeta")
OVERFLOW_LIMIT = 1e150
DEGENERACY_RTOL = 1e-10
SINGULAR_COND = 1e14
NEGLIGIBLE = 1e-13
CONVERGED = 1e-10


# ------------------ real-form helpers ------------------

def realform(C: np.ndarray) -> np.ndarray:
    """Real action of a complex matrix on (Re; Im) stacked vectors."""
    C = np.atleast_2d(C)
    return np.block([[C.real, -C.imag], [C.imag, C.real]])


def conjform(c: np.ndarray) -> np.ndarray:
    """Real action of v -> diag(c) conj(v) on (Re; Im) stacked vectors."""
    c = np.asarray(c)
    re, im = np.diag(c.real), np.diag(c.imag)
    return np.block([[re, im], [im, -re]])


def to_real(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    return np.concatenate([v.real, v.imag])


def to_complex(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w)
    n = w.shape[0] // 2
    return w[:n] + 1j * w[n:]


def _value(G: np.ndarray, w0: np.ndarray) -> np.ndarray:
    return G[:, :-1] @ w0 + G[:, -1]


def _mul(G1: np.ndarray, G2: np.ndarray, w0: np.ndarray) -> np.ndarray:
    """Row-wise product of two affine maps, linearized at w0: ab ~ a0 b + b0 a - a0 b0."""
    v1, v2 = _value(G1, w0), _value(G2, w0)
    out = v1[:, None] * G2 + v2[:, None] * G1
    out[:, -1] -= v1 * v2
    return out


def _const(values: np.ndarray, cols: int, dtype=complex) -> np.ndarray:
    values = np.asarray(values)
    G = np.zeros((values.shape[0], cols), dtype=dtype)
    G[:, -1] = values
    return G


def _ill_conditioned(A: np.ndarray) -> bool:
    if A.size == 0:
        return False
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(A)
    return not np.isfinite(cond) or cond > SINGULAR_COND


# ------------------ embedding recursion ------------------

@dataclass(frozen=True, eq=False)
class HeSeries:
    order: int
    e_ref: float
    w0: np.ndarray
    v_km: List[np.ndarray]  # complex (NKM, 2NI+1) per order
    w_conj: List[np.ndarray]  # reciprocal conjugate voltages, complex (NKM, 2NI+1)
    s_conj: List[np.ndarray]  # conj of Ibus injections, complex (NI, 2NI+1)
    p: List[np.ndarray]
    q: List[np.ndarray]
    xi: List[np.ndarray]
    zeta: List[np.ndarray]

    def blocks(self) -> Dict[str, List[np.ndarray]]:
        """Real augmented maps per output block."""
        return {
            "km": [np.vstack([G.real, G.imag]) for G in self.v_km],
            "p": self.p,
            "q": self.q,
            "xi": self.xi,
            "zeta": self.zeta,
        }

    def partial_sum(self, name: str, w: np.ndarray, upto: Optional[int] = None) -> np.ndarray:
        seq = self.blocks()[name]
        upto = self.order if upto is None else upto
        return sum(_value(G, np.asarray(w)) for G in seq[: upto + 1])


def he_recursion(
    net: AugmentedNetwork,
    loads: ExtendedLoadSet,
    v_I: np.ndarray,
    n_max: int,
    e_ref: Optional[float] = None,
) -> HeSeries:
    """Series coefficients up to order n_max as affine maps of w = (x_I; y_I), linearized at v_I."""
    if net.NI < 1:
        raise StructuralSingularityError("network has no Ibus")
    if n_max < 2:
        raise ValueError(f"n_max must be at least 2, got {n_max}")
    v_I = np.asarray(v_I, dtype=complex)
    ni, nk = net.NI, net.NKM
    if v_I.shape != (ni,):
        raise ValueError(f"v_I has shape {v_I.shape}, expected ({ni},)")
    e_ref = float(np.mean(np.abs(v_I))) if e_ref is None else float(e_ref)
    w0 = to_real(v_I)
    cols = 2 * ni + 1

    ybus = modified_ybus(net, loads)
    rowsum = ybus.sum(axis=1)
    ytr = ybus - np.diag(rowsum)
    I, K = net.ibus_idx, net.km_idx
    ytr_kk = ytr[np.ix_(K, K)]
    ytr_ki = ytr[np.ix_(K, I)]
    ytr_ii = ytr[np.ix_(I, I)]
    ytr_ik = ytr[np.ix_(I, K)]
    ysh_k, ysh_i = rowsum[K], rowsum[I]
    s_load = np.conj(loads.injection)
    if _ill_conditioned(ytr_kk):
        raise StructuralSingularityError("Ytr restricted to KM buses is singular (islanded KM subnetwork?)")
    lu = scipy.linalg.lu_factor(ytr_kk)

    vI1 = np.zeros((ni, cols), dtype=complex)
    vI1[:, :ni] = np.eye(ni)
    vI1[:, ni : 2 * ni] = 1j * np.eye(ni)
    vI1[:, -1] = -e_ref
    zero_i = np.zeros((ni, cols), dtype=complex)
    vI = [_const(np.full(ni, e_ref), cols), vI1] + [zero_i] * n_max

    vK = [_const(np.full(nk, e_ref), cols)]
    W = [_const(np.full(nk, 1.0 / e_ref), cols)]
    for n in range(n_max):
        rhs = s_load[:, None] * W[n] - ysh_k[:, None] * vK[n] - ytr_ki @ vI[n + 1]
        if n == 0:
            rhs[:, -1] -= loads.i0
        nxt = scipy.linalg.lu_solve(lu, rhs)
        if not np.all(np.isfinite(nxt)) or np.max(np.abs(nxt)) > OVERFLOW_LIMIT:
            raise OrderTruncationError("series coefficients overflowed", last_order=n)
        vK.append(nxt)
        acc = np.zeros((nk, cols), dtype=complex)
        for k in range(n + 1):
            acc += _mul(W[k], np.conj(vK[n + 1 - k]), w0)
        W.append(-acc / e_ref)

    i_I = []
    for n in range(n_max + 1):
        cur = ytr_ii @ vI[n] + ytr_ik @ vK[n]
        if n >= 1:
            cur = cur + ysh_i[:, None] * vI[n - 1]
        i_I.append(cur)
    conj_vI1 = np.conj(vI1)
    s_conj = [e_ref * i_I[0]]
    for n in range(1, n_max + 1):
        s_conj.append(e_ref * i_I[n] + _mul(conj_vI1, i_I[n - 1], w0))

    p = [G.real.copy() for G in s_conj]
    q = [-G.imag for G in s_conj]
    x_shift = np.zeros((ni, cols))
    x_shift[:, :ni] = np.eye(ni)
    x_shift[:, -1] = -e_ref
    y_map = np.zeros((ni, cols))
    y_map[:, ni : 2 * ni] = np.eye(ni)
    xi = [e_ref * q[0]]
    zeta = [np.zeros((ni, cols))]
    for n in range(1, n_max + 1):
        xi.append(e_ref * q[n] + _mul(x_shift, q[n - 1], w0))
        zeta.append(_mul(y_map, q[n - 1], w0))

    logger.debug(
        "HE series to order %d: |vK[n]| tail %.3e", n_max, float(np.max(np.abs(_value(vK[-1], w0))))
    )
    return HeSeries(
        order=n_max, e_ref=e_ref, w0=w0, v_km=vK, w_conj=W, s_conj=s_conj, p=p, q=q, xi=xi, zeta=zeta
    )


# ------------------ Pade approximation ------------------

@dataclass(frozen=True, eq=False)
class PadeFit:
    numerator: List[np.ndarray]
    denominator: np.ndarray
    sigma_min: float
    residual: float
    wb_norm: float
    degenerate: bool = False

    def value(self, s: float = 1.0) -> np.ndarray:
        num = sum(c * s**k for k, c in enumerate(self.numerator))
        den = sum(b * s**k for k, b in enumerate(self.denominator))
        return num / den


def pade_fit(series: Sequence[np.ndarray], l: int, m: int, label: str = "") -> PadeFit:
    """
    [l/m] approximant of a series of equally shaped coefficient arrays.

    The denominator b is the right-singular vector of W_b for its smallest
    singular value, W_b having one row per entry per order k = l+1 .. l+m:
    sum_i b[i] G[k-i] = 0. Numerators are the convolutions of b with G up to l.
    """
    if l < 0 or m < 0:
        raise ValueError("Pade orders must be nonnegative")
    if len(series) < l + m + 1:
        raise ValueError(f"need {l + m + 1} coefficients, got {len(series)}")
    G = [np.asarray(g, dtype=float) for g in series[: l + m + 1]]
    shape = G[0].shape
    flat = [g.ravel() for g in G]
    scale = max(float(np.max(np.abs(f))) if f.size else 0.0 for f in flat)

    tail = max((float(np.max(np.abs(f))) for f in flat[l + 1 :] if f.size), default=0.0)
    if m == 0 or tail <= 1e-14 * max(scale, 1e-300):
        b = np.zeros(m + 1)
        b[0] = 1.0
        numer = [flat[k].reshape(shape) for k in range(l + 1)]
        return PadeFit(numer, b, sigma_min=0.0, residual=0.0, wb_norm=tail)

    zeros = np.zeros_like(flat[0])
    Wb = np.vstack(
        [
            np.column_stack([flat[k - i] if k - i >= 0 else zeros for i in range(m + 1)])
            for k in range(l + 1, l + m + 1)
        ]
    )
    wide = Wb.shape[0] < Wb.shape[1]
    _, s, Vh = scipy.linalg.svd(Wb, full_matrices=wide)
    sv = np.zeros(m + 1)
    sv[: len(s)] = s
    smax = sv[0]

    degenerate = sv[-2] - sv[-1] <= DEGENERACY_RTOL * smax
    if degenerate:
        near = np.nonzero(sv - sv[-1] <= DEGENERACY_RTOL * smax)[0]
        basis = Vh[near]
        b = basis.T @ (basis @ np.ones(m + 1))
        if np.linalg.norm(b) <= 1e-12:
            b = Vh[-1].copy()
        b = b / np.linalg.norm(b)
        warnings.warn(
            f"{label or 'series'}: W_b null space is not one-dimensional "
            f"(sigma {sv[-2]:.3e}, {sv[-1]:.3e})",
            PadeDegeneracyWarning,
            stacklevel=2,
        )
    else:
        b = Vh[-1].copy()
    if b.sum() < 0:
        b = -b
    if abs(b.sum()) <= 1e-12 * np.sum(np.abs(b)):
        raise PadePoleError("denominator vanishes at s = 1", block=label)

    numer = []
    for k in range(l + 1):
        acc = np.zeros_like(flat[0])
        for i in range(min(k, m) + 1):
            acc = acc + b[i] * flat[k - i]
        numer.append(acc.reshape(shape))
    residual = float(np.linalg.norm(Wb @ b))
    logger.debug("Pade %s: sigma_min %.3e, |W_b b| %.3e, sum b %.4f", label, sv[-1], residual, b.sum())
    return PadeFit(numer, b, sigma_min=float(sv[-1]), residual=residual, wb_norm=float(smax), degenerate=bool(degenerate))


# ------------------ master linear map ------------------

@dataclass(frozen=True, eq=False)
class PadeLinearization:
    H: np.ndarray
    h: np.ndarray
    l: int
    m: int
    slices: Dict[str, slice]
    fits: Dict[str, PadeFit]
    w0: np.ndarray
    e_ref: float
    km_ids: Tuple[int, ...] = ()
    ibus_ids: Tuple[int, ...] = ()

    @property
    def NI(self) -> int:
        return self.H.shape[1] // 2

    @property
    def NKM(self) -> int:
        return (self.slices["km"].stop - self.slices["km"].start) // 2

    def block(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        sl = self.slices[name]
        return self.H[sl], self.h[sl]

    def predict(self, w: np.ndarray) -> np.ndarray:
        return self.H @ np.asarray(w) + self.h

    def km_voltages(self, w: np.ndarray) -> np.ndarray:
        """KM voltages for one state (1-D w) or many (rows of w)."""
        H, h = self.block("km")
        vals = np.asarray(w) @ H.T + h
        return vals[..., : self.NKM] + 1j * vals[..., self.NKM :]

    def generation(self, w: np.ndarray) -> np.ndarray:
        H, h = self.block("p")
        return np.asarray(w) @ H.T + h

    def diagnostics(self) -> Dict[str, Dict[str, float]]:
        return {
            name: {"sigma_min": f.sigma_min, "denominator_sum": float(f.denominator.sum()), "residual": f.residual}
            for name, f in self.fits.items()
        }


def _entrywise_value(seq: Sequence[np.ndarray], l: int, m: int, label: str, fallback: np.ndarray) -> np.ndarray:
    """
    Sum every entry of a block at s = 1 with its own [l/m] approximant.
    Entries lost in round-off or already converged by order l keep the plain
    partial sum; an entry whose
    denominator vanishes at s = 1 keeps the shared-denominator value.
    """
    stack = np.stack([np.asarray(g, dtype=float) for g in seq[: l + m + 1]])
    out = stack.sum(axis=0)
    floor = NEGLIGIBLE * max(float(np.max(np.abs(stack))), 1e-300)
    poles = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PadeDegeneracyWarning)
        for idx in np.ndindex(*stack.shape[1:]):
            series = stack[(slice(None),) + idx]
            head = float(np.max(np.abs(series)))
            if head <= floor or np.max(np.abs(series[l + 1 :])) <= CONVERGED * head:
                continue
            try:
                out[idx] = pade_fit(list(series), l, m, label).value()
            except PadePoleError:
                out[idx] = fallback[idx]
                poles += 1
    if poles:
        logger.debug("Pade %s: %d entries kept the block denominator", label, poles)
    return out


def _anchor(net: AugmentedNetwork, loads: ExtendedLoadSet, v_I0: np.ndarray, km_guess: np.ndarray) -> np.ndarray:
    """Exact (x_KM; y_KM; p_I; q_I; xi_I; zeta_I) at the expansion point from one QPF solve."""
    v = flat_start(net, v_I0)
    v[net.km_idx] = km_guess
    sol = solve_qpf(assemble_qpf(net, loads, v_I0), v)
    I = net.ibus_idx
    v_K = sol.v[net.km_idx]
    p, q = sol.p_inj[I], sol.q_inj[I]
    return np.concatenate([v_K.real, v_K.imag, p, q, q * v_I0.real, q * v_I0.imag])


def assemble_linearization(
    net: AugmentedNetwork,
    loads: ExtendedLoadSet,
    v_I0: np.ndarray,
    l: int = PADE_L,
    m: int = PADE_M,
    e_ref: Optional[float] = None,
    anchor: bool = True,
) -> PadeLinearization:
    """
    chi = H w + h with chi = (x_KM; y_KM; p_I; q_I; xi_I; zeta_I).

    With `anchor`, h is shifted so that H w0 + h equals the QPF solution at
    the expansion point; the Pade sums are kept when that solve fails.
    """
    v_I0 = np.asarray(v_I0, dtype=complex)
    series = he_recursion(net, loads, v_I0, l + m, e_ref=e_ref)
    H_parts, h_parts, fits, slices = [], [], {}, {}
    row = 0
    for name, seq in series.blocks().items():
        fit = pade_fit(seq, l, m, label=name)
        G = _entrywise_value(seq, l, m, name, fit.value())
        H_parts.append(G[:, :-1])
        h_parts.append(G[:, -1])
        fits[name] = fit
        slices[name] = slice(row, row + G.shape[0])
        row += G.shape[0]
    H = np.vstack(H_parts)
    h = np.concatenate(h_parts)

    if anchor:
        chi0 = H @ series.w0 + h
        nk = net.NKM
        try:
            exact = _anchor(net, loads, v_I0, chi0[:nk] + 1j * chi0[nk : 2 * nk])
        except QpfError as exc:
            logger.warning("Expansion point has no QPF solution (%s); keeping the Pade constant", exc)
        else:
            logger.debug("Anchored linearization: |chi0 - QPF| %.3e", float(np.max(np.abs(chi0 - exact))))
            h = exact - H @ series.w0

    return PadeLinearization(
        H=H,
        h=h,
        l=l,
        m=m,
        slices=slices,
        fits=fits,
        w0=series.w0,
        e_ref=series.e_ref,
        km_ids=tuple(net.km_ids),
        ibus_ids=tuple(net.ibus_ids),
    )


# ------------------ baselines ------------------

def ward_reduction(
    net: AugmentedNetwork, loads: ExtendedLoadSet, v_km_mag: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    v_KM = M v_I + c with M = -[Y_KK - diag(conj(S)/|v|^2)]^-1 Y_KI and
    c = -[...]^-1 i0, magnitudes frozen at v_km_mag.
    """
    v_km_mag = np.asarray(v_km_mag, dtype=float)
    if v_km_mag.shape != (net.NKM,) or np.any(v_km_mag <= 0):
        raise ReductionError("KM magnitude estimates must be positive, one per KM bus")
    ybus = modified_ybus(net, loads)
    K, I = net.km_idx, net.ibus_idx
    A = ybus[np.ix_(K, K)] - np.diag(np.conj(loads.injection) / v_km_mag**2)
    if _ill_conditioned(A):
        raise ReductionError("reduced KM admittance is singular")
    lu = scipy.linalg.lu_factor(A)
    return -scipy.linalg.lu_solve(lu, ybus[np.ix_(K, I)]), -scipy.linalg.lu_solve(lu, loads.i0.astype(complex))


def taylor_sensitivity(
    net: AugmentedNetwork, loads: ExtendedLoadSet, v0: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """First-order expansion of the KM balance at a solved state: (x_K; y_K) = M (x_I; y_I) + c."""
    v0 = np.asarray(v0, dtype=complex)
    ybus = modified_ybus(net, loads)
    K, I = net.km_idx, net.ibus_idx
    i0 = np.zeros(net.N, dtype=complex)
    i0[K] = loads.i0
    current = ybus @ v0 + i0
    s = (v0 * np.conj(current))[K]
    if np.max(np.abs(s - loads.injection), initial=0.0) > 1e-6:
        raise SensitivityError("expansion point does not satisfy the power balance")
    if np.any(v0[K] == 0):
        raise SensitivityError("zero KM voltage at the expansion point")
    c = current[K] / np.conj(v0[K])
    J = realform(ybus[np.ix_(K, K)]) + conjform(c)
    if _ill_conditioned(J):
        raise SensitivityError("KM Jacobian is singular at the expansion point")
    M = -scipy.linalg.solve(J, realform(ybus[np.ix_(K, I)]))
    return M, to_real(v0[K]) - M @ to_real(v0[I])


# ------------------ truncation diagnostics ------------------

def condition_number(Psi: np.ndarray) -> float:
    sv = scipy.linalg.svd(np.atleast_2d(Psi), compute_uv=False)
    if sv.size == 0 or sv[-1] == 0:
        raise UndefinedBoundError("matrix is rank deficient")
    return float(sv[0] / sv[-1])


def error_bound(
    trunc: Tuple[np.ndarray, np.ndarray],
    ext: Tuple[np.ndarray, np.ndarray],
    solution: Optional[np.ndarray] = None,
) -> float:
    """
    Least-squares perturbation bound eps * (2 kappa / cos(theta) + tan(theta) kappa^2)
    for the solution of min |psi - Psi x| when (Psi, psi) is replaced by ext.
    """
    Psi, psi = np.atleast_2d(np.asarray(trunc[0], float)), np.asarray(trunc[1], float)
    Psi_x, psi_x = np.atleast_2d(np.asarray(ext[0], float)), np.asarray(ext[1], float)
    if Psi.shape != Psi_x.shape or psi.shape != psi_x.shape:
        raise UndefinedBoundError("truncated and extended systems differ in shape")
    n_Psi, n_psi = np.linalg.norm(Psi, 2), np.linalg.norm(psi)
    if n_Psi == 0 or n_psi == 0:
        raise UndefinedBoundError("zero matrix or right-hand side")
    x = scipy.linalg.lstsq(Psi, psi)[0] if solution is None else np.asarray(solution, float)
    eps = max(np.linalg.norm(Psi_x - Psi, 2) / n_Psi, np.linalg.norm(psi_x - psi) / n_psi)
    sin_theta = np.linalg.norm(psi - Psi @ x) / n_psi
    if sin_theta >= 1.0:
        raise UndefinedBoundError("right-hand side is orthogonal to the range")
    theta = np.arcsin(sin_theta)
    kappa = condition_number(Psi)
    return float(eps * (2.0 * kappa / np.cos(theta) + np.tan(theta) * kappa**2))


def order_diagnostic(
    net: AugmentedNetwork, loads: ExtendedLoadSet, v_I0: np.ndarray, l: int = PADE_L
) -> float:
    """error_bound of the KM block at orders [l/l] against [l+1/l+1]."""
    lo = assemble_linearization(net, loads, v_I0, l, l)
    hi = assemble_linearization(net, loads, v_I0, l + 1, l + 1)
    H_lo, h_lo = lo.block("km")
    H_hi, h_hi = hi.block("km")
    return error_bound((H_lo, H_lo @ lo.w0 + h_lo), (H_hi, H_hi @ hi.w0 + h_hi))


# ------------------ per-order network series ------------------

class NetworkPowerSeries:
    """
    Time-series coefficients of the network response to a rotor-angle series.

    Order 0 is a QPF solve at the expansion angles. Every later order solves
    the first-order KM balance (same Jacobian for all orders) with the
    convolution of lower orders on the right-hand side; machine power follows
    from Ibus currents.
    """

    def __init__(
        self,
        net: AugmentedNetwork,
        loads: ExtendedLoadSet,
        gens: Sequence[GeneratorDynamic],
        delta0: np.ndarray,
        v_guess: Optional[np.ndarray] = None,
        tol: float = QPF_TOL,
    ):
        self._E = np.array([g.E for g in gens])
        delta0 = np.asarray(delta0, dtype=float)
        v_ibus = self._E * np.exp(1j * delta0)
        sys = assemble_qpf(net, loads, v_ibus)
        self.solution = solve_qpf(sys, v_guess if v_guess is not None else flat_start(net, v_ibus), tol=tol)
        self.qpf_solves = 1
        K, I = net.km_idx, net.ibus_idx
        ybus = sys.ybus
        self._y_kk = ybus[np.ix_(K, K)]
        self._y_ki = ybus[np.ix_(K, I)]
        self._y_ik = ybus[np.ix_(I, K)]
        self._y_ii = ybus[np.ix_(I, I)]
        v_k0 = self.solution.v[K]
        u0 = self._y_kk @ v_k0 + self._y_ki @ v_ibus + loads.i0
        J = realform(self._y_kk) + conjform(u0 / np.conj(v_k0))
        if _ill_conditioned(J):
            raise TruncatedCoefficientError("KM Jacobian is singular at the expansion point", order=1)
        self._lu = scipy.linalg.lu_factor(J)

        self.delta: List[np.ndarray] = [delta0]
        self.g: List[np.ndarray] = [np.exp(1j * delta0)]
        self.v_i: List[np.ndarray] = [v_ibus]
        self.v_k: List[np.ndarray] = [v_k0]
        self._u: List[np.ndarray] = [u0]
        i_i0 = self._y_ii @ v_ibus + self._y_ik @ v_k0
        self.i_i: List[np.ndarray] = [i_i0]
        self.p_elec: List[np.ndarray] = [np.real(v_ibus * np.conj(i_i0))]

    @property
    def order(self) -> int:
        return len(self.delta) - 1

    def next_order(self, delta_k: np.ndarray) -> np.ndarray:
        """Append delta[k] and return the machine power coefficient p[k]."""
        k = len(self.delta)
        self.delta.append(np.asarray(delta_k, dtype=float))
        g_k = sum(i * self.delta[i] * self.g[k - i] for i in range(1, k + 1)) * (1j / k)
        self.g.append(g_k)
        v_i = self._E * g_k
        self.v_i.append(v_i)
        conv = np.zeros_like(self.v_k[0])
        for i in range(1, k):
            conv += np.conj(self.v_k[i]) * self._u[k - i]
        rhs = -(self._y_ki @ v_i) - conv / np.conj(self.v_k[0])
        v_k = to_complex(scipy.linalg.lu_solve(self._lu, to_real(rhs)))
        if not np.all(np.isfinite(v_k)) or np.max(np.abs(v_k)) > OVERFLOW_LIMIT:
            raise TruncatedCoefficientError("network series overflowed", order=k)
        self.v_k.append(v_k)
        self._u.append(self._y_kk @ v_k + self._y_ki @ v_i)
        self.i_i.append(self._y_ii @ v_i + self._y_ik @ v_k)
        p_k = np.real(sum(self.v_i[i] * np.conj(self.i_i[k - i]) for i in range(k + 1)))
        self.p_elec.append(p_k)
        return p_k
