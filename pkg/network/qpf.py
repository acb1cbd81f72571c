# network/qpf.py
"""
Quasi power flow: every Ibus voltage is fixed, every KM bus is PQ with its
extended P load. Newton iterates on rectangular coordinates; each balance row
is the quadratic form v^T M_i v + c_i^T v = m_i of the real vector v = [v_x; v_y].
"""
import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize

from network.case_model import AugmentedNetwork, GeneratorDynamic
from network.errors import (
    QpfDimensionError,
    QpfDivergenceError,
    QpfError,
    QpfSingularJacobianError,
)
from network.zip_loads import ExtendedLoadSet, ZipLoadSpec, build_extended_loads, modified_ybus

logger = logging.getLogger(__name__)

QPF_TOL = 1e-8
QPF_MAX_ITER = 30


@dataclass(frozen=True, eq=False)
class QuadraticFormSystem:
    ybus: np.ndarray
    fixed_idx: np.ndarray
    fixed_v: np.ndarray
    free_idx: np.ndarray
    target: np.ndarray  # complex injection demanded at the free buses
    i0: np.ndarray  # designated currents at the free buses

    @property
    def N(self) -> int:
        return self.ybus.shape[0]

    @property
    def n_equations(self) -> int:
        return 2 * len(self.fixed_idx) + 2 * len(self.free_idx)

    @property
    def n_unknowns(self) -> int:
        return 2 * self.N

    def linear_rows(self) -> Tuple[np.ndarray, np.ndarray]:
        """Selector rows e_j^T (real and imaginary part) pinning the Ibus voltages."""
        n, nf = self.N, len(self.fixed_idx)
        rows = np.zeros((2 * nf, 2 * n))
        rows[np.arange(nf), self.fixed_idx] = 1.0
        rows[nf + np.arange(nf), n + self.fixed_idx] = 1.0
        rhs = np.concatenate([self.fixed_v.real, self.fixed_v.imag])
        return rows, rhs

    def quad_form(self, row: int, part: str) -> Tuple[np.ndarray, np.ndarray, float]:
        """
        (M, c, m) for free bus number `row` such that v^T M v + c^T v = m
        gives its real ('p') or reactive ('q') injection balance.
        """
        n = self.N
        i = int(self.free_idx[row])
        g, b = self.ybus[i].real, self.ybus[i].imag
        A = np.zeros((2 * n, 2 * n))
        c = np.zeros(2 * n)
        i0 = self.i0[row]
        if part == "p":
            A[i, :n], A[i, n:] = g, -b
            A[n + i, :n], A[n + i, n:] = b, g
            c[i], c[n + i] = i0.real, i0.imag
            m = self.target[row].real
        elif part == "q":
            A[i, :n], A[i, n:] = -b, -g
            A[n + i, :n], A[n + i, n:] = g, -b
            c[i], c[n + i] = -i0.imag, i0.real
            m = self.target[row].imag
        else:
            raise ValueError(f"part must be 'p' or 'q', got {part!r}")
        return 0.5 * (A + A.T), c, float(m)

    def full_i0(self) -> np.ndarray:
        out = np.zeros(self.N, dtype=complex)
        out[self.free_idx] = self.i0
        return out

    def injections(self, v: np.ndarray) -> np.ndarray:
        return v * np.conj(self.ybus @ v + self.full_i0())

    def residual(self, v: np.ndarray) -> np.ndarray:
        return self.injections(v)[self.free_idx] - self.target


@dataclass(frozen=True, eq=False)
class QpfSolution:
    v: np.ndarray
    p_inj: np.ndarray
    q_inj: np.ndarray
    mismatch: float
    iterations: int


def assemble_qpf(net: AugmentedNetwork, loads: ExtendedLoadSet, v_ibus: np.ndarray) -> QuadraticFormSystem:
    v_ibus = np.asarray(v_ibus, dtype=complex)
    if v_ibus.shape != (net.NI,):
        raise QpfDimensionError(f"v_ibus has shape {v_ibus.shape}, expected ({net.NI},)")
    if loads.p_loads.shape != (net.NKM,):
        raise QpfDimensionError("load set does not match the network's KM buses")
    return QuadraticFormSystem(
        ybus=modified_ybus(net, loads),
        fixed_idx=net.ibus_idx,
        fixed_v=v_ibus,
        free_idx=net.km_idx,
        target=loads.injection,
        i0=loads.i0,
    )


def _jacobian(sys: QuadraticFormSystem, v: np.ndarray) -> np.ndarray:
    f = sys.free_idx
    current = sys.ybus @ v + sys.full_i0()
    y_ff = sys.ybus[np.ix_(f, f)]
    d_conj_i = np.diag(np.conj(current[f]))
    v_diag = np.diag(v[f])
    ds_dx = d_conj_i + v_diag @ np.conj(y_ff)
    ds_dy = 1j * d_conj_i - 1j * v_diag @ np.conj(y_ff)
    return np.block([[ds_dx.real, ds_dy.real], [ds_dx.imag, ds_dy.imag]])


def solve_qpf(
    sys: QuadraticFormSystem,
    v_guess: np.ndarray,
    tol: float = QPF_TOL,
    max_iter: int = QPF_MAX_ITER,
) -> QpfSolution:
    v = np.array(v_guess, dtype=complex)
    if v.shape != (sys.N,):
        raise QpfDimensionError(f"v_guess has shape {v.shape}, expected ({sys.N},)")
    v[sys.fixed_idx] = sys.fixed_v
    nf = len(sys.free_idx)
    mismatch = 0.0

    for it in range(max_iter + 1):
        mis = sys.residual(v) if nf else np.zeros(0, dtype=complex)
        mismatch = float(np.max(np.abs(np.concatenate([mis.real, mis.imag])))) if nf else 0.0
        if not np.isfinite(mismatch):
            raise QpfDivergenceError("QPF iterate is not finite", v, mismatch)
        if mismatch <= tol:
            s = sys.injections(v)
            logger.debug("QPF converged in %d iterations (mismatch %.2e)", it, mismatch)
            return QpfSolution(v=v, p_inj=s.real, q_inj=s.imag, mismatch=mismatch, iterations=it)
        if it == max_iter:
            break
        jac = _jacobian(sys, v)
        try:
            step = scipy.linalg.solve(jac, -np.concatenate([mis.real, mis.imag]))
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise QpfSingularJacobianError(f"QPF Jacobian is singular: {exc}") from exc
        v[sys.free_idx] += step[:nf] + 1j * step[nf:]

    raise QpfDivergenceError(f"QPF did not converge in {max_iter} iterations", v, mismatch)


# ------------------ machine-level helpers ------------------

def ibus_voltages(gens: Sequence[GeneratorDynamic], delta: np.ndarray) -> np.ndarray:
    E = np.array([g.E for g in gens])
    return E * np.exp(1j * np.asarray(delta, dtype=float))


def flat_start(net: AugmentedNetwork, v_ibus: np.ndarray, e_ref: Optional[float] = None) -> np.ndarray:
    level = e_ref if e_ref is not None else (float(np.mean(np.abs(v_ibus))) if net.NI else 1.0)
    v = np.full(net.N, level, dtype=complex)
    v[net.ibus_idx] = v_ibus
    return v


def machine_power(
    net: AugmentedNetwork,
    loads: ExtendedLoadSet,
    v_ibus: np.ndarray,
    v_guess: Optional[np.ndarray] = None,
    tol: float = QPF_TOL,
) -> Tuple[np.ndarray, QpfSolution]:
    """Electrical power delivered by each machine at the given internal voltages."""
    sys = assemble_qpf(net, loads, v_ibus)
    guess = v_guess if v_guess is not None else flat_start(net, v_ibus)
    sol = solve_qpf(sys, guess, tol=tol)
    return sol.p_inj[net.ibus_idx], sol


@dataclass(frozen=True, eq=False)
class OperatingPoint:
    delta: np.ndarray
    v: np.ndarray
    loads: ExtendedLoadSet
    gens: Tuple[GeneratorDynamic, ...]
    p_elec: np.ndarray
    qpf_solves: int


def solve_operating_point(
    net: AugmentedNetwork,
    zips: Sequence[ZipLoadSpec],
    gens: Optional[Sequence[GeneratorDynamic]] = None,
    passes: int = 2,
    tol: float = QPF_TOL,
) -> OperatingPoint:
    """
    Pre-disturbance equilibrium with fixed |E|: rotor angles of the non-reference
    machines are solved so electrical power equals p_mech; the first machine is the
    reference (angle 0) and takes whatever power balances the network.
    I loads are split at flat voltage first, then re-split at the solved voltages.
    """
    gens = tuple(gens if gens is not None else net.gens)
    if net.NI == 0:
        raise QpfError("operating point needs at least one machine")
    p_mech = np.array([g.p_mech for g in gens])
    v_split = np.ones(net.N, dtype=complex)
    delta = np.zeros(net.NI)
    v_last = flat_start(net, ibus_voltages(gens, delta))
    solves = 0

    for pass_no in range(passes):
        loads = build_extended_loads(zips, v_split, net)
        state = {"v": v_last}

        def mismatch(x: np.ndarray) -> np.ndarray:
            nonlocal solves
            d = np.concatenate([[0.0], x])
            p_e, sol = machine_power(net, loads, ibus_voltages(gens, d), state["v"], tol=tol)
            solves += 1
            state["v"] = sol.v
            return p_e[1:] - p_mech[1:]

        if net.NI > 1:
            result = scipy.optimize.root(mismatch, delta[1:], method="hybr", options={"xtol": 1e-12})
            if not result.success or np.max(np.abs(result.fun)) > 1e-7:
                raise QpfError(f"operating point not found: {result.message}")
            delta = np.concatenate([[0.0], result.x])
        p_e, sol = machine_power(net, loads, ibus_voltages(gens, delta), state["v"], tol=tol)
        solves += 1
        v_last = v_split = sol.v
        logger.debug("Operating point pass %d: delta=%s", pass_no + 1, np.round(delta, 6))

    gens = (replace(gens[0], p_mech=float(p_e[0])),) + gens[1:]
    logger.info(
        "Operating point: reference machine at %.4f p.u., angles %s rad",
        p_e[0], np.array2string(delta, precision=4),
    )
    return OperatingPoint(delta=delta, v=v_last, loads=loads, gens=gens, p_elec=p_e, qpf_solves=solves)
