# runner/diagnostics.py
"""
Network-structure diagnostics built on the linear map:
  - subspace angles between the per-bus rows of H_KM and a k-means grouping of buses
  - linearization error sweep (HE-Pade vs Taylor vs Ward, against QPF)
  - oscillation period of a trajectory
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.signal import find_peaks
from sklearn.cluster import KMeans

from network.case_model import AugmentedNetwork
from network.errors import ConfigurationError, QpfError, UndefinedBoundError
from network.qpf import QPF_TOL, assemble_qpf, solve_qpf
from network.zip_loads import ExtendedLoadSet
from dynamics.he_linearizer import (
    PADE_L,
    PADE_M,
    PadeLinearization,
    assemble_linearization,
    taylor_sensitivity,
    to_complex,
    to_real,
    ward_reduction,
)
from dynamics.trajectory import PiecewiseTrajectory

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
KMEANS_RESTARTS = 20
DEFAULT_RADII = (0.01, 0.02, 0.05, 0.1, 0.2, 0.3)
PEAK_PROMINENCE = 0.1


# --------- subspace angles ---------

@dataclass(frozen=True, eq=False)
class PartitionDiagnostic:
    theta: np.ndarray
    bus_ids: List[int]
    clusters: List[List[int]]
    k: int

    def theta_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.theta, index=self.bus_ids, columns=self.bus_ids)

    def to_dict(self) -> Dict[str, object]:
        return {"k": self.k, "bus_ids": list(self.bus_ids), "clusters": [list(c) for c in self.clusters]}


def bus_blocks(H_km: np.ndarray, n_buses: int) -> List[np.ndarray]:
    """Rows (x_i, y_i) of the KM block for each bus i."""
    H_km = np.atleast_2d(np.asarray(H_km, dtype=float))
    if H_km.shape[0] != 2 * n_buses:
        raise ValueError(f"H_KM has {H_km.shape[0]} rows, expected {2 * n_buses}")
    return [H_km[[i, n_buses + i]] for i in range(n_buses)]


def subspace_angles(H_km: np.ndarray, bus_ids: Sequence[int]) -> np.ndarray:
    """
    theta[i, j] = largest principal angle between the row spaces of the
    bus-i and bus-j blocks of H_KM, in [0, pi/2].
    """
    blocks = bus_blocks(H_km, len(bus_ids))
    for bus, blk in zip(bus_ids, blocks):
        if not np.any(blk):
            raise UndefinedBoundError(f"bus {bus}: H_KM block is zero, angle undefined")
    n = len(blocks)
    theta = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            # scipy works on column spaces and returns angles in descending order
            angle = float(scipy.linalg.subspace_angles(blocks[i].T, blocks[j].T)[0])
            theta[i, j] = theta[j, i] = min(max(angle, 0.0), math.pi / 2)
    return theta


# --------- clustering ---------

def _check_theta(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
        raise ValueError(f"theta must be square, got shape {theta.shape}")
    if np.max(np.abs(theta - theta.T), initial=0.0) > SYMMETRY_TOL:
        raise ValueError("theta is not symmetric")
    if np.any(np.diag(theta) != 0):
        raise ValueError("theta must have a zero diagonal")
    if np.any(theta < 0) or np.any(theta > math.pi / 2 + SYMMETRY_TOL):
        raise ValueError("theta entries must lie in [0, pi/2]")
    return theta


def kmeans_partition(
    theta: np.ndarray,
    k: int,
    bus_ids: Optional[Sequence[int]] = None,
    seed: int = 0,
    n_init: int = KMEANS_RESTARTS,
) -> List[List[int]]:
    """Rows of theta as feature vectors; clusters sorted by their smallest bus id."""
    theta = _check_theta(theta)
    n = theta.shape[0]
    ids = list(bus_ids) if bus_ids is not None else list(range(1, n + 1))
    if len(ids) != n:
        raise ValueError(f"{len(ids)} bus ids for a {n}x{n} theta")
    if k < 2 or k > n:
        raise ConfigurationError(f"cluster count must lie in [2, {n}], got {k}")

    model = KMeans(n_clusters=k, n_init=n_init, random_state=seed).fit(theta)
    groups: Dict[int, List[int]] = {}
    for bus, label in zip(ids, model.labels_):
        groups.setdefault(int(label), []).append(int(bus))
    clusters = sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])
    logger.info("k-means (k=%d, inertia %.4g): %s", k, model.inertia_, clusters)
    return clusters


def partition_diagnostic(lin: PadeLinearization, k: int = 2, seed: int = 0) -> PartitionDiagnostic:
    H_km, _ = lin.block("km")
    ids = list(lin.km_ids)
    theta = subspace_angles(H_km, ids)
    return PartitionDiagnostic(theta=theta, bus_ids=ids, clusters=kmeans_partition(theta, k, ids, seed), k=k)


# --------- linearization sweep ---------

def linearization_sweep(
    net: AugmentedNetwork,
    loads: ExtendedLoadSet,
    v0: np.ndarray,
    radii: Sequence[float] = DEFAULT_RADII,
    n_directions: int = 4,
    seed: int = 0,
    l: int = PADE_L,
    m: int = PADE_M,
    tol: float = QPF_TOL,
) -> pd.DataFrame:
    """
    KM voltage errors of the three linear maps against QPF, for Ibus angle
    deviations of growing size around the solved state v0. Magnitudes stay fixed.
    Columns: radius, direction, he_error, taylor_error, ward_error.
    """
    v0 = np.asarray(v0, dtype=complex)
    v_I0 = v0[net.ibus_idx]
    lin = assemble_linearization(net, loads, v_I0, l, m)
    Mw, cw = ward_reduction(net, loads, np.abs(v0[net.km_idx]))
    Mt, ct = taylor_sensitivity(net, loads, v0)

    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n_directions, net.NI))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    rows = []
    for r in radii:
        for d, u in enumerate(directions):
            v_I = v_I0 * np.exp(1j * r * u)
            try:
                truth = solve_qpf(assemble_qpf(net, loads, v_I), v0, tol=tol).v[net.km_idx]
            except QpfError as exc:
                logger.warning("Sweep point r=%g direction %d skipped: %s", r, d, exc)
                continue
            rows.append({
                "radius": float(r),
                "direction": d,
                "he_error": float(np.max(np.abs(lin.km_voltages(to_real(v_I)) - truth))),
                "taylor_error": float(np.max(np.abs(to_complex(Mt @ to_real(v_I) + ct) - truth))),
                "ward_error": float(np.max(np.abs(Mw @ v_I + cw - truth))),
            })
    return pd.DataFrame(rows, columns=["radius", "direction", "he_error", "taylor_error", "ward_error"])


# --------- oscillation period ---------

def oscillation_period(traj: PiecewiseTrajectory, t_start: float = 0.0, prominence: float = PEAK_PROMINENCE) -> float:
    """
    Mean spacing of the COI-angle peaks of the machine that swings most after
    t_start; nan when fewer than two peaks are found.
    """
    t = traj.t
    if not len(t):
        return float("nan")
    keep = t >= t_start
    t, coi = t[keep], traj.coi_angles()[keep]
    if len(t) < 3:
        return float("nan")
    swing = np.ptp(coi, axis=0)
    j = int(np.argmax(swing))
    if swing[j] <= 0:
        return float("nan")
    signal = coi[:, j] - coi[:, j].mean()
    peaks, _ = find_peaks(signal, prominence=prominence * swing[j])
    if len(peaks) < 2:
        logger.debug("Only %d peak(s) on machine %s after t=%.3f", len(peaks), traj.labels[j], t_start)
        return float("nan")
    return float(np.mean(np.diff(t[peaks])))
