# network/zip_loads.py
"""
ZIP loads in the extended Z+P form.

Z fractions and the Z half of I fractions go into the admittance diagonal;
P fractions and the P half of I fractions stay as constant-power loads.
Loads are consumed powers; the network sees them as negative injections.
"""
import logging
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from network.errors import DanglingReferenceError, LoadModelError

if TYPE_CHECKING:
    from network.case_model import AugmentedNetwork

logger = logging.getLogger(__name__)

FRACTION_TOL = 1e-12
RESPLIT_THRESHOLD = 0.15


@dataclass(frozen=True)
class ZipLoadSpec:
    bus: int
    S0: complex
    fz: float
    fi: float
    fp: float

    def __post_init__(self):
        if min(self.fz, self.fi, self.fp) < 0:
            raise LoadModelError(f"load at bus {self.bus}: negative ZIP fraction")
        if abs(self.fz + self.fi + self.fp - 1.0) > FRACTION_TOL:
            raise LoadModelError(
                f"load at bus {self.bus}: fractions sum to {self.fz + self.fi + self.fp!r}, not 1"
            )

    def power(self, v_mag: float) -> complex:
        """True ZIP consumption at voltage magnitude v_mag."""
        return self.S0 * (self.fz * v_mag**2 + self.fi * v_mag + self.fp)


@dataclass(frozen=True, eq=False)
class ExtendedLoadSet:
    ybus_add: np.ndarray  # N x N diagonal
    p_loads: np.ndarray  # over KM, consumed
    i0: np.ndarray  # over KM
    v0_mag: np.ndarray  # over KM
    specs: Tuple[ZipLoadSpec, ...] = ()
    i_mask: Optional[np.ndarray] = None  # KM buses carrying an I fraction

    @property
    def injection(self) -> np.ndarray:
        return -self.p_loads


def decompose_current_load(S0: complex, v0_mag: float) -> Tuple[complex, complex]:
    """
    Split a constant-current load into an admittance and a constant power so that
    both agree with S0*v0_mag at |v| = v0_mag:
      - z_part: admittance conj(S0)/(2 v0_mag), consuming (S0/2v0)|v|^2
      - p_part: (S0/2) v0_mag
    """
    if v0_mag <= 0:
        raise LoadModelError(f"v0_mag must be positive, got {v0_mag}")
    return np.conj(S0) / (2.0 * v0_mag), 0.5 * S0 * v0_mag


def current_load_error_ratio(r: float) -> float:
    """Apparent over true I-load power when |v|/|v0| = r after the Z/P split."""
    if r <= 0:
        raise LoadModelError(f"voltage ratio must be positive, got {r}")
    return 0.5 * r + 0.5 / r


def error_curve(r_min: float = 0.8, r_max: float = 1.2, n: int = 41) -> pd.DataFrame:
    r = np.linspace(r_min, r_max, n)
    return pd.DataFrame({"r": r, "ratio": [current_load_error_ratio(x) for x in r]})


def build_extended_loads(
    zips: Sequence[ZipLoadSpec], v0: np.ndarray, net: "AugmentedNetwork"
) -> ExtendedLoadSet:
    """
    Extended load set at the voltages v0 (complex, one entry per network bus).
    Several specs on one bus accumulate.
    """
    v0 = np.asarray(v0, dtype=complex)
    if v0.shape != (net.N,):
        raise LoadModelError(f"v0 has shape {v0.shape}, expected ({net.N},)")
    km_pos = {int(k): p for p, k in enumerate(net.km_idx)}
    ybus_add = np.zeros((net.N, net.N), dtype=complex)
    p_loads = np.zeros(net.NKM, dtype=complex)
    v0_mag = np.abs(v0[net.km_idx])
    i_mask = np.zeros(net.NKM, dtype=bool)

    for spec in zips:
        if spec.bus not in net.index:
            raise DanglingReferenceError(f"load at unknown bus {spec.bus}")
        k = net.index[spec.bus]
        if k not in km_pos:
            raise DanglingReferenceError(f"load placed on internal node {spec.bus}")
        mag = abs(v0[k])
        z_part, p_part = decompose_current_load(spec.fi * spec.S0, mag)
        ybus_add[k, k] += np.conj(spec.fz * spec.S0) + z_part
        p_loads[km_pos[k]] += spec.fp * spec.S0 + p_part
        if spec.fi > 0 and spec.S0 != 0:
            i_mask[km_pos[k]] = True

    return ExtendedLoadSet(
        ybus_add=ybus_add,
        p_loads=p_loads,
        i0=np.zeros(net.NKM, dtype=complex),
        v0_mag=v0_mag,
        specs=tuple(zips),
        i_mask=i_mask,
    )


def reconstructed_power(loads: ExtendedLoadSet, net: "AugmentedNetwork", v_mag: np.ndarray) -> np.ndarray:
    """Consumption over KM implied by (ybus_add, p_loads) at magnitudes v_mag (over KM)."""
    diag = np.diag(loads.ybus_add)[net.km_idx]
    return np.conj(diag) * np.asarray(v_mag) ** 2 + loads.p_loads


def true_power(zips: Iterable[ZipLoadSpec], net: "AugmentedNetwork", v_mag: np.ndarray) -> np.ndarray:
    km_pos = {int(k): p for p, k in enumerate(net.km_idx)}
    out = np.zeros(net.NKM, dtype=complex)
    for spec in zips:
        p = km_pos[net.index[spec.bus]]
        out[p] += spec.power(float(v_mag[p]))
    return out


def modified_ybus(net: "AugmentedNetwork", loads: ExtendedLoadSet) -> np.ndarray:
    return net.ybus + loads.ybus_add


def needs_resplit(loads: ExtendedLoadSet, v_km: np.ndarray, threshold: float = RESPLIT_THRESHOLD) -> bool:
    """True when some KM magnitude left the band around the split voltage."""
    if loads.i_mask is None or not np.any(loads.i_mask):
        return False
    mag = np.abs(np.asarray(v_km))
    drift = np.abs(mag - loads.v0_mag) / np.where(loads.v0_mag > 0, loads.v0_mag, 1.0)
    return bool(np.any(loads.i_mask & (drift > threshold)))


def resplit(loads: ExtendedLoadSet, net: "AugmentedNetwork", v: np.ndarray) -> ExtendedLoadSet:
    logger.warning("Re-splitting I loads at new voltages (max |v| drift %.3f)",
                   float(np.max(np.abs(np.abs(v[net.km_idx]) - loads.v0_mag))))
    return build_extended_loads(loads.specs, v, net)


def as_load_type(zips: Sequence[ZipLoadSpec], kind: str) -> List[ZipLoadSpec]:
    """Every load converted to a single type: 'z', 'i' or 'p'."""
    fractions = {"z": (1.0, 0.0, 0.0), "i": (0.0, 1.0, 0.0), "p": (0.0, 0.0, 1.0)}
    if kind not in fractions:
        raise LoadModelError(f"unknown load type '{kind}'")
    fz, fi, fp = fractions[kind]
    return [replace(z, fz=fz, fi=fi, fp=fp) for z in zips]


def scale_loads(zips: Sequence[ZipLoadSpec], bus: int, factor: float) -> List[ZipLoadSpec]:
    if not any(z.bus == bus for z in zips):
        raise DanglingReferenceError(f"no load at bus {bus}")
    return [replace(z, S0=z.S0 * factor) if z.bus == bus else z for z in zips]
