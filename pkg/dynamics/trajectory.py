# dynamics/trajectory.py
"""
Common output of every engine: sampled Ibus states plus the region log.

States are kept in rectangular form w = (x_I; y_I), dw = d/dt w. Rotor angles
and speeds are derived on demand so every engine reports them the same way.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from network.case_model import GeneratorDynamic

logger = logging.getLogger(__name__)

SEGMENT_COLUMNS = [
    "segment_id", "t_start", "t_end", "engine", "exit_cause", "trigger",
    "reinit_iterations", "reinit_residual", "relinearized", "max_constraint", "join_jump",
]


@dataclass
class RegionSegment:
    t_start: float
    t_end: float
    engine: str
    exit_cause: str  # boundary | horizon | instability | handoff | failure | radius
    trigger: Optional[str] = None  # o1 | o2 when exit_cause == boundary
    w_start: Optional[np.ndarray] = None
    w_lin: Optional[np.ndarray] = None
    solution: Any = None  # AnalyticSolution for analytic segments
    max_constraint: float = 0.0
    join_jump: float = 0.0
    reinit_iterations: int = 0
    reinit_residual: float = 0.0  # |F| of the consistent state the segment starts from
    relinearized: bool = False

    def __post_init__(self):
        if self.t_end < self.t_start:
            raise ValueError(f"segment ends before it starts ({self.t_start} > {self.t_end})")


# ------------------ state conversions ------------------

def state_from_angles(
    gens: Sequence[GeneratorDynamic], delta: np.ndarray, speed: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """(delta, d delta/dt in rad/s) -> (w, dw)."""
    E = np.array([g.E for g in gens])
    delta = np.asarray(delta, dtype=float)
    speed = np.asarray(speed, dtype=float)
    x, y = E * np.cos(delta), E * np.sin(delta)
    return np.concatenate([x, y], axis=-1), np.concatenate([-y * speed, x * speed], axis=-1)


def angles_from_state(w: np.ndarray, dw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(w, dw) -> (angle of x+jy, (x dy - y dx)/|v|^2); works row-wise on 2-D input."""
    w, dw = np.asarray(w), np.asarray(dw)
    ni = w.shape[-1] // 2
    x, y = w[..., :ni], w[..., ni:]
    dx, dy = dw[..., :ni], dw[..., ni:]
    mag2 = x**2 + y**2
    return np.angle(x + 1j * y), (x * dy - y * dx) / np.where(mag2 > 0, mag2, 1.0)


def coi_reference(delta: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Inertia-weighted mean angle, row-wise."""
    M = np.asarray(M, dtype=float)
    total = M.sum()
    if total <= 0:
        raise ValueError("total inertia must be positive")
    return np.asarray(delta) @ (M / total)


def instability_index(delta: np.ndarray, M: np.ndarray, delta_start: Optional[np.ndarray] = None) -> Optional[int]:
    """
    First row of an unwrapped angle history that counts as loss of synchronism:
      - several machines: some angle sits more than pi from the centre of inertia
      - one machine: the angle drifted more than pi from where the run began
    """
    delta = np.atleast_2d(delta)
    if delta.shape[0] == 0:
        return None
    if delta.shape[1] >= 2:
        spread = np.abs(delta - coi_reference(delta, M)[:, None])
    else:
        start = delta[0] if delta_start is None else np.asarray(delta_start)
        spread = np.abs(delta - start)
    hit = np.nonzero(np.any(spread > math.pi, axis=1))[0]
    return int(hit[0]) if hit.size else None


# ------------------ trajectory ------------------

@dataclass
class PiecewiseTrajectory:
    gens: Tuple[GeneratorDynamic, ...]
    engine: str
    km_ids: Tuple[int, ...] = ()  # buses whose voltages are recorded
    segments: List[RegionSegment] = field(default_factory=list)
    events: List[Dict[str, Any]] = field(default_factory=list)
    network_solves: int = 0
    failed: bool = False
    failure: str = ""
    _t: List[float] = field(default_factory=list, repr=False)
    _w: List[np.ndarray] = field(default_factory=list, repr=False)
    _dw: List[np.ndarray] = field(default_factory=list, repr=False)
    _ref: List[float] = field(default_factory=list, repr=False)
    _v: List[Optional[np.ndarray]] = field(default_factory=list, repr=False)

    # --- recording ---
    def append(
        self,
        t: float,
        w: np.ndarray,
        dw: np.ndarray,
        ref_angle: float = float("nan"),
        v_km: Optional[np.ndarray] = None,
    ) -> None:
        if self._t and t < self._t[-1] - 1e-12:
            raise ValueError(f"samples must be time-ordered ({t} after {self._t[-1]})")
        v = None if v_km is None else np.array(v_km, dtype=complex)
        if self._t and abs(t - self._t[-1]) <= 1e-12:
            # a join: the later state wins
            self._w[-1], self._dw[-1], self._ref[-1] = np.array(w, float), np.array(dw, float), ref_angle
            self._v[-1] = v
            return
        self._t.append(float(t))
        self._w.append(np.array(w, dtype=float))
        self._dw.append(np.array(dw, dtype=float))
        self._ref.append(float(ref_angle))
        self._v.append(v)

    def extend(
        self,
        ts: np.ndarray,
        W: np.ndarray,
        DW: np.ndarray,
        refs: Optional[np.ndarray] = None,
        V: Optional[Sequence[Optional[np.ndarray]]] = None,
    ) -> None:
        refs = np.full(len(ts), np.nan) if refs is None else refs
        V = [None] * len(ts) if V is None else V
        for t, w, dw, r, v in zip(ts, W, DW, refs, V):
            self.append(float(t), w, dw, float(r), v)

    def event(self, t: float, kind: str, **detail: Any) -> None:
        self.events.append({"t": float(t), "kind": kind, **detail})
        logger.debug("t=%.4f %s %s", t, kind, detail)

    def concat(self, other: "PiecewiseTrajectory") -> "PiecewiseTrajectory":
        """This trajectory followed by `other`; counts and logs are merged."""
        if not self.km_ids:
            self.km_ids = other.km_ids
        V = other._v if other.km_ids == self.km_ids else None
        self.extend(other.t, other.w, other.dw, other.ref_angles, V)
        self.segments.extend(other.segments)
        self.events.extend(other.events)
        self.network_solves += other.network_solves
        if other.failed:
            self.failed, self.failure = True, other.failure
        return self

    def truncate(self, n: int) -> None:
        """Keep the first n samples."""
        del self._t[n:], self._w[n:], self._dw[n:], self._ref[n:], self._v[n:]

    def fail(self, reason: str) -> None:
        self.failed = True
        self.failure = reason
        logger.warning("%s engine stopped at t=%.4f: %s", self.engine, self.t_end, reason)

    # --- views ---
    @property
    def t(self) -> np.ndarray:
        return np.array(self._t)

    @property
    def w(self) -> np.ndarray:
        return np.array(self._w).reshape(len(self._t), -1)

    @property
    def dw(self) -> np.ndarray:
        return np.array(self._dw).reshape(len(self._t), -1)

    @property
    def ref_angles(self) -> np.ndarray:
        return np.array(self._ref)

    @property
    def bus_voltages(self) -> np.ndarray:
        """KM bus voltages per sample, one column per km_ids entry; nan where none was recorded."""
        out = np.full((len(self._t), len(self.km_ids)), complex(np.nan, np.nan))
        for k, v in enumerate(self._v):
            if v is not None and v.shape == (len(self.km_ids),):
                out[k] = v
        return out

    @property
    def t_end(self) -> float:
        return self._t[-1] if self._t else float("nan")

    @property
    def last_state(self) -> Tuple[np.ndarray, np.ndarray]:
        return self._w[-1].copy(), self._dw[-1].copy()

    @property
    def labels(self) -> List[str]:
        return [str(g.bus) for g in self.gens]

    @property
    def inertia(self) -> np.ndarray:
        return np.array([g.M for g in self.gens])

    def rotor_angles(self) -> np.ndarray:
        """Unwrapped machine angles, one column per machine."""
        if not self._t:
            return np.zeros((0, len(self.gens)))
        delta, _ = angles_from_state(self.w, self.dw)
        return np.unwrap(delta, axis=0)

    def speed_deviation(self) -> np.ndarray:
        """d delta/dt in rad/s."""
        _, speed = angles_from_state(self.w, self.dw)
        return speed

    def speeds_pu(self) -> np.ndarray:
        omega0 = np.array([g.omega0 for g in self.gens])
        return 1.0 + self.speed_deviation() / omega0

    def coi_angles(self) -> np.ndarray:
        delta = self.rotor_angles()
        return delta - coi_reference(delta, self.inertia)[:, None]

    def reference_frame_angles(self) -> np.ndarray:
        """Angles measured from the reference Kbus voltage angle (nan where unknown)."""
        raw = self.ref_angles
        ref = np.full(raw.shape, np.nan)
        known = np.isfinite(raw)
        if np.any(known):
            ref[known] = np.unwrap(raw[known])
        return self.rotor_angles() - ref[:, None]

    def sample(self, times: np.ndarray) -> np.ndarray:
        """COI angles linearly interpolated at `times`."""
        coi = self.coi_angles()
        return np.column_stack([np.interp(times, self.t, coi[:, j]) for j in range(coi.shape[1])])

    def to_frame(self) -> pd.DataFrame:
        """
        Columns grouped per quantity:
          t, delta_coi_<gen>, omega_<gen> (p.u.), vx_<bus>, vy_<bus> (KM bus voltage),
          ex_<gen>, ey_<gen> (internal EMF), delta_ref_<gen> (reference-bus frame),
          delta_<gen> (raw unwrapped)
        Machines are labelled by their Kbus.
        """
        w = self.w
        ni = len(self.gens)
        buses = [str(b) for b in self.km_ids]
        V = self.bus_voltages
        groups = [
            ("delta_coi", self.coi_angles(), self.labels),
            ("omega", self.speeds_pu(), self.labels),
            ("vx", V.real, buses),
            ("vy", V.imag, buses),
            ("ex", w[:, :ni], self.labels),
            ("ey", w[:, ni:], self.labels),
            ("delta_ref", self.reference_frame_angles(), self.labels),
            ("delta", self.rotor_angles(), self.labels),
        ]
        cols: Dict[str, np.ndarray] = {"t": self.t}
        for prefix, values, names in groups:
            for j, name in enumerate(names):
                cols[f"{prefix}_{name}"] = values[:, j]
        return pd.DataFrame(cols)

    def segment_frame(self) -> pd.DataFrame:
        rows = [
            {
                "segment_id": k,
                "t_start": s.t_start,
                "t_end": s.t_end,
                "engine": s.engine,
                "exit_cause": s.exit_cause,
                "trigger": s.trigger or "",
                "reinit_iterations": s.reinit_iterations,
                "reinit_residual": s.reinit_residual,
                "relinearized": s.relinearized,
                "max_constraint": s.max_constraint,
                "join_jump": s.join_jump,
            }
            for k, s in enumerate(self.segments, start=1)
        ]
        return pd.DataFrame(rows, columns=SEGMENT_COLUMNS)
