# dynamics/reference_sims.py
"""
Numerical baselines for the analytic engine:
  - TDS: modified-Euler predictor/corrector with one QPF per stage
  - HTMS: truncated McLaurin series in time, re-expanded when the
    estimated convergence radius runs out
Both report through PiecewiseTrajectory so results compare column by column.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from network.case_model import AugmentedNetwork, GeneratorDynamic
from network.errors import (
    ConfigurationError,
    QpfError,
    RadiusCollapseError,
    SimulationError,
    SwinglineError,
    TruncatedCoefficientError,
)
from network.qpf import QPF_TOL, flat_start, ibus_voltages, machine_power
from network.zip_loads import RESPLIT_THRESHOLD, ExtendedLoadSet, needs_resplit, resplit
from dynamics.he_linearizer import NetworkPowerSeries
from dynamics.trajectory import PiecewiseTrajectory, RegionSegment, instability_index, state_from_angles

logger = logging.getLogger(__name__)

TDS_DT = 1e-3
HTMS_TERMS = 25
RADIUS_SAFETY = 0.5
TAIL_TOL = 1e-10
DT_MIN = 1e-4
DAMPING_MODES = ("on-speed", "on-angle")


@dataclass(frozen=True)
class TdsConfig:
    dt: float = TDS_DT
    horizon: float = 3.0
    tol: float = QPF_TOL
    damping: str = "on-speed"
    resplit_threshold: float = RESPLIT_THRESHOLD

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"TDS step must be positive, got {self.dt}")
        if self.damping not in DAMPING_MODES:
            raise ConfigurationError(f"unknown damping mode '{self.damping}'")


# ------------------ swing right-hand side ------------------

def _machine_arrays(gens: Sequence[GeneratorDynamic]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (
        np.array([g.M for g in gens]),
        np.array([g.D for g in gens]),
        np.array([g.p_mech for g in gens]),
    )


def swing_rhs(
    power_fn: Callable[[np.ndarray], np.ndarray],
    gens: Sequence[GeneratorDynamic],
    damping: str = "on-speed",
    delta_eq: Optional[np.ndarray] = None,
) -> Callable[[float, np.ndarray], np.ndarray]:
    """f(t, (delta; speed)) for the classical machine model."""
    M, D, p_mech = _machine_arrays(gens)
    ni = len(gens)

    def f(t: float, y: np.ndarray) -> np.ndarray:
        delta, speed = y[:ni], y[ni:]
        if damping == "on-angle":
            torque = D * (delta - delta_eq)
        else:
            torque = D * speed
        return np.concatenate([speed, (p_mech - power_fn(delta) - torque) / M])

    return f


def modified_euler_step(
    f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, dt: float
) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + dt, y + dt * k1)
    return y + 0.5 * dt * (k1 + k2)


def tds_integrate(
    power_fn: Callable[[np.ndarray], np.ndarray],
    gens: Sequence[GeneratorDynamic],
    delta0: np.ndarray,
    speed0: np.ndarray,
    cfg: TdsConfig,
    t0: float = 0.0,
    delta_eq: Optional[np.ndarray] = None,
    stop_on_instability: bool = True,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Fixed-step modified Euler from t0 to cfg.horizon.
    Returns (t, delta, speed) sample arrays, stopping early at loss of synchronism.
    """
    delta0 = np.asarray(delta0, dtype=float)
    if delta_eq is None:
        delta_eq = delta0
    f = swing_rhs(power_fn, gens, cfg.damping, delta_eq)
    M = np.array([g.M for g in gens])
    ni = len(gens)
    y = np.concatenate([delta0, np.asarray(speed0, dtype=float)])
    n = max(0, int(math.ceil((cfg.horizon - t0) / cfg.dt - 1e-9)))
    ts, ys = [t0], [y]
    t = t0
    for _ in range(n):
        dt = min(cfg.dt, cfg.horizon - t)
        y = modified_euler_step(f, t, y, dt)
        t += dt
        ts.append(t)
        ys.append(y)
        if stop_on_instability and instability_index(y[None, :ni], M, delta0) is not None:
            break
    Y = np.array(ys)
    return np.array(ts), Y[:, :ni], Y[:, ni:]


# ------------------ TDS with per-stage QPF ------------------

class _QpfPower:
    """Electrical power through QPF with warm starts and I-load re-splitting."""

    def __init__(self, net: AugmentedNetwork, loads: ExtendedLoadSet, gens, cfg: TdsConfig, v_guess=None):
        self.net = net
        self.loads = loads
        self.gens = gens
        self.cfg = cfg
        self.v = v_guess
        self.solves = 0
        self.t = 0.0
        self.resplits: List[float] = []

    def __call__(self, delta: np.ndarray) -> np.ndarray:
        v_ibus = ibus_voltages(self.gens, delta)
        guess = self.v if self.v is not None else flat_start(self.net, v_ibus)
        p_e, sol = machine_power(self.net, self.loads, v_ibus, guess, tol=self.cfg.tol)
        self.solves += 1
        if needs_resplit(self.loads, sol.v[self.net.km_idx], self.cfg.resplit_threshold):
            self.loads = resplit(self.loads, self.net, sol.v)
            self.resplits.append(self.t)
            p_e, sol = machine_power(self.net, self.loads, v_ibus, sol.v, tol=self.cfg.tol)
            self.solves += 1
        self.v = sol.v
        return p_e

    def ref_angle(self) -> float:
        if self.v is None:
            return float("nan")
        kbus = self.net.gen_link[self.net.ibus_ids[0]].kbus
        return float(np.angle(self.v[self.net.position(kbus)]))

    def km_voltages(self) -> Optional[np.ndarray]:
        return None if self.v is None else self.v[self.net.km_idx].copy()


def tds_run(
    net: AugmentedNetwork,
    loads: ExtendedLoadSet,
    gens: Sequence[GeneratorDynamic],
    delta0: np.ndarray,
    speed0: np.ndarray,
    cfg: TdsConfig = TdsConfig(),
    t0: float = 0.0,
    delta_eq: Optional[np.ndarray] = None,
    v_guess: Optional[np.ndarray] = None,
    stop_on_instability: bool = True,
) -> PiecewiseTrajectory:
    """
    Predictor and corrector stages each solve one QPF at the stage's rotor
    angles. A QPF failure truncates the trajectory and marks it failed.
    """
    gens = tuple(gens)
    M = np.array([g.M for g in gens])
    delta0 = np.asarray(delta0, dtype=float)
    delta_eq = delta0 if delta_eq is None else np.asarray(delta_eq, dtype=float)
    power = _QpfPower(net, loads, gens, cfg, v_guess)
    f = swing_rhs(power, gens, cfg.damping, delta_eq)
    traj = PiecewiseTrajectory(gens=gens, engine="tds", km_ids=tuple(net.km_ids))
    ni = len(gens)

    y = np.concatenate([delta0, np.asarray(speed0, dtype=float)])
    t = float(t0)
    exit_cause = "horizon"
    n = max(0, int(math.ceil((cfg.horizon - t0) / cfg.dt - 1e-9)))
    try:
        for step in range(n + 1):
            power.t = t
            w, dw = state_from_angles(gens, y[:ni], y[ni:])
            if step == n:
                # final sample reuses the last corrector solve
                traj.append(t, w, dw, power.ref_angle(), power.km_voltages())
                break
            k1 = f(t, y)
            traj.append(t, w, dw, power.ref_angle(), power.km_voltages())
            if stop_on_instability and instability_index(y[None, :ni], M, delta0) is not None:
                exit_cause = "instability"
                traj.event(t, "instability")
                break
            dt = min(cfg.dt, cfg.horizon - t)
            power.t = t + dt
            k2 = f(t + dt, y + dt * k1)
            y = y + 0.5 * dt * (k1 + k2)
            t += dt
    except (QpfError, SimulationError) as exc:
        exit_cause = "failure"
        traj.fail(f"QPF failed at t={t:.6f}: {exc}")

    for at in power.resplits:
        traj.event(at, "resplit")
    traj.segments.append(RegionSegment(float(t0), traj.t_end if len(traj.t) else float(t0), "tds", exit_cause))
    traj.network_solves = power.solves
    logger.info("TDS: %d steps, %d QPF solves, ended at t=%.3f s (%s)", len(traj.t) - 1, power.solves, traj.t_end, exit_cause)
    return traj


# ------------------ HTMS ------------------

class PowerSeriesOracle(Protocol):
    p_elec: List[np.ndarray]
    qpf_solves: int

    def next_order(self, delta_k: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class McLaurinState:
    delta: np.ndarray  # (m, NI)
    omega: np.ndarray  # (m, NI), speed deviation rad/s
    t_tr: float
    v: Optional[np.ndarray] = None  # (m, NI) Ibus voltage coefficients when known
    v_km: Optional[np.ndarray] = None  # KM bus voltage coefficients, possibly fewer orders

    def __post_init__(self):
        if self.delta.shape != self.omega.shape:
            raise ValueError("delta and omega coefficient arrays differ in shape")
        if self.v is not None and self.v.shape != self.delta.shape:
            raise ValueError("voltage coefficients do not match the angle coefficients")

    @property
    def m(self) -> int:
        return self.delta.shape[0]

    def evaluate(self, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        return evaluate_series(self.delta, dt), evaluate_series(self.omega, dt)

    def km_voltages(self, dt: float) -> Optional[np.ndarray]:
        return None if self.v_km is None else evaluate_series(self.v_km, dt)


def evaluate_series(coeffs: np.ndarray, dt: float) -> np.ndarray:
    """Horner evaluation of sum_k c[k] dt^k along axis 0."""
    result = np.array(coeffs[-1], dtype=np.result_type(coeffs, float))
    for c in coeffs[-2::-1]:
        result = result * dt + c
    return result


def htms_coefficients(
    delta0: np.ndarray,
    omega0: np.ndarray,
    t_tr: float,
    m: int,
    oracle: PowerSeriesOracle,
    gens: Sequence[GeneratorDynamic],
    damping: str = "on-speed",
    delta_eq: Optional[np.ndarray] = None,
) -> McLaurinState:
    """
    Term-by-term recursion
        omega[k+1] = (p_mech [k=0] - p_elec[k] - damping[k]) / ((k+1) M)
        delta[k+1] = omega[k] / (k+1)
    where p_elec[k] comes from the oracle once delta[k] is known.
    """
    if m < 1:
        raise ConfigurationError(f"HTMS needs at least one term, got {m}")
    if damping not in DAMPING_MODES:
        raise ConfigurationError(f"unknown damping mode '{damping}'")
    M, D, p_mech = _machine_arrays(gens)
    delta = [np.asarray(delta0, dtype=float)]
    omega = [np.asarray(omega0, dtype=float)]
    p_e = [np.asarray(oracle.p_elec[0], dtype=float)]
    if damping == "on-angle":
        eq = delta[0] if delta_eq is None else np.asarray(delta_eq, dtype=float)

    for k in range(m - 1):
        if damping == "on-angle":
            torque = D * (delta[k] - eq) if k == 0 else D * delta[k]
        else:
            torque = D * omega[k]
        drive = (p_mech if k == 0 else 0.0) - p_e[k] - torque
        omega.append(drive / ((k + 1) * M))
        delta.append(omega[k] / (k + 1))
        if k + 1 < m - 1:
            try:
                p_e.append(np.asarray(oracle.next_order(delta[k + 1]), dtype=float))
            except SwinglineError as exc:
                if isinstance(exc, TruncatedCoefficientError):
                    raise
                raise TruncatedCoefficientError(f"power series failed: {exc}", order=k + 1) from exc

    v = None
    g = getattr(oracle, "g", None)
    if g is not None and len(g) >= m:
        E = np.array([gen.E for gen in gens])
        v = np.array([E * g_k for g_k in g[:m]])
    v_k = getattr(oracle, "v_k", None)
    v_km = np.array(v_k) if v_k else None
    return McLaurinState(delta=np.array(delta), omega=np.array(omega), t_tr=float(t_tr), v=v, v_km=v_km)


def _last_ratio(u: np.ndarray) -> float:
    last, prev = np.abs(u[-1]), np.abs(u[-2])
    live = last > 0
    if not np.any(live):
        return math.inf
    return float(np.min(prev[live] / last[live]))


def convergence_radius(state: McLaurinState) -> float:
    """Smallest |u[m-2]/u[m-1]| over every machine angle, speed and voltage part."""
    if state.m < 2:
        return math.inf
    series = [state.delta, state.omega]
    if state.v is not None:
        series += [state.v.real, state.v.imag]
    return min(_last_ratio(u) for u in series)


def tail_guard(state: McLaurinState, tol: float = TAIL_TOL) -> float:
    """Step at which the last kept term alone reaches tol."""
    if state.m < 2:
        return math.inf
    series = [state.delta, state.omega]
    if state.v is not None:
        series += [np.abs(state.v)]
    last = max(float(np.max(np.abs(u[-1]))) for u in series)
    if last == 0:
        return math.inf
    return (tol / last) ** (1.0 / (state.m - 1))


def htms_integrate(
    oracle_factory: Callable[[np.ndarray], PowerSeriesOracle],
    gens: Sequence[GeneratorDynamic],
    delta0: np.ndarray,
    omega0: np.ndarray,
    m: int = HTMS_TERMS,
    horizon: float = 3.0,
    t0: float = 0.0,
    damping: str = "on-speed",
    delta_eq: Optional[np.ndarray] = None,
    sample_dt: float = TDS_DT,
    dt_min: float = DT_MIN,
    stop_on_instability: bool = True,
    km_ids: Sequence[int] = (),
) -> PiecewiseTrajectory:
    """
    Expand, step by min(0.5 radius, tail guard, remaining horizon), re-expand
    from the series value at the step end.
    """
    gens = tuple(gens)
    M = np.array([g.M for g in gens])
    traj = PiecewiseTrajectory(gens=gens, engine="htms", km_ids=tuple(km_ids))
    delta = np.asarray(delta0, dtype=float)
    omega = np.asarray(omega0, dtype=float)
    delta_start = delta.copy()
    eq = delta.copy() if delta_eq is None else np.asarray(delta_eq, dtype=float)
    t = float(t0)

    while horizon - t > 1e-12:
        try:
            oracle = oracle_factory(delta)
            state = htms_coefficients(delta, omega, t, m, oracle, gens, damping, eq)
        except (QpfError, TruncatedCoefficientError) as exc:
            if not len(traj.t):
                w, dw = state_from_angles(gens, delta, omega)
                traj.append(t, w, dw)
            traj.segments.append(RegionSegment(t, t, "htms", "failure"))
            traj.fail(f"network series failed at t={t:.6f}: {exc}")
            return traj
        traj.network_solves += getattr(oracle, "qpf_solves", 0)
        radius = convergence_radius(state)
        h = min(RADIUS_SAFETY * radius, tail_guard(state), horizon - t)
        if h < dt_min and horizon - t > dt_min:
            raise RadiusCollapseError(
                f"series radius {radius:.3e} s at t={t:.4f} is below {dt_min:g} s; try more terms than {m}",
                partial=traj,
            )
        n = max(1, int(math.ceil(h / sample_dt)))
        taus = np.linspace(0.0, h, n + 1)
        rows = [state.evaluate(tau) for tau in taus]
        D_ = np.array([r[0] for r in rows])
        O_ = np.array([r[1] for r in rows])
        W, DW = state_from_angles(gens, D_, O_)
        V = [state.km_voltages(tau) for tau in taus] if state.v_km is not None else None
        traj.extend(t + taus, W, DW, V=V)

        hit = instability_index(np.unwrap(D_, axis=0), M, delta_start) if stop_on_instability else None
        if hit is not None:
            t_hit = t + float(taus[hit])
            traj.segments.append(RegionSegment(t, t_hit, "htms", "instability"))
            traj.event(t_hit, "instability")
            break
        exit_cause = "horizon" if horizon - (t + h) <= 1e-12 else "radius"
        traj.segments.append(RegionSegment(t, t + h, "htms", exit_cause))
        logger.debug("HTMS expansion at t=%.4f: radius %.3e, step %.3e", t, radius, h)
        delta, omega = state.evaluate(h)
        t += h

    logger.info("HTMS: %d expansions up to t=%.3f s", len(traj.segments), traj.t_end)
    return traj


def htms_run(
    net: AugmentedNetwork,
    loads: ExtendedLoadSet,
    gens: Sequence[GeneratorDynamic],
    delta0: np.ndarray,
    omega0: np.ndarray,
    m: int = HTMS_TERMS,
    horizon: float = 3.0,
    t0: float = 0.0,
    damping: str = "on-speed",
    delta_eq: Optional[np.ndarray] = None,
    tol: float = QPF_TOL,
    sample_dt: float = TDS_DT,
    dt_min: float = DT_MIN,
) -> PiecewiseTrajectory:
    """
    HTMS on a fixed network with warm-started expansion QPFs. Network
    failures truncate the trajectory; a collapsing radius raises
    RadiusCollapseError carrying the partial trajectory.
    """
    last_v = {"v": None}

    def factory(delta: np.ndarray) -> NetworkPowerSeries:
        series = NetworkPowerSeries(net, loads, gens, delta, v_guess=last_v["v"], tol=tol)
        last_v["v"] = series.solution.v
        return series

    return htms_integrate(
        factory, gens, delta0, omega0, m=m, horizon=horizon, t0=t0,
        damping=damping, delta_eq=delta_eq, sample_dt=sample_dt, dt_min=dt_min,
        km_ids=net.km_ids,
    )
