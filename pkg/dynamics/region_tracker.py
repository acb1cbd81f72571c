# dynamics/region_tracker.py
"""
Validity regions of the linearized swing model and their chaining.

A region stays valid while
  - O1: the 1-norm of (1 - |v_j|/E_j, x_j dx_j + y_j dy_j, p_G/p_G0 - 1) stays <= eps
  - O2: the Ibus state stays within eps_o2 (relative) of the linearization point.
At a boundary the state is projected back onto |v_j| = E_j with zero radial
velocity and a fresh closed-form solution starts from there.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence, Tuple

import numpy as np
import scipy.linalg

from network.case_model import AugmentedNetwork, GeneratorDynamic
from network.errors import (
    ConfigurationError,
    InconsistentStartError,
    ReinitFailure,
    SingularJacobianError,
    SwinglineError,
)
from network.zip_loads import ExtendedLoadSet
from dynamics.he_linearizer import PADE_L, PADE_M, PadeLinearization, assemble_linearization, to_complex
from dynamics.swing_core import SwingSystem, build_swing_system, solve_region
from dynamics.trajectory import PiecewiseTrajectory, RegionSegment, angles_from_state, instability_index

logger = logging.getLogger(__name__)

DEFAULT_EPS = 0.01
CHECK_STEP = 1e-3
CROSSING_TOL = 1e-9
SAMPLE_DT = 1e-3
INIT_TOL = 1e-12
INIT_MAX_ITER = 25
VELOCITY_WEIGHT = 10.0
MAX_SEGMENTS = 5000


# ------------------ constraint ------------------

def constraint_value(
    w: np.ndarray, dw: np.ndarray, E: np.ndarray, p_g: float, p_g0: float
) -> float:
    """1-norm of the stacked O1 terms for one state."""
    if p_g0 == 0:
        raise ConfigurationError("reference generation p_G0 is zero; power drift is undefined")
    E = np.asarray(E, dtype=float)
    ni = E.shape[0]
    x, y = w[:ni], w[ni:]
    dx, dy = dw[:ni], dw[ni:]
    mag = np.abs(1.0 - np.sqrt(x**2 + y**2) / E)
    radial = np.abs(x * dx + y * dy)
    return float(mag.sum() + radial.sum() + abs(p_g / p_g0 - 1.0))


@dataclass
class ValidityConstraint:
    eps: float
    E: np.ndarray
    p_g0: float
    generation: Callable[[np.ndarray], np.ndarray]  # rows of w -> total generation per row
    w_lin: Optional[np.ndarray] = None
    eps_o2: float = math.inf

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError(f"eps must be positive, got {self.eps}")
        if self.p_g0 == 0:
            raise ConfigurationError("reference generation p_G0 is zero; power drift is undefined")

    def o1(self, W: np.ndarray, DW: np.ndarray) -> np.ndarray:
        W, DW = np.atleast_2d(W), np.atleast_2d(DW)
        ni = self.E.shape[0]
        x, y = W[:, :ni], W[:, ni:]
        dx, dy = DW[:, :ni], DW[:, ni:]
        mag = np.abs(1.0 - np.sqrt(x**2 + y**2) / self.E).sum(axis=1)
        radial = np.abs(x * dx + y * dy).sum(axis=1)
        power = np.abs(np.asarray(self.generation(W)) / self.p_g0 - 1.0)
        return mag + radial + power

    def o2(self, W: np.ndarray) -> np.ndarray:
        W = np.atleast_2d(W)
        if self.w_lin is None or not math.isfinite(self.eps_o2):
            return np.zeros(W.shape[0])
        return np.linalg.norm(W - self.w_lin, axis=1) / np.linalg.norm(self.w_lin)

    def __call__(self, W: np.ndarray, DW: np.ndarray) -> np.ndarray:
        return self.o1(W, DW)

    def margin(self, W: np.ndarray, DW: np.ndarray) -> np.ndarray:
        """Largest constraint use, 1.0 on the boundary."""
        use = self.o1(W, DW) / self.eps if math.isfinite(self.eps) else np.zeros(np.atleast_2d(W).shape[0])
        if math.isfinite(self.eps_o2):
            use = np.maximum(use, self.o2(W) / self.eps_o2)
        return use

    def trigger(self, w: np.ndarray, dw: np.ndarray) -> str:
        o1 = float(self.o1(w, dw)[0]) / self.eps if math.isfinite(self.eps) else 0.0
        o2 = float(self.o2(w)[0]) / self.eps_o2 if math.isfinite(self.eps_o2) else 0.0
        return "o2" if o2 > o1 else "o1"


def find_crossing(
    sol,
    constraint,
    t_max: float,
    step: float = CHECK_STEP,
    tol: float = CROSSING_TOL,
) -> Optional[float]:
    """
    Earliest t in (sol.t0, t_max] where constraint.margin reaches 1, by dense
    sampling then bisection; None when the boundary is never reached.
    """
    t0 = sol.t0
    w, dw = sol.evaluate_many(np.array([t0]))
    if constraint.margin(w, dw)[0] > 1.0 + 1e-9:
        raise InconsistentStartError(
            f"constraint already exceeded at region start (use {constraint.margin(w, dw)[0]:.4f})"
        )
    if t_max <= t0:
        return None
    n = max(1, int(math.ceil((t_max - t0) / step)))
    grid = np.minimum(t0 + step * np.arange(1, n + 1), t_max)
    W, DW = sol.evaluate_many(grid)
    hits = np.nonzero(constraint.margin(W, DW) >= 1.0)[0]
    if hits.size == 0:
        return None
    hi = float(grid[hits[0]])
    lo = float(grid[hits[0] - 1]) if hits[0] > 0 else t0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        w, dw = sol.evaluate_many(np.array([mid]))
        if constraint.margin(w, dw)[0] >= 1.0:
            hi = mid
        else:
            lo = mid
    return hi


# ------------------ consistent initialization ------------------

@dataclass(frozen=True, eq=False)
class ConsistentState:
    w: np.ndarray
    omega: np.ndarray
    rho: np.ndarray
    residual: float
    iterations: int
    mode: str = "both"


def _constraint_rows(w, omega, E, mode):
    ni = E.shape[0]
    x, y = w[:ni], w[ni:]
    dx, dy = omega[:ni], omega[ni:]
    eye = np.eye(ni)
    zero = np.zeros((ni, ni))
    g_mag = x**2 + y**2 - E**2
    g_rad = x * dx + y * dy
    J_mag = np.hstack([2 * x[:, None] * eye, 2 * y[:, None] * eye, zero, zero])
    J_rad = np.hstack([dx[:, None] * eye, dy[:, None] * eye, x[:, None] * eye, y[:, None] * eye])
    if mode == "position":
        return g_mag, J_mag
    if mode == "velocity":
        return g_rad, J_rad
    return np.concatenate([g_mag, g_rad]), np.vstack([J_mag, J_rad])


def consistent_init(
    w_guess: np.ndarray,
    omega_guess: np.ndarray,
    sys: SwingSystem,
    E: np.ndarray,
    mode: str = "both",
    velocity_weight: float = VELOCITY_WEIGHT,
    tol: float = INIT_TOL,
    max_iter: int = INIT_MAX_ITER,
) -> ConsistentState:
    """
    Project a guess onto |v_j| = E_j with zero radial velocity.

    Weighted minimum-norm Gauss-Newton over (w, omega); velocity moves are
    cheaper by `velocity_weight`. rho follows from the swing equation so the
    dynamic residual is zero by construction. `mode` restricts the projection
    to 'position' (magnitudes, moving w) or 'velocity' (radial speed, moving omega).
    """
    if mode not in ("both", "position", "velocity"):
        raise ConfigurationError(f"unknown projection mode '{mode}'")
    E = np.asarray(E, dtype=float)
    ni = E.shape[0]
    z = np.concatenate([np.asarray(w_guess, float), np.asarray(omega_guess, float)])
    if mode == "position":
        weights = np.concatenate([np.ones(2 * ni), np.zeros(2 * ni)])
    elif mode == "velocity":
        weights = np.concatenate([np.zeros(2 * ni), np.ones(2 * ni)])
    else:
        weights = np.concatenate([np.ones(2 * ni), np.full(2 * ni, velocity_weight)])

    for it in range(max_iter + 1):
        g, Jg = _constraint_rows(z[: 2 * ni], z[2 * ni :], E, mode)
        res = float(np.max(np.abs(g)))
        if res <= tol:
            w, omega = z[: 2 * ni], z[2 * ni :]
            rho = sys.acceleration(w, omega)
            logger.debug("Consistent state after %d iterations (|g| %.2e, mode %s)", it, res, mode)
            return ConsistentState(w=w, omega=omega, rho=rho, residual=res, iterations=it, mode=mode)
        if it == max_iter:
            break
        JS = Jg * weights[None, :]
        try:
            lam = scipy.linalg.solve(JS @ Jg.T, g, assume_a="pos")
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise SingularJacobianError(f"projection Jacobian is singular: {exc}") from exc
        if not np.all(np.isfinite(lam)):
            raise SingularJacobianError("projection Jacobian is singular")
        z = z - JS.T @ lam

    raise ReinitFailure(f"consistent initialization did not converge in {max_iter} iterations (|g| {res:.2e})")


# ------------------ segment chaining ------------------

class SegmentModel(Protocol):
    E: np.ndarray
    M: np.ndarray
    w_lin: np.ndarray
    network_solves: int
    km_ids: Tuple[int, ...]

    def system(self, w: np.ndarray, dw: np.ndarray) -> SwingSystem: ...

    def relinearize(self, w: np.ndarray) -> None: ...

    def generation(self, W: np.ndarray) -> np.ndarray: ...

    def reference_angle(self, W: np.ndarray) -> np.ndarray: ...

    def km_voltages(self, W: np.ndarray) -> np.ndarray: ...


class NetworkSegmentModel:
    """Segment model backed by a HE-Pade linearization of a fixed post-disturbance network."""

    def __init__(
        self,
        net: AugmentedNetwork,
        loads: ExtendedLoadSet,
        gens: Sequence[GeneratorDynamic],
        w0: np.ndarray,
        l: int = PADE_L,
        m: int = PADE_M,
    ):
        self.net = net
        self.loads = loads
        self.gens = tuple(gens)
        self.l, self.m = l, m
        self.E = np.array([g.E for g in gens])
        self.M = np.array([g.M for g in gens])
        self.network_solves = 0
        self.lin: PadeLinearization
        self.w_lin: np.ndarray
        self._ref_row = list(net.km_ids).index(net.gen_link[net.ibus_ids[0]].kbus)
        self.relinearize(w0)

    def relinearize(self, w: np.ndarray) -> None:
        self.w_lin = np.array(w, dtype=float)
        self.lin = assemble_linearization(self.net, self.loads, to_complex(self.w_lin), self.l, self.m)
        self.network_solves += 1
        logger.debug("Relinearized at |w| = %.4f", float(np.linalg.norm(self.w_lin)))

    def system(self, w: np.ndarray, dw: np.ndarray) -> SwingSystem:
        return build_swing_system(self.lin, self.gens, self.net, w, dw)

    def generation(self, W: np.ndarray) -> np.ndarray:
        return np.atleast_2d(self.lin.generation(np.atleast_2d(W))).sum(axis=1)

    @property
    def km_ids(self) -> Tuple[int, ...]:
        return self.lin.km_ids

    def km_voltages(self, W: np.ndarray) -> np.ndarray:
        return np.atleast_2d(self.lin.km_voltages(np.atleast_2d(W)))

    def reference_angle(self, W: np.ndarray) -> np.ndarray:
        return np.angle(self.km_voltages(W)[:, self._ref_row])


def chain_segments(
    model: SegmentModel,
    gens: Sequence[GeneratorDynamic],
    w0: np.ndarray,
    dw0: np.ndarray,
    t0: float,
    horizon: float,
    eps: float = DEFAULT_EPS,
    eps_o2: Optional[float] = None,
    policy: str = "auto",
    sample_dt: float = SAMPLE_DT,
    check_step: float = CHECK_STEP,
    init_mode: str = "both",
) -> PiecewiseTrajectory:
    """
    Closed-form segments from t0 to horizon. Each boundary crossing is
    followed by a consistent re-initialization; the swing system is rebuilt
    with fresh b0, and the linearization is rebuilt when O2 triggered
    (policy 'auto'), never ('never') or at every join ('always').
    """
    if policy not in ("auto", "never", "always"):
        raise ConfigurationError(f"unknown relinearize policy '{policy}'")
    if eps_o2 is None:
        eps_o2 = eps if policy == "auto" else math.inf
    traj = PiecewiseTrajectory(gens=tuple(gens), engine="analytic", km_ids=tuple(model.km_ids))
    solves_before = model.network_solves
    E, M = model.E, model.M
    delta_start, _ = angles_from_state(w0, dw0)

    w, dw = np.asarray(w0, float), np.asarray(dw0, float)
    reinit_iterations, reinit_residual = 0, 0.0
    if math.isfinite(eps):
        state = consistent_init(w, dw, model.system(w, dw), E, mode=init_mode)
        jump = float(np.linalg.norm(state.w - w))
        if jump > 0:
            traj.event(t0, "initial_projection", jump=jump)
        w, dw = state.w, state.omega
        reinit_iterations, reinit_residual = state.iterations, state.residual

    t = float(t0)
    join_jump = 0.0
    solves_at_join = model.network_solves
    for _ in range(MAX_SEGMENTS):
        if policy == "auto" and math.isfinite(eps_o2):
            if np.linalg.norm(w - model.w_lin) / np.linalg.norm(model.w_lin) > eps_o2:
                model.relinearize(w)
        relinearized = model.network_solves > solves_at_join
        sys = model.system(w, dw)
        sol = solve_region(sys, w, dw, t0=t)
        p_g0 = float(model.generation(w)[0])
        constraint = ValidityConstraint(
            eps=eps, E=E, p_g0=p_g0, generation=model.generation,
            w_lin=model.w_lin, eps_o2=eps_o2,
        )
        t_cross = find_crossing(sol, constraint, horizon, step=check_step) if (
            math.isfinite(eps) or math.isfinite(eps_o2)
        ) else None
        t_stop = horizon if t_cross is None else t_cross

        n = max(1, int(math.ceil((t_stop - t) / sample_dt)))
        ts = np.linspace(t, t_stop, n + 1)
        W, DW = sol.evaluate_many(ts)
        traj.extend(ts, W, DW, model.reference_angle(W), model.km_voltages(W))
        use = constraint.o1(W, DW) if math.isfinite(eps) else np.zeros(len(ts))

        def close(t_end: float, cause: str, trigger: Optional[str] = None) -> None:
            traj.segments.append(RegionSegment(
                t, t_end, "analytic", cause, trigger=trigger, w_start=w, w_lin=model.w_lin,
                solution=sol, max_constraint=float(np.max(use)), join_jump=join_jump,
                reinit_iterations=reinit_iterations, reinit_residual=reinit_residual,
                relinearized=relinearized,
            ))

        delta = np.unwrap(traj.rotor_angles(), axis=0)
        hit = instability_index(delta, M, delta_start)
        if hit is not None:
            t_hit = float(traj.t[hit])
            traj.truncate(hit + 1)
            close(t_hit, "instability")
            traj.event(t_hit, "instability")
            break

        if t_cross is None:
            close(horizon, "horizon")
            break

        w_end, dw_end = sol.evaluate(t_cross)
        trigger = constraint.trigger(w_end, dw_end)
        close(t_cross, "boundary", trigger)
        solves_at_join = model.network_solves
        try:
            state = consistent_init(w_end, dw_end, sys, E, mode=init_mode)
        except SwinglineError as exc:
            traj.network_solves = model.network_solves - solves_before
            raise ReinitFailure(f"re-initialization failed at t={t_cross:.6f}: {exc}", partial=traj) from exc
        join_jump = float(np.linalg.norm(state.w - w_end))
        reinit_iterations, reinit_residual = state.iterations, state.residual
        traj.event(t_cross, "reinit", trigger=trigger, jump=join_jump, iterations=state.iterations)
        if join_jump > eps * float(np.max(E)) + 1e-8:
            logger.warning("Join at t=%.4f moved the state by %.3e", t_cross, join_jump)
        if t_cross - t <= CROSSING_TOL:
            traj.network_solves = model.network_solves - solves_before
            raise ReinitFailure(f"validity region collapsed at t={t_cross:.6f}", partial=traj)

        if policy == "always" or (policy == "auto" and trigger == "o2"):
            model.relinearize(state.w)
        w, dw, t = state.w, state.omega, t_cross
    else:
        traj.network_solves = model.network_solves - solves_before
        raise ReinitFailure(f"more than {MAX_SEGMENTS} regions before the horizon", partial=traj)

    traj.network_solves = model.network_solves - solves_before
    logger.info("Analytic engine: %d regions up to t=%.3f s", len(traj.segments), traj.t_end)
    return traj
