# runner/executor.py
import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np

from network.case_model import AugmentedNetwork, GeneratorDynamic
from network.errors import ConfigurationError, EngineFailure, SwinglineError
from network.qpf import QPF_TOL
from network.zip_loads import RESPLIT_THRESHOLD, ExtendedLoadSet
from dynamics.he_linearizer import PADE_L, PADE_M
from dynamics.reference_sims import DT_MIN, HTMS_TERMS, TDS_DT, TdsConfig, htms_run, tds_run
from dynamics.region_tracker import CHECK_STEP, DEFAULT_EPS, SAMPLE_DT, NetworkSegmentModel, chain_segments
from dynamics.trajectory import PiecewiseTrajectory, state_from_angles

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EngineRequest:
    """Everything one engine needs to continue a trajectory on a fixed network."""

    engine: str
    net: AugmentedNetwork
    loads: ExtendedLoadSet
    gens: Sequence[GeneratorDynamic]
    delta0: np.ndarray
    speed0: np.ndarray
    t0: float
    horizon: float
    eps: float = DEFAULT_EPS
    eps_o2: Optional[float] = None
    policy: str = "auto"
    l: int = PADE_L
    m: int = PADE_M
    sample_dt: float = SAMPLE_DT
    check_step: float = CHECK_STEP
    init_mode: str = "both"
    dt: float = TDS_DT
    damping: str = "on-speed"
    htms_terms: int = HTMS_TERMS
    dt_min: float = DT_MIN
    tol: float = QPF_TOL
    resplit_threshold: float = RESPLIT_THRESHOLD
    delta_eq: Optional[np.ndarray] = None
    v_guess: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigurationError(f"unknown engine '{self.engine}'")
        if not self.horizon > self.t0:
            raise ConfigurationError(f"horizon {self.horizon} must lie after the start time {self.t0}")

    @classmethod
    def from_settings(cls, engine: str, settings, **state: Any) -> "EngineRequest":
        """Numerical options from a Settings tree; `state` holds net/loads/gens/start/horizon."""
        options = dict(
            eps=settings.region.eps,
            eps_o2=settings.region.eps_o2,
            policy=settings.region.policy,
            l=settings.linearization.l,
            m=settings.linearization.m,
            sample_dt=settings.region.sample_dt,
            check_step=settings.region.check_step,
            init_mode=settings.region.init_mode,
            dt=settings.tds.dt,
            damping=settings.tds.damping,
            htms_terms=settings.htms.terms,
            dt_min=settings.htms.dt_min,
            tol=settings.qpf.tol,
            resplit_threshold=settings.loads.resplit_threshold,
        )
        options.update({k: v for k, v in state.items() if v is not None or k in ("delta_eq", "v_guess")})
        return cls(engine=engine, **options)

    def tds_config(self) -> TdsConfig:
        return TdsConfig(
            dt=self.dt, horizon=self.horizon, tol=self.tol,
            damping=self.damping, resplit_threshold=self.resplit_threshold,
        )

    def handoff(self, engine: str, t0: float, delta0: np.ndarray, speed0: np.ndarray) -> "EngineRequest":
        return replace(self, engine=engine, t0=t0, delta0=delta0, speed0=speed0)


# --------- engines ---------
def _run_analytic(req: EngineRequest) -> PiecewiseTrajectory:
    w0, dw0 = state_from_angles(req.gens, req.delta0, req.speed0)
    model = NetworkSegmentModel(req.net, req.loads, req.gens, w0, req.l, req.m)
    traj = chain_segments(
        model, req.gens, w0, dw0, req.t0, req.horizon,
        eps=req.eps, eps_o2=req.eps_o2, policy=req.policy,
        sample_dt=req.sample_dt, check_step=req.check_step, init_mode=req.init_mode,
    )
    # the initial linearization is part of the engine's cost
    traj.network_solves = model.network_solves
    return traj


def _run_tds(req: EngineRequest) -> PiecewiseTrajectory:
    return tds_run(
        req.net, req.loads, req.gens, req.delta0, req.speed0, req.tds_config(),
        t0=req.t0, delta_eq=req.delta_eq, v_guess=req.v_guess,
    )


def _run_htms(req: EngineRequest) -> PiecewiseTrajectory:
    return htms_run(
        req.net, req.loads, req.gens, req.delta0, req.speed0,
        m=req.htms_terms, horizon=req.horizon, t0=req.t0, damping=req.damping,
        delta_eq=req.delta_eq, tol=req.tol, sample_dt=req.sample_dt, dt_min=req.dt_min,
    )


ENGINES: Dict[str, Callable[[EngineRequest], PiecewiseTrajectory]] = {
    "analytic": _run_analytic,
    "tds": _run_tds,
    "htms": _run_htms,
}


# --------- main entrypoint ---------
def run_engine(req: EngineRequest) -> PiecewiseTrajectory:
    """
    Run one engine. Failures that leave usable work behind (re-initialization,
    radius collapse) come back as EngineFailure carrying the partial trajectory;
    QPF failures inside TDS/HTMS are already recorded on the trajectory itself.
    """
    eps_note = f", eps={req.eps:g}" if req.engine == "analytic" and math.isfinite(req.eps) else ""
    logger.info("Engine %s from t=%.4f to %.4f s%s", req.engine, req.t0, req.horizon, eps_note)
    try:
        traj = ENGINES[req.engine](req)
    except SwinglineError as exc:
        partial = getattr(exc, "partial", None)
        raise EngineFailure(str(exc), engine=req.engine, partial=partial) from exc
    logger.info("Engine %s: %d segments, %d network solves, ended at t=%.4f",
                req.engine, len(traj.segments), traj.network_solves, traj.t_end)
    return traj
