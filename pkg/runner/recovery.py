# runner/recovery.py
import logging
import math
from dataclasses import replace
from typing import Any, Dict, Optional

from network.errors import EngineFailure
from dynamics.trajectory import PiecewiseTrajectory
from runner.executor import EngineRequest, run_engine

logger = logging.getLogger(__name__)

HANDOFF_ENGINE = "tds"

# ------------------ fallbacks ------------------


def _usable(partial: Optional[PiecewiseTrajectory], req: EngineRequest) -> bool:
    return partial is not None and len(partial.t) > 0 and partial.t_end < req.horizon


def _handoff(req: EngineRequest, partial: Optional[PiecewiseTrajectory]) -> PiecewiseTrajectory:
    """Finish the remaining horizon with TDS from the last good state of `partial`."""
    if not _usable(partial, req):
        logger.warning("No usable partial %s trajectory; TDS restarts from t=%.4f", req.engine, req.t0)
        tds = run_engine(req.handoff(HANDOFF_ENGINE, req.t0, req.delta0, req.speed0))
        tds.event(req.t0, "handoff", source=req.engine)
        return tds

    t_hand = partial.t_end
    delta = partial.rotor_angles()[-1]
    speed = partial.speed_deviation()[-1]
    logger.warning("Handing %s over to TDS at t=%.4f", req.engine, t_hand)
    if partial.segments:
        partial.segments[-1] = replace(partial.segments[-1], exit_cause="handoff")
    partial.failed, partial.failure = False, ""
    partial.event(t_hand, "handoff", source=req.engine)
    tds = run_engine(req.handoff(HANDOFF_ENGINE, t_hand, delta, speed))
    return partial.concat(tds)


# ------------------ recovery core ------------------

def recover_engine(
    req: EngineRequest,
    failure: EngineFailure,
    attempt: int = 1,
    max_attempts: int = 2,
) -> Dict[str, Any]:
    """
    Attempt to recover a failed engine run by:
      1) analytic engine: re-running with eps halved, up to max_attempts times
      2) otherwise (or once attempts are used up): TDS over the remaining horizon
         from the last state the failed run reached
    Returns: {"recovered": bool, "attempts": int, "handoff": bool, "trajectory": <trajectory or None>}
    """
    if req.engine == "analytic" and math.isfinite(req.eps) and attempt <= max_attempts:
        retry = replace(req, eps=req.eps / 2.0)
        logger.warning("Analytic engine failed (%s); retry %d/%d with eps=%g",
                       failure, attempt, max_attempts, retry.eps)
        try:
            traj = run_engine(retry)
            traj.event(req.t0, "recovered", eps=retry.eps, attempts=attempt)
            return {"recovered": True, "attempts": attempt, "handoff": False, "trajectory": traj}
        except EngineFailure as exc:
            return recover_engine(retry, exc, attempt=attempt + 1, max_attempts=max_attempts)

    try:
        traj = _handoff(req, failure.partial)
    except EngineFailure as exc:
        logger.error("TDS handoff failed as well: %s", exc)
        partial = failure.partial
        if partial is not None:
            partial.fail(str(failure))
        return {"recovered": False, "attempts": attempt - 1, "handoff": True, "trajectory": partial}
    return {"recovered": not traj.failed, "attempts": attempt - 1, "handoff": True, "trajectory": traj}
