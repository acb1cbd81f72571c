# runner/verifier.py
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from network.errors import AssessmentError
from dynamics.trajectory import PiecewiseTrajectory, instability_index

logger = logging.getLogger(__name__)

STABLE = "stable"
UNSTABLE = "unstable"
UNDETERMINED = "undetermined-by-horizon"

AGREEMENT_TOL = 0.05
COST_RATIO = 10.0
HORIZON_SLACK = 1e-9


@dataclass
class StabilityVerdict:
    status: str
    decision_time: float
    segments: int
    max_excursion: float
    engine: str
    network_solves: int = 0
    failure: str = ""
    agreement: Dict[str, Any] = field(default_factory=dict)

    @property
    def stable(self) -> bool:
        return self.status == STABLE

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ---------- primitive checks ----------
def instability_time(traj: PiecewiseTrajectory) -> Optional[float]:
    """Earliest loss of synchronism, from the engines' own logs or the stitched angle history."""
    times = [e["t"] for e in traj.events if e["kind"] == "instability"]
    times += [s.t_end for s in traj.segments if s.exit_cause == "instability"]
    if len(traj.t):
        hit = instability_index(traj.rotor_angles(), traj.inertia)
        if hit is not None:
            times.append(float(traj.t[hit]))
    return min(times) if times else None


def reached_horizon(traj: PiecewiseTrajectory, horizon: float) -> bool:
    return bool(len(traj.t)) and traj.t_end >= horizon - HORIZON_SLACK


# ---------- verdicts ----------
def verify_run(traj: PiecewiseTrajectory, horizon: float) -> StabilityVerdict:
    """
    Stability verdict for one (possibly stitched) trajectory:
      - unstable: instability detected anywhere before the horizon
      - stable: horizon reached without instability
      - undetermined-by-horizon: the run stopped early without an instability
    """
    own = [s for s in traj.segments if s.engine == traj.engine]
    excursion = max((s.max_constraint for s in traj.segments), default=0.0)
    t_bad = instability_time(traj)

    if t_bad is not None:
        status, decided = UNSTABLE, t_bad
    elif reached_horizon(traj, horizon) and not traj.failed:
        status, decided = STABLE, traj.t_end
    else:
        status, decided = UNDETERMINED, traj.t_end

    verdict = StabilityVerdict(
        status=status,
        decision_time=float(decided),
        segments=len(own),
        max_excursion=float(excursion),
        engine=traj.engine,
        network_solves=traj.network_solves,
        failure=traj.failure,
    )
    logger.info("Verdict %s: %s at t=%.4f (%d segments)", traj.engine, status, decided, len(own))
    return verdict


def angle_deviation(traj: PiecewiseTrajectory, reference: PiecewiseTrajectory) -> pd.DataFrame:
    """
    Per-machine max |COI angle - reference COI angle| on the reference's time grid
    (restricted to the span both runs cover), divided by the reference's largest
    COI excursion over all machines.
    """
    if not len(traj.t) or not len(reference.t):
        raise AssessmentError("cannot compare an empty trajectory")
    if traj.labels != reference.labels:
        raise AssessmentError(f"machine sets differ: {traj.labels} vs {reference.labels}")

    t_ref = reference.t
    span = (t_ref >= traj.t[0] - HORIZON_SLACK) & (t_ref <= traj.t_end + HORIZON_SLACK)
    times = t_ref[span]
    ref = reference.coi_angles()[span]
    got = traj.sample(times)

    scale = float(np.max(np.abs(ref))) if ref.size else 0.0
    dev = np.max(np.abs(got - ref), axis=0) if ref.size else np.zeros(len(traj.labels))
    rel = dev / scale if scale > 0 else np.where(dev > 0, math.inf, 0.0)
    return pd.DataFrame({
        "machine": traj.labels,
        "max_abs_deviation": dev,
        "relative_deviation": rel,
        "reference_excursion": scale,
    })


def verify_agreement(
    traj: PiecewiseTrajectory, reference: PiecewiseTrajectory, tol: float = AGREEMENT_TOL
) -> Dict[str, Any]:
    frame = angle_deviation(traj, reference)
    worst = float(frame["relative_deviation"].max())
    ok = worst <= tol
    if not ok:
        logger.warning("%s vs %s: worst relative COI deviation %.3g exceeds %.3g",
                       traj.engine, reference.engine, worst, tol)
    return {"within_tol": ok, "worst_relative": worst, "tol": tol, "table": frame}


def verify_cost(traj: PiecewiseTrajectory, reference: PiecewiseTrajectory, ratio: float = COST_RATIO) -> bool:
    """True when `reference` needed at least `ratio` times as many network solves."""
    return reference.network_solves >= ratio * max(traj.network_solves, 1)
