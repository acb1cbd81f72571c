# runner/test_verifier.py
"""
Verdicts and engine agreement.

 Group 1: verdicts
   1. horizon reached quietly → stable; largest constraint excursion reported
   2. logged or observed loss of synchronism → unstable at its time
   3. early stop → undetermined-by-horizon

 Group 2: agreement
   4. scaled swing gives the expected relative deviation per machine
   5. tolerance check, cost ratio, mismatched or empty runs
"""
import math

import numpy as np
import pytest

from network.case_model import GeneratorDynamic
from network.errors import AssessmentError
from dynamics.trajectory import PiecewiseTrajectory, RegionSegment, state_from_angles
from runner.verifier import (
    STABLE,
    UNDETERMINED,
    UNSTABLE,
    angle_deviation,
    verify_agreement,
    verify_cost,
    verify_run,
)

GENS = (
    GeneratorDynamic(1, M=0.1, D=0.1, E=1.05, xd_t=0.1, p_mech=0.5),
    GeneratorDynamic(2, M=0.03, D=0.03, E=1.0, xd_t=0.1, p_mech=0.5),
)


def _run(angle_of_t, t_end=1.0, dt=0.01, engine="analytic", gens=GENS) -> PiecewiseTrajectory:
    traj = PiecewiseTrajectory(gens=gens, engine=engine)
    for t in np.arange(0.0, t_end + dt / 2, dt):
        delta = np.asarray(angle_of_t(t), dtype=float)
        w, dw = state_from_angles(gens, delta, np.zeros(len(gens)))
        traj.append(float(t), w, dw)
    traj.segments.append(RegionSegment(0.0, traj.t_end, engine, "horizon", max_constraint=0.004))
    return traj


def _swing(scale=1.0):
    return lambda t: [0.0, scale * 0.5 * math.sin(2 * math.pi * t)]


# ═══ Group 1: verdicts ═══

def test_quiet_run_is_stable():
    traj = _run(_swing())
    traj.segments.insert(0, RegionSegment(0.0, 0.0, "tds", "handoff", max_constraint=0.0))
    traj.segments.append(RegionSegment(traj.t_end, traj.t_end, "analytic", "horizon", max_constraint=0.009))
    verdict = verify_run(traj, horizon=1.0)
    assert verdict.status == STABLE and verdict.stable
    assert verdict.decision_time == pytest.approx(1.0)
    assert verdict.segments == 2
    assert verdict.max_excursion == pytest.approx(0.009)
    assert verdict.to_dict()["status"] == "stable"


def test_loss_of_synchronism_is_unstable():
    logged = _run(_swing())
    logged.event(0.4, "instability")
    verdict = verify_run(logged, horizon=1.0)
    assert verdict.status == UNSTABLE
    assert verdict.decision_time == pytest.approx(0.4)

    # machine 2 runs away at 5 rad/s: |COI angle| = 0.1/0.13 * 5 t passes pi near t = 0.82
    drifting = _run(lambda t: [0.0, 5.0 * t], t_end=2.0)
    verdict = verify_run(drifting, horizon=2.0)
    assert verdict.status == UNSTABLE
    assert 0.80 <= verdict.decision_time <= 0.84


def test_early_stop_is_undetermined():
    short = _run(_swing(), t_end=0.5)
    short.fail("QPF failed at t=0.5")
    verdict = verify_run(short, horizon=1.0)
    assert verdict.status == UNDETERMINED
    assert verdict.decision_time == pytest.approx(0.5)
    assert "QPF" in verdict.failure

    unfinished = _run(_swing(), t_end=0.5)
    assert verify_run(unfinished, horizon=1.0).status == UNDETERMINED


# ═══ Group 2: agreement ═══

def test_scaled_swing_deviation():
    reference = _run(_swing(), engine="tds")
    frame = angle_deviation(_run(_swing(1.02)), reference)
    assert list(frame["machine"]) == ["1", "2"]
    np.testing.assert_allclose(frame["relative_deviation"], [0.02 * 0.03 / 0.1, 0.02], rtol=1e-6)
    assert frame["reference_excursion"].iloc[0] == pytest.approx(0.5 * 0.1 / 0.13, rel=1e-6)

    same = angle_deviation(reference, reference)
    assert np.all(same["max_abs_deviation"] == 0.0)


def test_agreement_and_cost_checks():
    reference = _run(_swing(), engine="tds")
    assert verify_agreement(_run(_swing(1.02)), reference)["within_tol"]
    loose = verify_agreement(_run(_swing(1.1)), reference)
    assert not loose["within_tol"]
    assert loose["worst_relative"] == pytest.approx(0.1, rel=1e-6)

    cheap, costly = _run(_swing()), _run(_swing(), engine="tds")
    cheap.network_solves, costly.network_solves = 10, 100
    assert verify_cost(cheap, costly)
    cheap.network_solves = 11
    assert not verify_cost(cheap, costly)

    other = _run(lambda t: [0.0], gens=GENS[:1])
    with pytest.raises(AssessmentError):
        angle_deviation(other, reference)
    with pytest.raises(AssessmentError):
        angle_deviation(PiecewiseTrajectory(gens=GENS, engine="analytic"), reference)
