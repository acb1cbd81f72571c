# dynamics/test_region_tracker.py
"""
Validity regions and segment chaining.

 Group 1: constraint
   1. zero on a consistent state, magnitude drift counted per machine
   2. bad eps / zero reference generation are rejected
   3. crossing time of a linear drift, no crossing before t_max, bad start

 Group 2: consistent initialization
   4. projection lands on |v| = E with zero radial speed
   5. position-only and velocity-only modes leave the other half alone
   6. singular Jacobian and non-convergence are reported

 Group 3: chaining
   7. spring-pulled rotation: contiguous regions, projected joins, bounded use;
      the segment log carries re-init counts and the frame carries bus voltages
   8. eps = inf gives exactly one region
   9. 9-bus equilibrium stays put; 9-bus outage runs to the horizon
"""
import math
import os

import numpy as np
import pytest

from network.case_model import GeneratorDynamic, network_from_case, parse_case
from network.errors import ConfigurationError, InconsistentStartError, ReinitFailure, SingularJacobianError
from network.qpf import ibus_voltages, solve_operating_point
from dynamics.he_linearizer import to_real
from dynamics.region_tracker import (
    NetworkSegmentModel,
    ValidityConstraint,
    chain_segments,
    consistent_init,
    constraint_value,
    find_crossing,
)
from dynamics.swing_core import SwingSystem

CASES_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "cases")

GEN = GeneratorDynamic(1, M=0.1, D=0.05, E=1.0, xd_t=0.1, p_mech=1.0)


def _flat_generation(W):
    return np.ones(np.atleast_2d(W).shape[0])


class _Drift:
    """w(t) = (start + rate t, 0) for one machine."""

    def __init__(self, start: float, rate: float):
        self.t0 = 0.0
        self.start, self.rate = start, rate

    def evaluate_many(self, ts):
        ts = np.atleast_1d(ts)
        W = np.column_stack([self.start + self.rate * ts, np.zeros_like(ts)])
        return W, np.zeros_like(W)


class _SpringModel:
    """One machine pulled back to (1, 0) by a linear spring."""

    def __init__(self):
        self.E = np.array([1.0])
        self.M = np.array([GEN.M])
        self.w_lin = np.array([1.0, 0.0])
        self.network_solves = 0
        self.km_ids = (2,)
        self._sys = SwingSystem.from_matrices(np.diag([4.0, 5.0]), np.array([-4.0, 0.0]), np.array([0.5, 0.5]))

    def system(self, w, dw):
        return self._sys

    def relinearize(self, w):
        self.w_lin = np.array(w, dtype=float)
        self.network_solves += 1

    def generation(self, W):
        return _flat_generation(W)

    def reference_angle(self, W):
        return np.zeros(np.atleast_2d(W).shape[0])

    def km_voltages(self, W):
        W = np.atleast_2d(W)
        return 0.5 * (W[:, :1] + 1j * W[:, 1:])


def _sys2() -> SwingSystem:
    return SwingSystem.from_matrices(2.0 * np.eye(4), np.zeros(4), np.full(4, 0.5))


# ═══ Group 1: constraint ═══

def test_constraint_terms():
    E = np.array([1.0, 1.05])
    w = np.array([1.0, 0.0, 0.0, 1.05])
    dw = np.array([0.0, -1.05 * 0.3, 0.0, 0.0])
    assert constraint_value(w, dw, E, 2.0, 2.0) == pytest.approx(0.0, abs=1e-15)
    assert constraint_value(1.1 * w, np.zeros(4), E, 2.0, 2.0) == pytest.approx(0.2)
    assert constraint_value(w, dw, E, 2.1, 2.0) == pytest.approx(0.05)


def test_constraint_arguments_are_checked():
    with pytest.raises(ConfigurationError):
        ValidityConstraint(eps=0.0, E=np.ones(1), p_g0=1.0, generation=_flat_generation)
    with pytest.raises(ConfigurationError):
        ValidityConstraint(eps=0.01, E=np.ones(1), p_g0=0.0, generation=_flat_generation)
    with pytest.raises(ConfigurationError):
        constraint_value(np.ones(2), np.zeros(2), np.ones(1), 1.0, 0.0)


def test_crossing_of_linear_drift():
    c = ValidityConstraint(eps=0.005, E=np.ones(1), p_g0=1.0, generation=_flat_generation)
    assert find_crossing(_Drift(1.0, 0.01), c, 2.0) == pytest.approx(0.5, abs=1e-8)
    assert find_crossing(_Drift(1.0, 0.01), c, 0.3) is None


def test_o2_crossing_and_trigger():
    c = ValidityConstraint(
        eps=1.0, E=np.ones(1), p_g0=1.0, generation=_flat_generation, w_lin=np.array([1.0, 0.0]), eps_o2=0.002
    )
    t = find_crossing(_Drift(1.0, 0.01), c, 2.0)
    assert t == pytest.approx(0.2, abs=1e-8)
    w, dw = _Drift(1.0, 0.01).evaluate_many(np.array([t]))
    assert c.trigger(w[0], dw[0]) == "o2"


def test_start_outside_region_is_rejected():
    c = ValidityConstraint(eps=0.005, E=np.ones(1), p_g0=1.0, generation=_flat_generation)
    with pytest.raises(InconsistentStartError):
        find_crossing(_Drift(1.1, 0.0), c, 1.0)


# ═══ Group 2: consistent initialization ═══

def test_projection_is_consistent():
    E = np.array([1.0, 1.05])
    w = np.array([1.02, 0.1, 0.05, 1.0])
    omega = np.array([0.01, -0.3, 0.2, 0.02])
    state = consistent_init(w, omega, _sys2(), E)
    x, y = state.w[:2], state.w[2:]
    np.testing.assert_allclose(np.hypot(x, y), E, atol=1e-10)
    np.testing.assert_allclose(x * state.omega[:2] + y * state.omega[2:], 0.0, atol=1e-10)
    np.testing.assert_allclose(state.rho, _sys2().acceleration(state.w, state.omega))
    assert state.residual <= 1e-12


def test_consistent_guess_needs_no_iteration():
    E = np.array([1.0])
    state = consistent_init(np.array([0.6, 0.8]), np.array([-0.8, 0.6]), SwingSystem.from_matrices(np.eye(2), np.zeros(2), np.ones(2)), E)
    assert state.iterations == 0


def test_single_sided_projection_modes():
    E = np.array([1.0, 1.05])
    w = np.array([1.02, 0.1, 0.05, 1.0])
    omega = np.array([0.01, -0.3, 0.2, 0.02])
    pos = consistent_init(w, omega, _sys2(), E, mode="position")
    np.testing.assert_array_equal(pos.omega, omega)
    np.testing.assert_allclose(np.hypot(pos.w[:2], pos.w[2:]), E, atol=1e-10)
    vel = consistent_init(w, omega, _sys2(), E, mode="velocity")
    np.testing.assert_array_equal(vel.w, w)
    np.testing.assert_allclose(w[:2] * vel.omega[:2] + w[2:] * vel.omega[2:], 0.0, atol=1e-10)
    with pytest.raises(ConfigurationError):
        consistent_init(w, omega, _sys2(), E, mode="radial")


def test_projection_failures():
    E = np.array([1.0, 1.0])
    with pytest.raises(SingularJacobianError):
        consistent_init(np.zeros(4), np.zeros(4), _sys2(), E)
    with pytest.raises(ReinitFailure):
        consistent_init(np.array([1.2, 0.0, 0.0, 0.9]), np.zeros(4), _sys2(), E, max_iter=0)


# ═══ Group 3: chaining ═══

def test_spring_pulled_rotation_is_chained():
    model = _SpringModel()
    traj = chain_segments(model, [GEN], np.array([1.0, 0.0]), np.array([0.0, 0.5]), 0.0, 2.0, eps=0.002, policy="never")
    assert len(traj.segments) >= 2
    assert traj.t_end == pytest.approx(2.0)
    for before, after in zip(traj.segments, traj.segments[1:]):
        assert after.t_start == pytest.approx(before.t_end)
        assert before.exit_cause == "boundary" and before.trigger == "o1"
        assert after.join_jump <= 0.002 * 1.0 + 1e-8
    assert all(s.max_constraint <= 0.002 * (1 + 1e-6) for s in traj.segments)
    assert traj.segments[-1].exit_cause == "horizon"
    assert any(e["kind"] == "reinit" for e in traj.events)
    assert model.network_solves == 0
    assert not any(s.relinearized for s in traj.segments)
    assert all(s.reinit_iterations >= 1 and s.reinit_residual <= 1e-12 for s in traj.segments[1:])

    log = traj.segment_frame()
    assert list(log["segment_id"]) == list(range(1, len(traj.segments) + 1))
    assert {"reinit_iterations", "reinit_residual", "relinearized"} <= set(log.columns)
    frame = traj.to_frame()
    np.testing.assert_allclose(frame["vx_2"], 0.5 * frame["ex_1"])
    np.testing.assert_allclose(frame["vy_2"], 0.5 * frame["ey_1"])


def test_always_policy_relinearizes_at_every_join():
    model = _SpringModel()
    traj = chain_segments(model, [GEN], np.array([1.0, 0.0]), np.array([0.0, 0.5]), 0.0, 1.0, eps=0.002, policy="always")
    assert traj.network_solves == len(traj.segments) - 1
    assert [s.relinearized for s in traj.segments] == [False] + [True] * (len(traj.segments) - 1)
    assert list(traj.segment_frame()["relinearized"]) == [s.relinearized for s in traj.segments]


def test_infinite_eps_gives_one_region():
    traj = chain_segments(_SpringModel(), [GEN], np.array([1.0, 0.0]), np.array([0.0, 0.5]), 0.0, 1.5, eps=math.inf)
    assert len(traj.segments) == 1
    assert traj.segments[0].exit_cause == "horizon"
    assert not traj.events


def test_unknown_policy_is_rejected():
    with pytest.raises(ConfigurationError):
        chain_segments(_SpringModel(), [GEN], np.array([1.0, 0.0]), np.zeros(2), 0.0, 1.0, policy="sometimes")


@pytest.fixture(scope="module")
def ieee9():
    with open(os.path.join(CASES_DIR, "ieee9.case"), "r", encoding="utf-8") as f:
        case = parse_case(f.read(), "ieee9")
    net = network_from_case(case)
    return net, solve_operating_point(net, case.zips)


def test_equilibrium_stays_in_one_region(ieee9):
    net, op = ieee9
    w0 = to_real(ibus_voltages(op.gens, op.delta))
    model = NetworkSegmentModel(net, op.loads, op.gens, w0)
    traj = chain_segments(model, op.gens, w0, np.zeros_like(w0), 0.0, 1.0)
    assert len(traj.segments) == 1
    assert traj.segments[0].exit_cause == "horizon"
    assert traj.segments[0].max_constraint < 1e-6
    assert np.max(np.abs(traj.w - w0)) < 1e-4
    assert traj.network_solves == 0


def test_outage_runs_to_horizon(ieee9):
    net, op = ieee9
    post = net.rebuild(branches=[b for b in net.base_branches if {b.from_bus, b.to_bus} != {5, 7}])
    w0 = to_real(ibus_voltages(op.gens, op.delta))
    model = NetworkSegmentModel(post, op.loads, op.gens, w0)
    traj = chain_segments(model, op.gens, w0, np.zeros_like(w0), 0.0, 1.0, eps=0.01)
    assert traj.t_end == pytest.approx(1.0)
    assert np.all(np.isfinite(traj.w))
    assert traj.segments[-1].exit_cause == "horizon"
    E = np.array([g.E for g in op.gens])
    for seg in traj.segments[1:]:
        mag = np.hypot(seg.w_start[:3], seg.w_start[3:])
        np.testing.assert_allclose(mag, E, atol=1e-10)
