# dynamics/test_reference_sims.py
"""
TDS and HTMS baselines.

 Group 1: modified Euler
   1. zero net torque keeps the state constant
   2. constant torque reproduces delta0 + a t^2 / 2
   3. global error on a linear oscillator shrinks with order two
   4. speed and angle damping act as configured

 Group 2: TDS on networks
   5. 9-bus operating point is preserved; two QPF solves per step
   6. unsolvable network truncates the run with a failure marker

 Group 3: McLaurin recursion
   7. constant torque, force-free motion, single term
   8. net-power scaling scales every coefficient after the first
   9. convergence radius of geometric and terminating series
  10. truncation error of exp(t) cos(3t) falls as terms are added

 Group 4: HTMS runs
  11. force-free system covered by one expansion
  12. two machines keep their own series over several expansions
  13. 9-bus outage: guarded steps and agreement with TDS
"""
import math
import os

import numpy as np
import pytest

from network.case_model import (
    BranchRecord,
    BusKind,
    BusRecord,
    GeneratorDynamic,
    augment_with_ibus,
    network_from_case,
    parse_case,
)
from network.errors import ConfigurationError
from network.qpf import solve_operating_point
from network.zip_loads import ZipLoadSpec, build_extended_loads
from dynamics.reference_sims import (
    McLaurinState,
    TdsConfig,
    convergence_radius,
    evaluate_series,
    htms_coefficients,
    htms_integrate,
    htms_run,
    swing_rhs,
    tds_integrate,
    tds_run,
)

CASES_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "cases")


class _FixedOracle:
    """Power coefficients that do not depend on the angle series."""

    def __init__(self, coeffs):
        self.p_elec = [np.atleast_1d(np.asarray(coeffs[0], dtype=float))]
        self._rest = list(coeffs[1:])
        self.qpf_solves = 0

    def next_order(self, delta_k):
        value = self._rest.pop(0) if self._rest else 0.0
        out = np.broadcast_to(np.asarray(value, dtype=float), np.shape(delta_k)).copy()
        self.p_elec.append(out)
        return out


def _gen(M=1.0, D=0.0, p_mech=0.5):
    return GeneratorDynamic(1, M=M, D=D, E=1.0, xd_t=0.1, p_mech=p_mech)


# ═══ Group 1: modified Euler ═══

def test_config_is_validated():
    with pytest.raises(ConfigurationError):
        TdsConfig(dt=0.0)
    with pytest.raises(ConfigurationError):
        TdsConfig(damping="on-flux")


def test_zero_torque_is_preserved():
    gen = _gen(D=0.3)
    ts, delta, speed = tds_integrate(lambda d: np.array([0.5]), [gen], np.array([0.2]), np.zeros(1), TdsConfig(horizon=1.0))
    assert len(ts) == 1001
    np.testing.assert_array_equal(delta, 0.2)
    np.testing.assert_array_equal(speed, 0.0)


def test_constant_torque_closed_form():
    gen = _gen(M=2.0, p_mech=1.0)
    a = (1.0 - 0.4) / 2.0
    ts, delta, _ = tds_integrate(lambda d: np.array([0.4]), [gen], np.array([0.1]), np.zeros(1), TdsConfig(dt=0.01, horizon=2.0))
    np.testing.assert_allclose(delta[:, 0], 0.1 + 0.5 * a * ts**2, atol=1e-12)


def test_second_order_convergence():
    # M delta'' = -k delta, exact delta0 cos(sqrt(k/M) t)
    gen = _gen(M=1.0, p_mech=0.0)
    k = 4.0
    errors = []
    for dt in (0.01, 0.005, 0.0025):
        ts, delta, _ = tds_integrate(
            lambda d: k * d, [gen], np.array([0.3]), np.zeros(1), TdsConfig(dt=dt, horizon=1.0), stop_on_instability=False
        )
        errors.append(abs(delta[-1, 0] - 0.3 * math.cos(2.0)))
    for coarse, fine in zip(errors, errors[1:]):
        assert 1.8 <= math.log2(coarse / fine) <= 2.2


def test_damping_modes():
    gen = _gen(M=2.0, D=0.4, p_mech=0.5)
    y = np.array([0.3, 0.1])
    on_speed = swing_rhs(lambda d: np.array([0.5]), [gen])(0.0, y)
    on_angle = swing_rhs(lambda d: np.array([0.5]), [gen], "on-angle", np.array([0.2]))(0.0, y)
    assert on_speed[1] == pytest.approx(-0.4 * 0.1 / 2.0)
    assert on_angle[1] == pytest.approx(-0.4 * (0.3 - 0.2) / 2.0)
    assert on_speed[0] == on_angle[0] == 0.1


# ═══ Group 2: TDS on networks ═══

@pytest.fixture(scope="module")
def ieee9():
    with open(os.path.join(CASES_DIR, "ieee9.case"), "r", encoding="utf-8") as f:
        case = parse_case(f.read(), "ieee9")
    net = network_from_case(case)
    return net, solve_operating_point(net, case.zips)


def test_operating_point_is_preserved(ieee9):
    net, op = ieee9
    traj = tds_run(net, op.loads, op.gens, op.delta, np.zeros(3), TdsConfig(horizon=0.2), v_guess=op.v)
    assert not traj.failed
    assert traj.t_end == pytest.approx(0.2)
    assert np.max(np.abs(traj.rotor_angles() - op.delta)) < 1e-6
    steps = len(traj.t) - 1
    assert traj.network_solves == 2 * steps
    assert traj.segments[0].exit_cause == "horizon"
    assert np.all(np.isfinite(traj.ref_angles))


def test_unsolvable_network_truncates_run():
    buses = [BusRecord(1, BusKind.KBUS), BusRecord(2, BusKind.MBUS)]
    branches = [BranchRecord(1, 2, 1.0 / complex(0.0, 0.1))]
    gens = [GeneratorDynamic(1, M=0.1, D=0.1, E=1.0, xd_t=0.1, p_mech=0.0)]
    net = augment_with_ibus(buses, branches, gens)
    loads = build_extended_loads([ZipLoadSpec(2, 20.0 + 0j, 0.0, 0.0, 1.0)], np.ones(net.N), net)
    traj = tds_run(net, loads, gens, np.zeros(1), np.zeros(1), TdsConfig(horizon=0.1))
    assert traj.failed
    assert "QPF" in traj.failure
    assert traj.segments[-1].exit_cause == "failure"


# ═══ Group 3: McLaurin recursion ═══

def test_constant_torque_coefficients():
    state = htms_coefficients(np.zeros(1), np.zeros(1), 0.0, 5, _FixedOracle([0.0]), [_gen()])
    np.testing.assert_allclose(state.omega[:3, 0], [0.0, 0.5, 0.0])
    np.testing.assert_allclose(state.delta[:3, 0], [0.0, 0.0, 0.25])
    delta, _ = state.evaluate(0.7)
    assert delta[0] == pytest.approx(0.25 * 0.49)


def test_force_free_rotation_coefficients():
    state = htms_coefficients(np.array([0.1]), np.array([0.3]), 0.0, 6, _FixedOracle([0.5]), [_gen()])
    assert state.delta[1, 0] == pytest.approx(0.3)
    np.testing.assert_array_equal(state.delta[2:], 0.0)
    np.testing.assert_array_equal(state.omega[1:], 0.0)


def test_single_term_freezes_state():
    state = htms_coefficients(np.array([0.1]), np.array([0.3]), 0.0, 1, _FixedOracle([0.0]), [_gen()])
    assert state.m == 1
    delta, omega = state.evaluate(5.0)
    assert delta[0] == 0.1 and omega[0] == 0.3
    assert convergence_radius(state) == math.inf


def test_coefficients_scale_with_net_power():
    base = [0.2, -0.1, 0.05, 0.3, -0.2]
    one = htms_coefficients(np.zeros(1), np.zeros(1), 0.0, 6, _FixedOracle(base), [_gen(p_mech=0.7)])
    three = htms_coefficients(np.zeros(1), np.zeros(1), 0.0, 6, _FixedOracle([3 * c for c in base]), [_gen(p_mech=2.1)])
    np.testing.assert_allclose(three.omega[1:], 3 * one.omega[1:])
    np.testing.assert_allclose(three.delta[1:], 3 * one.delta[1:])


def test_radius_of_geometric_and_terminating_series():
    r = 4.0
    geo = np.array([[r**k] for k in range(8)])
    assert convergence_radius(McLaurinState(geo, geo, 0.0)) == pytest.approx(1.0 / r)
    poly = np.zeros((8, 1))
    poly[:3, 0] = [1.0, 2.0, 3.0]
    assert convergence_radius(McLaurinState(poly, poly, 0.0)) == math.inf


def test_truncation_error_falls_with_more_terms():
    t = 3.0
    exact = math.exp(t) * math.cos(3.0 * t)
    errors = []
    for m in (10, 20, 30):
        coeffs = np.array([((1 + 3j) ** k).real / math.factorial(k) for k in range(m)])
        errors.append(abs(evaluate_series(coeffs, t) - exact))
    assert errors[0] > errors[1] > errors[2]


def test_coefficient_shapes_must_agree():
    with pytest.raises(ValueError):
        McLaurinState(np.zeros((3, 2)), np.zeros((4, 2)), 0.0)


# ═══ Group 4: HTMS runs ═══

def test_force_free_run_is_one_expansion():
    traj = htms_integrate(
        lambda d: _FixedOracle([0.5]), [_gen()], np.array([0.1]), np.array([0.3]), m=8, horizon=2.0
    )
    assert len(traj.segments) == 1
    assert traj.segments[0].exit_cause == "horizon"
    np.testing.assert_allclose(traj.rotor_angles()[-1], 0.1 + 0.3 * 2.0)


def test_machines_keep_their_own_series_across_expansions():
    rates = [0.3 * 2.0**k for k in range(30)]

    def factory(coeffs):
        return lambda d: _FixedOracle(coeffs)

    kwargs = dict(m=12, horizon=1.0, stop_on_instability=False)
    pair = htms_integrate(factory([[0.5, 0.5]] + [[r, -r] for r in rates]), [_gen(), _gen()],
                          np.array([0.1, -0.2]), np.array([0.0, 0.4]), **kwargs)
    first = htms_integrate(factory([0.5] + rates), [_gen()], np.array([0.1]), np.array([0.0]), **kwargs)
    second = htms_integrate(factory([0.5] + [-r for r in rates]), [_gen()], np.array([-0.2]), np.array([0.4]), **kwargs)

    assert len(pair.segments) > 1
    assert pair.w.shape == (len(pair.t), 4)
    np.testing.assert_allclose(pair.t, first.t)
    np.testing.assert_allclose(pair.rotor_angles()[:, 0], first.rotor_angles()[:, 0], atol=1e-12)
    np.testing.assert_allclose(pair.rotor_angles()[:, 1], second.rotor_angles()[:, 0], atol=1e-12)


def test_outage_htms_matches_tds(ieee9):
    net, op = ieee9
    post = net.rebuild(branches=[b for b in net.base_branches if {b.from_bus, b.to_bus} != {5, 7}])
    horizon = 0.5
    htms = htms_run(post, op.loads, op.gens, op.delta, np.zeros(3), m=25, horizon=horizon)
    tds = tds_run(post, op.loads, op.gens, op.delta, np.zeros(3), TdsConfig(horizon=horizon), v_guess=op.v)
    assert not htms.failed and not tds.failed
    steps = [s.t_end - s.t_start for s in htms.segments[:-1]]
    assert steps and all(1e-3 <= h <= 1.0 for h in steps)

    times = np.linspace(0.0, horizon, 51)
    ref = tds.sample(times)
    excursion = np.max(np.abs(ref - ref[0]))
    assert excursion > 0
    assert np.max(np.abs(htms.sample(times) - ref)) <= 0.05 * excursion
