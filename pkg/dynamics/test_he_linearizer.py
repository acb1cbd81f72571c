# dynamics/test_he_linearizer.py
"""
Holomorphic-embedding linearization.

 Group 1: Pade approximants
   1. geometric series sums to 1/(1-r), also through a degenerate W_b
   2. terminating series keeps the trivial denominator
   3. wide W_b: null-vector residual is negligible against |W_b|

 Group 2: master linear map
   4. exact at the expansion point against QPF
   5. per-entry sums land on QPF unanchored; the anchored constant is exact
   6. loadless network: KM map is exact everywhere
   7. small deviations: HE-Pade no worse than the Taylor and Ward maps

 Group 3: baselines
   8. Taylor map reproduces the expansion point and is exact for Z-only loads
   9. Ward map is exact for Z-only loads

 Group 4: truncation bound
  10. zero perturbation, orthonormal matrix, Monte-Carlo bound check

 Group 5: per-order network series
  11. zero angle series gives zero power coefficients
  12. series power matches QPF power along a ramp of angles
"""
import os
import warnings

import numpy as np
import pytest

from network.case_model import BranchRecord, BusKind, BusRecord, GeneratorDynamic, augment_with_ibus, network_from_case, parse_case
from network.errors import PadeDegeneracyWarning, UndefinedBoundError
from network.qpf import assemble_qpf, flat_start, ibus_voltages, machine_power, solve_operating_point, solve_qpf
from network.zip_loads import as_load_type, build_extended_loads
from dynamics.he_linearizer import (
    NetworkPowerSeries,
    assemble_linearization,
    condition_number,
    error_bound,
    he_recursion,
    order_diagnostic,
    pade_fit,
    taylor_sensitivity,
    to_complex,
    to_real,
    ward_reduction,
)

CASES_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "cases")


def _case(name: str = "ieee9"):
    with open(os.path.join(CASES_DIR, f"{name}.case"), "r", encoding="utf-8") as f:
        return parse_case(f.read(), name)


@pytest.fixture(scope="module")
def ieee9_op():
    case = _case()
    net = network_from_case(case)
    return case, net, solve_operating_point(net, case.zips)


def _qpf_km(net, loads, v_ibus, guess):
    sol = solve_qpf(assemble_qpf(net, loads, v_ibus), guess)
    return sol.v[net.km_idx]


# ═══ Group 1: Pade approximants ═══

def test_geometric_series_sums_to_pole_value():
    series = [np.array([0.5**k]) for k in range(9)]
    fit = pade_fit(series, 1, 1)
    assert fit.value()[0] == pytest.approx(2.0, rel=1e-12)
    assert not fit.degenerate


def test_geometric_series_through_degenerate_moment_matrix():
    series = [np.array([0.5**k]) for k in range(9)]
    with pytest.warns(PadeDegeneracyWarning):
        fit = pade_fit(series, 2, 2, label="geo")
    assert fit.degenerate
    assert fit.value()[0] == pytest.approx(2.0, rel=1e-10)


def test_terminating_series_keeps_trivial_denominator():
    series = [np.array([1.0]), np.array([2.0]), np.array([3.0])] + [np.zeros(1)] * 4
    fit = pade_fit(series, 2, 2)
    np.testing.assert_array_equal(fit.denominator, [1.0, 0.0, 0.0])
    assert fit.value()[0] == pytest.approx(6.0)


def test_wide_moment_matrix_null_vector():
    rng = np.random.default_rng(3)
    series = [np.array([c]) for c in rng.standard_normal(9)]
    with warnings.catch_warnings():
        warnings.simplefilter("error", PadeDegeneracyWarning)
        fit = pade_fit(series, 4, 4)
    assert fit.residual <= 1e-8 * fit.wb_norm


def test_pade_needs_enough_terms():
    with pytest.raises(ValueError):
        pade_fit([np.ones(1)] * 3, 2, 2)


# ═══ Group 2: master linear map ═══

def test_exact_at_expansion_point(ieee9_op):
    _, net, op = ieee9_op
    v_I0 = ibus_voltages(op.gens, op.delta)
    lin = assemble_linearization(net, op.loads, v_I0, 8, 8)
    w0 = to_real(v_I0)
    assert np.max(np.abs(lin.km_voltages(w0) - op.v[net.km_idx])) <= 1e-6
    np.testing.assert_allclose(lin.generation(w0), op.p_elec, atol=1e-6)
    assert lin.NKM == net.NKM and lin.NI == net.NI
    assert set(lin.diagnostics()) == {"km", "p", "q", "xi", "zeta"}


def test_entry_sums_and_anchored_constant(ieee9_op):
    _, net, op = ieee9_op
    v_I0 = ibus_voltages(op.gens, op.delta)
    w0 = to_real(v_I0)
    summed = assemble_linearization(net, op.loads, v_I0, anchor=False)
    anchored = assemble_linearization(net, op.loads, v_I0)
    assert np.max(np.abs(summed.km_voltages(w0) - op.v[net.km_idx])) <= 1e-5
    np.testing.assert_array_equal(summed.H, anchored.H)

    assert np.max(np.abs(anchored.km_voltages(w0) - op.v[net.km_idx])) <= 1e-7
    np.testing.assert_allclose(anchored.generation(w0), op.p_elec, atol=1e-7)
    H_q, h_q = anchored.block("q")
    H_xi, h_xi = anchored.block("xi")
    np.testing.assert_allclose(H_xi @ w0 + h_xi, (H_q @ w0 + h_q) * v_I0.real, atol=1e-12)


def test_loadless_network_map_is_exact():
    buses = [BusRecord(1, BusKind.KBUS), BusRecord(2, BusKind.MBUS)]
    branches = [BranchRecord(1, 2, 1.0 / complex(0.0, 0.1))]
    gens = [GeneratorDynamic(1, M=0.1, D=0.1, E=1.0, xd_t=0.1, p_mech=0.0)]
    net = augment_with_ibus(buses, branches, gens)
    loads = build_extended_loads([], np.ones(net.N), net)
    lin = assemble_linearization(net, loads, np.array([1.0 + 0j]))
    for v in (1.05 + 0.2j, 0.7 - 0.4j):
        np.testing.assert_allclose(lin.km_voltages(to_real(np.array([v]))), [v, v], atol=1e-12)


def test_small_deviation_error_ordering(ieee9_op):
    _, net, op = ieee9_op
    v_I0 = ibus_voltages(op.gens, op.delta)
    lin = assemble_linearization(net, op.loads, v_I0)
    Mw, cw = ward_reduction(net, op.loads, np.abs(op.v[net.km_idx]))
    Mt, ct = taylor_sensitivity(net, op.loads, op.v)

    v_I = v_I0 * np.exp(1j * 0.05 * np.array([1.0, -1.0, 0.5]))
    truth = _qpf_km(net, op.loads, v_I, op.v)
    he_err = np.max(np.abs(lin.km_voltages(to_real(v_I)) - truth))
    ward_err = np.max(np.abs(Mw @ v_I + cw - truth))
    taylor_err = np.max(np.abs(to_complex(Mt @ to_real(v_I) + ct) - truth))
    assert he_err <= 1.05 * taylor_err + 1e-6
    assert he_err <= ward_err


def test_series_needs_two_orders(ieee9_op):
    _, net, op = ieee9_op
    with pytest.raises(ValueError):
        he_recursion(net, op.loads, ibus_voltages(op.gens, op.delta), 1)


# ═══ Group 3: baselines ═══

def test_taylor_reproduces_expansion_point(ieee9_op):
    _, net, op = ieee9_op
    M, c = taylor_sensitivity(net, op.loads, op.v)
    np.testing.assert_allclose(M @ to_real(op.v[net.ibus_idx]) + c, to_real(op.v[net.km_idx]), atol=1e-12)


def _z_only():
    case = _case()
    net = network_from_case(case)
    loads = build_extended_loads(as_load_type(case.zips, "z"), np.ones(net.N), net)
    v_I0 = ibus_voltages(net.gens, np.array([0.0, 0.2, 0.1]))
    v0 = solve_qpf(assemble_qpf(net, loads, v_I0), flat_start(net, v_I0)).v
    return net, loads, v_I0, v0


def test_taylor_is_exact_for_impedance_loads():
    net, loads, v_I0, v0 = _z_only()
    M, c = taylor_sensitivity(net, loads, v0)
    v_I = v_I0 * np.exp(1j * np.array([0.3, -0.2, 0.4])) * 1.1
    truth = _qpf_km(net, loads, v_I, v0)
    np.testing.assert_allclose(to_complex(M @ to_real(v_I) + c), truth, atol=1e-7)


def test_ward_is_exact_for_impedance_loads():
    net, loads, v_I0, v0 = _z_only()
    M, c = ward_reduction(net, loads, np.abs(v0[net.km_idx]))
    v_I = v_I0 * np.exp(1j * np.array([0.3, -0.2, 0.4])) * 1.1
    np.testing.assert_allclose(M @ v_I + c, _qpf_km(net, loads, v_I, v0), atol=1e-7)


# ═══ Group 4: truncation bound ═══

def test_bound_vanishes_without_perturbation():
    rng = np.random.default_rng(0)
    Psi, psi = rng.standard_normal((6, 3)), rng.standard_normal(6)
    assert error_bound((Psi, psi), (Psi, psi)) == 0.0


def test_orthonormal_matrix_is_perfectly_conditioned():
    Q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((5, 5)))
    assert condition_number(Q) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(UndefinedBoundError):
        condition_number(np.zeros((3, 2)))


@pytest.mark.parametrize("seed", range(20))
def test_bound_covers_least_squares_change(seed):
    rng = np.random.default_rng(seed)
    Psi, psi = rng.standard_normal((8, 3)), rng.standard_normal(8)
    dPsi, dpsi = rng.standard_normal((8, 3)), rng.standard_normal(8)
    eps = 1e-6
    Psi_x = Psi + eps * np.linalg.norm(Psi, 2) * dPsi / np.linalg.norm(dPsi, 2)
    psi_x = psi + eps * np.linalg.norm(psi) * dpsi / np.linalg.norm(dpsi)
    x = np.linalg.lstsq(Psi, psi, rcond=None)[0]
    x_x = np.linalg.lstsq(Psi_x, psi_x, rcond=None)[0]
    change = np.linalg.norm(x_x - x) / np.linalg.norm(x)
    assert change <= error_bound((Psi, psi), (Psi_x, psi_x)) * (1.0 + 1e-3)


def test_bound_rejects_mismatched_shapes():
    with pytest.raises(UndefinedBoundError):
        error_bound((np.eye(3), np.ones(3)), (np.eye(2), np.ones(2)))


def test_order_diagnostic_is_finite(ieee9_op):
    _, net, op = ieee9_op
    value = order_diagnostic(net, op.loads, ibus_voltages(op.gens, op.delta), 3)
    assert np.isfinite(value) and value >= 0.0


# ═══ Group 5: per-order network series ═══

def test_zero_angle_series_has_no_power_terms(ieee9_op):
    _, net, op = ieee9_op
    series = NetworkPowerSeries(net, op.loads, op.gens, op.delta, v_guess=op.v)
    np.testing.assert_allclose(series.p_elec[0], op.p_elec, atol=1e-7)
    for _ in range(4):
        np.testing.assert_allclose(series.next_order(np.zeros(net.NI)), 0.0, atol=1e-12)
    assert series.order == 4


def test_series_power_follows_angle_ramp(ieee9_op):
    _, net, op = ieee9_op
    rate = np.array([0.2, -0.3, 0.5])
    series = NetworkPowerSeries(net, op.loads, op.gens, op.delta, v_guess=op.v)
    series.next_order(rate)
    for _ in range(9):
        series.next_order(np.zeros(net.NI))
    t = 0.05
    summed = sum(p * t**k for k, p in enumerate(series.p_elec))
    direct, _ = machine_power(net, op.loads, ibus_voltages(op.gens, op.delta + rate * t), op.v)
    np.testing.assert_allclose(summed, direct, atol=1e-7)
