# network/test_qpf.py
"""
Quasi power flow.

 Group 1: closed forms
   1. machine feeding a constant-power load matches the quadratic closed form
   2. quadratic-form rows reproduce the injections

 Group 2: solution certificates
   3. residual certificate at KM and Ibus
   4. feeding the solution back converges in at most two iterations
   5. conjugating every input conjugates the solution

 Group 3: failures
   6. dimension mismatch, divergence with last iterate

 Group 4: operating point
   7. non-reference machines deliver p_mech; reference is rebalanced
"""
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
from network.errors import QpfDimensionError, QpfDivergenceError
from network.qpf import (
    QuadraticFormSystem,
    assemble_qpf,
    flat_start,
    ibus_voltages,
    machine_power,
    solve_operating_point,
    solve_qpf,
)
from network.zip_loads import ZipLoadSpec, build_extended_loads

CASES_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "cases")


def _ieee9():
    with open(os.path.join(CASES_DIR, "ieee9.case"), "r", encoding="utf-8") as f:
        case = parse_case(f.read(), "ieee9")
    net = network_from_case(case)
    loads = build_extended_loads(case.zips, np.ones(net.N), net)
    return case, net, loads


def _two_bus(load: complex, fractions=(0.0, 0.0, 1.0)):
    """Machine (xd_t = 0.1) feeding one load bus; bus 1 is the Kbus."""
    buses = [BusRecord(1, BusKind.KBUS), BusRecord(2, BusKind.MBUS)]
    branches = [BranchRecord(1, 2, 1.0 / complex(0.0, 0.1))]
    gens = [GeneratorDynamic(1, M=0.1, D=0.1, E=1.0, xd_t=0.1, p_mech=0.0)]
    net = augment_with_ibus(buses, branches, gens)
    loads = build_extended_loads([ZipLoadSpec(2, load, *fractions)], np.ones(net.N), net)
    return net, loads


# ═══ Group 1: closed forms ═══

def test_series_chain_with_pure_p_load():
    # 1 -> ibus(3) -x=0.1- bus1 -x=0.1- bus2 with P = 0.1 at bus 2: total reactance 0.2.
    # |v2|^2 = a with a^2 - a + (P X)^2 = 0, P X = 0.02.
    net, loads = _two_bus(0.1 + 0j)
    sol = solve_qpf(assemble_qpf(net, loads, np.array([1.0 + 0j])), flat_start(net, np.array([1.0 + 0j])))
    a = 0.5 * (1.0 + np.sqrt(1.0 - 4.0 * 0.02**2))
    v2 = sol.v[net.position(2)]
    assert abs(v2) ** 2 == pytest.approx(a, rel=1e-9)
    assert sol.p_inj[net.ibus_idx][0] == pytest.approx(0.1, rel=1e-9)


def test_quadratic_forms_reproduce_injections():
    _, net, loads = _ieee9()
    sys = assemble_qpf(net, loads, ibus_voltages(net.gens, np.array([0.0, 0.2, 0.1])))
    rng = np.random.default_rng(7)
    v = 1.0 + 0.1 * (rng.standard_normal(net.N) + 1j * rng.standard_normal(net.N))
    w = np.concatenate([v.real, v.imag])
    s = sys.injections(v)[sys.free_idx]
    for row in range(len(sys.free_idx)):
        for part, expect in (("p", s[row].real), ("q", s[row].imag)):
            A, c, _ = sys.quad_form(row, part)
            assert w @ A @ w + c @ w == pytest.approx(expect, abs=1e-12)
    rows, rhs = sys.linear_rows()
    assert rows.shape == (2 * net.NI, 2 * net.N)
    assert sys.n_equations == sys.n_unknowns


def test_quad_form_rejects_unknown_part():
    _, net, loads = _ieee9()
    sys = assemble_qpf(net, loads, ibus_voltages(net.gens, np.zeros(3)))
    with pytest.raises(ValueError):
        sys.quad_form(0, "s")


# ═══ Group 2: solution certificates ═══

def test_residual_certificate():
    _, net, loads = _ieee9()
    v_ibus = ibus_voltages(net.gens, np.array([0.05, 0.3, 0.2]))
    sys = assemble_qpf(net, loads, v_ibus)
    sol = solve_qpf(sys, flat_start(net, v_ibus))
    s = sol.v * np.conj(sys.ybus @ sol.v + sys.full_i0())
    np.testing.assert_allclose(s[net.km_idx], loads.injection, atol=1e-8)
    np.testing.assert_allclose(s[net.ibus_idx].real, sol.p_inj[net.ibus_idx], atol=1e-12)
    np.testing.assert_allclose(sol.v[net.ibus_idx], v_ibus)


def test_warm_start_is_a_fixed_point():
    _, net, loads = _ieee9()
    v_ibus = ibus_voltages(net.gens, np.array([0.0, 0.25, 0.15]))
    sys = assemble_qpf(net, loads, v_ibus)
    sol = solve_qpf(sys, flat_start(net, v_ibus))
    again = solve_qpf(sys, sol.v)
    assert again.iterations <= 2


def test_conjugate_inputs_conjugate_solution():
    _, net, loads = _ieee9()
    v_ibus = ibus_voltages(net.gens, np.array([0.1, 0.3, 0.2]))
    sol = solve_qpf(assemble_qpf(net, loads, v_ibus), flat_start(net, v_ibus))
    mirrored = QuadraticFormSystem(
        ybus=np.conj(net.ybus + loads.ybus_add),
        fixed_idx=net.ibus_idx,
        fixed_v=np.conj(v_ibus),
        free_idx=net.km_idx,
        target=np.conj(loads.injection),
        i0=np.conj(loads.i0),
    )
    other = solve_qpf(mirrored, np.conj(flat_start(net, v_ibus)))
    np.testing.assert_allclose(other.v, np.conj(sol.v), atol=1e-8)


# ═══ Group 3: failures ═══

def test_wrong_ibus_length_is_rejected():
    _, net, loads = _ieee9()
    with pytest.raises(QpfDimensionError):
        assemble_qpf(net, loads, np.ones(2, dtype=complex))


def test_overload_diverges_with_last_iterate():
    net, loads = _two_bus(20.0 + 0j)
    sys = assemble_qpf(net, loads, np.array([1.0 + 0j]))
    with pytest.raises(QpfDivergenceError) as info:
        solve_qpf(sys, flat_start(net, np.array([1.0 + 0j])), max_iter=15)
    assert info.value.last_iterate.shape == (net.N,)


# ═══ Group 4: operating point ═══

def test_operating_point_balances_machines():
    case, net, _ = _ieee9()
    op = solve_operating_point(net, case.zips)
    assert op.delta[0] == 0.0
    np.testing.assert_allclose(op.p_elec[1:], [g.p_mech for g in case.gens[1:]], atol=1e-7)
    assert op.gens[0].p_mech == pytest.approx(op.p_elec[0])
    # ZIP consumption near nominal voltage plus small losses
    total_load = sum(z.S0.real for z in case.zips)
    assert 0.97 * total_load < op.p_elec.sum() < 1.05 * total_load
    p_e, _ = machine_power(net, op.loads, ibus_voltages(op.gens, op.delta), op.v)
    np.testing.assert_allclose(p_e, op.p_elec, atol=1e-7)
