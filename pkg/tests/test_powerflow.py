"""Newton power flow: known solutions and failure modes.

With impedance loads folded into the admittance matrix, a zero-injection
bus carries zero current (S = V conj(I) = 0 with V != 0 forces I = 0), so
a slack-only case collapses to a linear nodal solve.  That gives an exact
oracle without a second power-flow implementation.
"""

import numpy as np
import pytest

from netequiv.netmodel import (Branch, Bus, CaseError, Generator,
                               NetworkCase, PowerFlowSpec, build_ybus)
from netequiv.powerflow import PowerFlowError, solve_powerflow


def slack_only_case(v_set=1.05, extra_buses=()):
    buses = [Bus(1, "generator"), Bus(2, "internal"), Bus(3, "internal")]
    buses += [Bus(b, "internal") for b in extra_buses]
    branches = [
        Branch(1, 2, r=0.1, l=5e-4, model="series_rl"),
        Branch(2, 3, r=0.2, l=1e-3, model="series_rl"),
        Branch(3, 0, r=4.0, c=2e-5, model="shunt_rc"),
        Branch(2, 0, r=0.0, c=1e-5, model="shunt_rc"),
    ]
    gens = [Generator(id=1, bus=1, h=3.0, p_set=0.0, v_set=v_set)]
    return NetworkCase(buses=buses, branches=branches, generators=gens,
                       powerflow=PowerFlowSpec(slack_bus=1))


def two_machine_case(p_set=0.4, v2=1.02, max_iter=40):
    buses = [Bus(1, "generator"), Bus(2, "generator"), Bus(3, "internal")]
    branches = [
        Branch(1, 3, r=0.05, l=1e-3, model="series_rl"),
        Branch(2, 3, r=0.05, l=1e-3, model="series_rl"),
        Branch(3, 0, r=2.0, c=1e-5, model="shunt_rc"),
    ]
    gens = [Generator(id=1, bus=1, h=5.0, p_set=0.0, v_set=1.0),
            Generator(id=2, bus=2, h=4.0, p_set=p_set, v_set=v2)]
    return NetworkCase(buses=buses, branches=branches, generators=gens,
                       powerflow=PowerFlowSpec(slack_bus=1,
                                               max_iter=max_iter))


def test_slack_only_matches_linear_solve():
    case = slack_only_case()
    res = solve_powerflow(case)

    y = build_ybus(case, 60.0)
    v_exact = np.empty(3, dtype=complex)
    v_exact[0] = 1.05
    v_exact[1:] = np.linalg.solve(y[1:, 1:], -y[1:, 0] * 1.05)

    assert res.max_mismatch < 1e-10
    assert res.bus_ids == [1, 2, 3]
    np.testing.assert_allclose(res.v, v_exact, atol=1e-8)
    # zero-injection buses carry no current at all
    np.testing.assert_allclose(res.s_inj[1:], 0.0, atol=1e-9)


def test_slack_bus_is_held_exactly():
    res = solve_powerflow(slack_only_case(v_set=1.05))
    # the slack voltage is never touched by the update, so it is exact
    assert res.voltage(1) == 1.05 + 0.0j


def test_pv_bus_holds_setpoints():
    case = two_machine_case(p_set=0.4, v2=1.02)
    res = solve_powerflow(case)
    assert res.max_mismatch < 1e-10
    # magnitude is a hard constraint, power a converged one
    assert abs(res.voltage(2)) == pytest.approx(1.02, abs=1e-14)
    assert res.injection(2).real == pytest.approx(0.4, abs=1e-9)
    # the load bus balances to zero injection
    assert abs(res.injection(3)) < 1e-9


def test_slack_picks_up_losses():
    case = two_machine_case(p_set=0.4)
    res = solve_powerflow(case)
    # total generation covers exactly what the impedances dissipate and
    # the network is passive, so the sum of real injections is positive
    total = res.s_inj.real.sum()
    assert total > 0.0
    assert res.injection(1).real == pytest.approx(total - 0.4, abs=1e-9)


def test_injections_consistent_with_ybus():
    case = two_machine_case()
    res = solve_powerflow(case)
    y = build_ybus(case, 60.0)
    np.testing.assert_allclose(res.s_inj, res.v * np.conj(y @ res.v),
                               rtol=0, atol=1e-12)


def test_default_frequency_is_nominal():
    case = two_machine_case()
    a = solve_powerflow(case)
    b = solve_powerflow(case, f_hz=case.f_nominal)
    np.testing.assert_array_equal(a.v, b.v)
    # a different frequency shifts the reactances and the solution
    c = solve_powerflow(case, f_hz=50.0)
    assert not np.allclose(a.v, c.v)


def test_requires_powerflow_section():
    case = slack_only_case()
    case.powerflow = None
    with pytest.raises(CaseError, match="powerflow"):
        solve_powerflow(case)


def test_requires_a_generator():
    case = NetworkCase(
        buses=[Bus(1, "internal"), Bus(2, "internal")],
        branches=[Branch(1, 2, r=0.1, l=1e-3),
                  Branch(2, 0, r=2.0, c=1e-6, model="shunt_rc")],
        powerflow=PowerFlowSpec(slack_bus=1))
    with pytest.raises(CaseError, match="generator"):
        solve_powerflow(case)


def test_rejects_two_generators_on_one_bus():
    case = two_machine_case()
    case.generators = list(case.generators) + [
        Generator(id=9, bus=2, h=1.0)]
    with pytest.raises(CaseError, match="two generators on bus 2"):
        solve_powerflow(case)


def test_slack_must_carry_a_generator():
    case = two_machine_case()
    case.powerflow = PowerFlowSpec(slack_bus=3)
    with pytest.raises(CaseError, match="slack bus 3"):
        solve_powerflow(case)


def test_iteration_budget_enforced():
    with pytest.raises(PowerFlowError, match="no convergence after 1"):
        solve_powerflow(two_machine_case(max_iter=1))


def test_floating_bus_makes_jacobian_singular():
    # a bus with no branches has identically zero mismatch rows and
    # Jacobian columns, which Newton cannot invert
    case = slack_only_case(extra_buses=(9,))
    with pytest.raises(PowerFlowError, match="singular"):
        solve_powerflow(case)
