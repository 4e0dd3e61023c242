"""Admittance assembly and reduction checks.

The reduction oracle never uses the Schur formula: it solves the full
nodal system with injections confined to the kept buses and checks that
the reduced matrix reproduces the same port relation.
"""

import numpy as np
import pytest

from netequiv.netmodel import (AdmittanceSampleSet, Branch, Bus, CaseError,
                               DegenerateBranchError,
                               EliminationSingularityError, NetworkCase,
                               PartitionError, analytic_port_admittance,
                               build_ybus, kron_reduce, merge_buses,
                               partition_reduced)
from conftest import random_rlc_case


def ladder_case():
    """3-bus ladder: series RL 1-2, pi line 2-3, shunt RC at 3."""
    return NetworkCase(
        buses=[Bus(1, "boundary"), Bus(2), Bus(3)],
        branches=[
            Branch(1, 2, r=0.5, l=2e-3, model="series_rl"),
            Branch(2, 3, r=0.1, l=1e-3, c=4e-6, model="pi"),
            Branch(3, 0, r=20.0, c=3e-6, model="shunt_rc"),
        ])


def test_ybus_matches_hand_stamping():
    case = ladder_case()
    f = 137.0
    w = 2 * np.pi * f
    y12 = 1 / (0.5 + 1j * w * 2e-3)
    y23 = 1 / (0.1 + 1j * w * 1e-3)
    ysh = 1j * w * 4e-6 / 2
    yld = 1 / 20.0 + 1j * w * 3e-6
    expect = np.array([
        [y12, -y12, 0],
        [-y12, y12 + y23 + ysh, -y23],
        [0, -y23, y23 + ysh + yld],
    ])
    got = build_ybus(case, f)
    assert np.allclose(got, expect, rtol=0, atol=1e-16), \
        f"max dev {np.abs(got - expect).max():.3e}"


def test_single_shunt_capacitor_unit_admittance():
    case = NetworkCase(buses=[Bus(1, "boundary")],
                       branches=[Branch(1, 0, c=1.0, model="shunt_rc")])
    f = 1.0 / (2 * np.pi)
    y = build_ybus(case, f)
    assert y.shape == (1, 1)
    assert abs(y[0, 0] - 1j) < 1e-15


def test_ybus_symmetric_and_conductance_psd(rng):
    for trial in range(10):
        case = random_rlc_case(rng, int(rng.integers(4, 10)))
        f = float(10 ** rng.uniform(0, 3.2))
        y = build_ybus(case, f)
        assert np.array_equal(y, y.T), "reciprocal stamping must be exact"
        g = 0.5 * (y + y.conj().T)
        eigs = np.linalg.eigvalsh(g)
        assert eigs.min() >= -1e-12 * max(1.0, np.abs(g).max()), \
            f"trial {trial}: passive network with negative conductance " \
            f"eigenvalue {eigs.min():.3e}"


def test_degenerate_branches_rejected():
    with pytest.raises(DegenerateBranchError):
        Branch(1, 2, r=0.0, l=0.0, model="series_rl")
    with pytest.raises(DegenerateBranchError):
        Branch(1, 0, r=0.0, c=0.0, model="shunt_rc")
    with pytest.raises(CaseError):
        Branch(1, 1, r=1.0, model="series_rl")
    with pytest.raises(CaseError):
        Branch(1, 2, r=-1.0, l=1e-3, model="series_rl")


def test_case_validation():
    with pytest.raises(CaseError, match="duplicate"):
        NetworkCase(buses=[Bus(1), Bus(1)])
    with pytest.raises(CaseError, match="unknown bus"):
        NetworkCase(buses=[Bus(1)], branches=[Branch(1, 2, r=1.0)])


# ---------------------------------------------------------------------------
# reduction


def solve_port_relation(y, keep_idx, v_keep):
    """Oracle: full solve with injections only at kept buses.

    Returns the injections the full network needs at the kept buses to
    hold them at v_keep with all other buses floating.
    """
    n = y.shape[0]
    other = [k for k in range(n) if k not in keep_idx]
    # block solve: I_other = 0 determines V_other from V_keep
    v_other = np.linalg.solve(y[np.ix_(other, other)],
                              -y[np.ix_(other, keep_idx)] @ v_keep)
    v = np.empty(n, dtype=complex)
    v[keep_idx] = v_keep
    v[other] = v_other
    return (y @ v)[keep_idx]


def test_kron_matches_full_solve(rng):
    for trial in range(25):
        n_bus = int(rng.integers(4, 13))
        case = random_rlc_case(rng, n_bus)
        f = float(10 ** rng.uniform(0, 3.3))
        y = build_ybus(case, f)
        ids = case.bus_ids()
        n_keep = int(rng.integers(1, min(4, n_bus)))
        keep = [int(b) for b in rng.choice(ids, size=n_keep, replace=False)]
        y_red = kron_reduce(y, keep, ids)
        keep_idx = [ids.index(b) for b in keep]
        v_keep = rng.normal(size=n_keep) + 1j * rng.normal(size=n_keep)
        i_direct = solve_port_relation(y, keep_idx, v_keep)
        i_red = y_red @ v_keep
        rel = np.linalg.norm(i_red - i_direct) / np.linalg.norm(i_direct)
        assert rel < 1e-10, f"trial {trial}: port relation off by {rel:.3e}"


def test_kron_nested_elimination(rng):
    case = random_rlc_case(rng, 9)
    y = build_ybus(case, 60.0)
    ids = case.bus_ids()
    keep_final = [1, 2, 3]
    stage1 = kron_reduce(y, [1, 2, 3, 4, 5], ids)
    nested = kron_reduce(stage1, keep_final, [1, 2, 3, 4, 5])
    direct = kron_reduce(y, keep_final, ids)
    scale = np.abs(direct).max()
    assert np.abs(nested - direct).max() < 1e-10 * scale


def test_kron_keep_all_and_ordering(rng):
    case = random_rlc_case(rng, 5)
    y = build_ybus(case, 60.0)
    ids = case.bus_ids()
    same = kron_reduce(y, ids, ids)
    assert np.array_equal(same, y)
    perm = [3, 1, 2]
    a = kron_reduce(y, [1, 2, 3], ids)
    b = kron_reduce(y, perm, ids)
    lut = {bus: k for k, bus in enumerate([1, 2, 3])}
    idx = [lut[bus] for bus in perm]
    assert np.allclose(b, a[np.ix_(idx, idx)], rtol=0, atol=1e-14)


def test_kron_isolated_bus_raises():
    case = NetworkCase(
        buses=[Bus(1, "boundary"), Bus(2), Bus(3)],
        branches=[Branch(1, 2, r=1.0, l=1e-3)])   # bus 3 floats
    y = build_ybus(case, 60.0)
    with pytest.raises(EliminationSingularityError) as err:
        kron_reduce(y, [1], case.bus_ids())
    assert 3 in err.value.bus_ids


def test_partition_blocks_reassemble(rng):
    case = random_rlc_case(rng, 7)
    y = build_ybus(case, 60.0)
    ids = case.bus_ids()
    y_red = kron_reduce(y, [1, 2, 3, 4, 5], ids)
    part = partition_reduced(y_red, boundary=[2, 4], generator=[1, 3, 5],
                             ids=[1, 2, 3, 4, 5])
    back = part.assemble()
    order = [2, 4, 1, 3, 5]
    lut = {b: k for k, b in enumerate([1, 2, 3, 4, 5])}
    idx = [lut[b] for b in order]
    assert np.array_equal(back, y_red[np.ix_(idx, idx)])


def test_partition_validation(rng):
    y = np.eye(3, dtype=complex)
    with pytest.raises(PartitionError):
        partition_reduced(y, boundary=[1], generator=[1, 2], ids=[1, 2, 3])
    with pytest.raises(PartitionError):
        partition_reduced(y, boundary=[1], generator=[2], ids=[1, 2, 3])


def test_analytic_port_admittance_divider():
    # series RL into a shunt RC: one-port equivalent is the series
    # admittance in series with the shunt (current divider closed form)
    case = NetworkCase(
        buses=[Bus(1, "boundary"), Bus(2)],
        branches=[Branch(1, 2, r=0.3, l=1.5e-3),
                  Branch(2, 0, r=12.0, c=2e-6, model="shunt_rc")])
    f_grid = np.array([1.0, 60.0, 400.0, 2000.0])
    got = analytic_port_admittance(case, [1], f_grid)
    assert isinstance(got, AdmittanceSampleSet)
    for k, f in enumerate(f_grid):
        w = 2 * np.pi * f
        z_se = 0.3 + 1j * w * 1.5e-3
        y_sh = 1 / 12.0 + 1j * w * 2e-6
        expect = 1.0 / (z_se + 1.0 / y_sh)
        assert abs(got.y[k, 0, 0] - expect) < 1e-12 * abs(expect), \
            f"f={f}: {got.y[k, 0, 0]} vs {expect}"


def test_analytic_port_requires_boundary_kind():
    case = ladder_case()
    with pytest.raises(CaseError, match="not marked boundary"):
        analytic_port_admittance(case, [2], np.array([60.0]))


def test_voltage_source_bus_grounded_in_port_view():
    # a clamped source bus acts as ground: series branch to it terminates
    from netequiv.netmodel import Source
    case = NetworkCase(
        buses=[Bus(1, "boundary"), Bus(2)],
        branches=[Branch(1, 2, r=2.0, l=0.0)],
        sources=[Source(bus=2, kind="voltage", mag=5.0)])
    got = analytic_port_admittance(case, [1], np.array([60.0]))
    assert abs(got.y[0, 0, 0] - 0.5) < 1e-14


def test_merge_buses_matches_rebuilt_case(rng):
    # tying buses 2 and 3 together equals a case built with them as one
    case = NetworkCase(
        buses=[Bus(1), Bus(2), Bus(3)],
        branches=[Branch(1, 2, r=1.0, l=1e-3),
                  Branch(1, 3, r=2.0, l=2e-3),
                  Branch(2, 0, r=5.0, c=1e-6, model="shunt_rc"),
                  Branch(3, 0, r=7.0, c=2e-6, model="shunt_rc")])
    merged_case = NetworkCase(
        buses=[Bus(1), Bus(2)],
        branches=[Branch(1, 2, r=1.0, l=1e-3),
                  Branch(1, 2, r=2.0, l=2e-3),
                  Branch(2, 0, r=5.0, c=1e-6, model="shunt_rc"),
                  Branch(2, 0, r=7.0, c=2e-6, model="shunt_rc")])
    f = 217.0
    y_m, ids_m = merge_buses(build_ybus(case, f), case.bus_ids(), [[2, 3]])
    y_ref = build_ybus(merged_case, f)
    assert ids_m == [1, 2]
    assert np.allclose(y_m, y_ref, rtol=0, atol=1e-15)


def test_sample_set_validation():
    with pytest.raises(ValueError, match="Nyquist"):
        AdmittanceSampleSet(f_hz=np.array([6000.0]),
                            y=np.ones((1, 1, 1), dtype=complex), ts=1e-4)
    with pytest.raises(ValueError, match="negative"):
        AdmittanceSampleSet(f_hz=np.array([-1.0]),
                            y=np.ones((1, 1, 1), dtype=complex))
