"""Waveform solver checks against closed-form circuit responses.

The trapezoidal companion network is algebraically the bilinear transform
of the continuous network, so steady-state phasors of the simulation have
an exact discrete-domain reference: evaluate the element impedances at
(2/Ts)(z-1)/(z+1) with z = exp(j*2*pi*f*Ts).  Tests exploit that for
machine-precision oracles, plus classic time-domain closed forms for
step and switch-on responses.
"""

import math

import numpy as np
import pytest

from netequiv import (
    Branch,
    Bus,
    CaseError,
    Event,
    NetworkCase,
    Source,
    SweepSpec,
    SweepSpecError,
    TopologyError,
    TrapezoidalSolver,
    frequency_sweep,
    simulate,
    steady_amplitude_ratio,
)

from conftest import random_rlc_case


def fit_phasor(sig, f, ts, k0, k1):
    """Peak-amplitude cosine phasor of sig over samples [k0, k1)."""
    t = np.arange(k0, k1) * ts
    basis = np.column_stack([np.cos(2 * np.pi * f * t),
                             np.sin(2 * np.pi * f * t)])
    coef, *_ = np.linalg.lstsq(basis, sig[k0:k1], rcond=None)
    return complex(coef[0], -coef[1])


def z_of(f, ts):
    return np.exp(2j * np.pi * f * ts)


def bilinear_l(l, ts, z):
    """Discrete impedance of an inductance under the trapezoidal rule."""
    return (2.0 * l / ts) * (z - 1.0) / (z + 1.0)


def bilinear_c(c, ts, z):
    """Discrete admittance of a capacitance under the trapezoidal rule."""
    return (2.0 * c / ts) * (z - 1.0) / (z + 1.0)


def divider_case():
    """Source bus 1, series RL to bus 2, RC shunt at bus 2."""
    return NetworkCase(
        buses=[Bus(1, "boundary"), Bus(2)],
        branches=[
            Branch(1, 2, r=5.0, l=2e-3, model="series_rl"),
            Branch(2, 0, r=50.0, c=4e-6, model="shunt_rc"),
        ],
        sources=[Source(bus=1, kind="voltage", mag=1.0,
                        phase=-math.pi / 2, freq=60.0)],
        name="divider",
    )


# ---------------------------------------------------------------------------
# exact discrete-domain steady state


def test_divider_steady_state_matches_bilinear_transfer_exactly():
    ts = 5e-5
    case = divider_case()
    out = simulate(case, ts, duration=0.3)
    z = z_of(60.0, ts)
    zrl = 5.0 + bilinear_l(2e-3, ts, z)
    ysh = 1.0 / 50.0 + bilinear_c(4e-6, ts, z)
    h = (1.0 / ysh) / (zrl + 1.0 / ysh)
    want = h * np.exp(-1j * np.pi / 2)   # sin drive
    n = len(out)
    got = fit_phasor(out.channel("v:2"), 60.0, ts, n - 1000, n)
    assert abs(got - want) < 1e-8 * abs(want)
    # and the continuous circuit is recovered to within the warping error
    zrl_c = 5.0 + 2j * np.pi * 60.0 * 2e-3
    ysh_c = 1.0 / 50.0 + 2j * np.pi * 60.0 * 4e-6
    h_c = (1.0 / ysh_c) / (zrl_c + 1.0 / ysh_c)
    assert abs(h - h_c) < 1e-4 * abs(h_c)


def test_source_current_sign_and_kcl():
    # current delivered by the source equals the series branch current
    ts = 5e-5
    case = divider_case()
    out = simulate(case, ts, duration=0.05)
    np.testing.assert_allclose(out.channel("isrc:1"),
                               out.channel("i:1-2#0"), atol=1e-12)


def test_rl_switch_on_closed_form_and_second_order_convergence():
    # loop: source, series RL, resistive load to ground; with
    # R = r + r_load the branch current from rest is the closed form
    # i = (1/|Z|) (sin(wt - phi) + sin(phi) e^(-Rt/L))
    r, r_load, l, f = 1.0, 1.0, 0.01, 60.0
    reff = r + r_load
    w = 2 * np.pi * f
    phi = math.atan2(w * l, reff)
    zmag = math.hypot(reff, w * l)
    t_end = 0.08

    def exact(t):
        return (math.sin(w * t - phi)
                + math.sin(phi) * math.exp(-reff * t / l)) / zmag

    errs = []
    for ts in (2e-4, 1e-4):
        case = NetworkCase(
            buses=[Bus(1, "boundary"), Bus(2)],
            branches=[Branch(1, 2, r=r, l=l),
                      Branch(2, 0, r=r_load, model="shunt_rc")],
            sources=[Source(bus=1, kind="voltage", mag=1.0,
                            phase=-math.pi / 2, freq=f)],
            name="rl",
        )
        out = simulate(case, ts, duration=t_end + 2 * ts)
        k = int(round(t_end / ts))
        errs.append(abs(out.channel("i:1-2#0")[k] - exact(t_end)))
    assert errs[1] < 1e-4
    ratio = errs[0] / errs[1]
    assert 3.0 < ratio < 5.0, f"halving ts gave error ratio {ratio}"


def test_rlc_step_response_closed_form():
    # underdamped series RLC energized by a DC source at t = 0
    r, l, c = 1.0, 1e-3, 1e-5
    alpha = r / (2 * l)
    wd = math.sqrt(1.0 / (l * c) - alpha * alpha)
    case = NetworkCase(
        buses=[Bus(1, "boundary"), Bus(2)],
        branches=[Branch(1, 2, r=r, l=l),
                  Branch(2, 0, c=c, model="shunt_rc")],
        sources=[Source(bus=1, kind="voltage", mag=1.0, phase=0.0, freq=0.0)],
        name="rlc-step",
    )
    ts = 1e-6
    out = simulate(case, ts, duration=2e-3)
    v2 = out.channel("v:2")
    for t in (3e-4, 7e-4, 1.3e-3, 1.9e-3):
        k = int(round(t / ts))
        # sample-boundary switching lands half a sample early under the
        # trapezoidal rule, so the reference is evaluated at t + ts/2
        te = t + ts / 2
        want = 1.0 - math.exp(-alpha * te) * (math.cos(wd * te)
                                              + alpha / wd * math.sin(wd * te))
        assert abs(v2[k] - want) < 1e-4, f"t={t}: {v2[k]} vs {want}"


def test_superposition_of_sources():
    buses = [Bus(1, "boundary"), Bus(2), Bus(3)]
    branches = [
        Branch(1, 2, r=1.0, l=3e-3),
        Branch(2, 3, r=0.5, l=1e-3, c=2e-6, model="pi"),
        Branch(3, 0, r=20.0, c=1e-6, model="shunt_rc"),
    ]

    def run(v_mag, i_mag):
        case = NetworkCase(
            buses=buses,
            branches=branches,
            sources=[
                Source(bus=1, kind="voltage", mag=v_mag, freq=60.0),
                Source(bus=3, kind="current", mag=i_mag, freq=137.0,
                       phase=0.4),
            ],
            name="sup",
        )
        return simulate(case, 5e-5, duration=0.04)

    both = run(1.0, 2.0)
    only_v = run(1.0, 0.0)
    only_i = run(0.0, 2.0)
    for ch in ("v:2", "v:3", "i:1-2#0", "i:2-3#1"):
        np.testing.assert_allclose(
            both.channel(ch),
            only_v.channel(ch) + only_i.channel(ch),
            atol=1e-12)


def test_simulation_is_deterministic():
    case = divider_case()
    a = simulate(case, 5e-5, duration=0.02)
    b = simulate(case, 5e-5, duration=0.02)
    for ch in a.channels:
        assert np.array_equal(a.channel(ch), b.channel(ch))


# ---------------------------------------------------------------------------
# events


def test_fault_collapses_and_recovers():
    ts = 5e-5
    case = divider_case()
    ev = Event(kind="fault", t_start=0.05, bus=2, duration=0.05, value=1e-4)
    out = simulate(case, ts, duration=0.2, events=[ev])
    v2 = out.channel("v:2")
    pre = fit_phasor(v2, 60.0, ts, 500, 1000)      # fault hits at k = 1000
    during = np.abs(v2[1200:2000]).max()
    post = fit_phasor(v2, 60.0, ts, 3500, 4000)
    assert abs(pre) > 0.5
    assert during < 1e-3 * abs(pre)
    assert abs(post - pre) < 1e-6 * abs(pre)


def test_branch_open_transfers_current():
    ts = 5e-5
    case = NetworkCase(
        buses=[Bus(1, "boundary"), Bus(2)],
        branches=[
            Branch(1, 2, r=2.0, l=1e-3),
            Branch(1, 2, r=2.0, l=1e-3),
            Branch(2, 0, r=10.0, model="shunt_rc"),
        ],
        sources=[Source(bus=1, kind="voltage", mag=1.0, freq=60.0)],
        name="parallel",
    )
    out = simulate(case, ts, duration=0.2,
                   events=[Event(kind="branch_open", t_start=0.1, target=0)])
    i0, i1 = out.channel("i:1-2#0"), out.channel("i:1-2#1")
    np.testing.assert_allclose(i0[:2000], i1[:2000], atol=1e-12)
    assert np.all(i0[2001:] == 0.0)
    # steady current after the switch matches the single-branch circuit
    z = 2.0 + 2j * np.pi * 60.0 * 1e-3
    want = 1.0 / (z + 10.0)
    got = fit_phasor(i1, 60.0, ts, 3500, 4000)
    assert abs(got - want) < 1e-3 * abs(want)


def test_source_step_scales_response():
    ts = 5e-5
    case = divider_case()
    out = simulate(case, ts, duration=0.2,
                   events=[Event(kind="source_step", t_start=0.1, target=0,
                                 value=2.0)])
    v2 = out.channel("v:2")
    pre = fit_phasor(v2, 60.0, ts, 1500, 2000)
    post = fit_phasor(v2, 60.0, ts, 3500, 4000)
    assert abs(post - 2.0 * pre) < 1e-6 * abs(pre)


def test_event_validation():
    case = divider_case()
    with pytest.raises(TopologyError):
        simulate(case, 5e-5, 0.01,
                 events=[Event(kind="fault", t_start=0.0, bus=9)])
    with pytest.raises(TopologyError):
        simulate(case, 5e-5, 0.01,
                 events=[Event(kind="branch_open", t_start=0.0, target=7)])
    with pytest.raises(TopologyError):
        simulate(case, 5e-5, 0.01,
                 events=[Event(kind="source_step", t_start=0.0, target=3)])
    with pytest.raises(ValueError):
        Event(kind="melt", t_start=0.0)
    with pytest.raises(ValueError):
        Event(kind="fault", t_start=0.0, bus=2, value=0.0)


# ---------------------------------------------------------------------------
# solver-level behavior


def test_floating_node_is_reported():
    case = NetworkCase(
        buses=[Bus(1, "boundary"), Bus(2), Bus(3)],
        branches=[Branch(1, 2, r=1.0, l=1e-3),
                  Branch(2, 0, r=5.0, model="shunt_rc")],
        sources=[Source(bus=1, kind="voltage")],
        name="floating",
    )
    with pytest.raises(TopologyError, match="3"):
        TrapezoidalSolver(case, 5e-5)


def test_conflicting_voltage_sources_rejected():
    case = NetworkCase(
        buses=[Bus(1, "boundary")],
        branches=[Branch(1, 0, r=1.0, model="shunt_rc")],
        sources=[Source(bus=1, kind="voltage"),
                 Source(bus=1, kind="voltage", mag=2.0)],
        name="conflict",
    )
    with pytest.raises(TopologyError):
        TrapezoidalSolver(case, 5e-5)


def test_add_coupling_matches_explicit_resistor():
    g = 0.25
    base = NetworkCase(
        buses=[Bus(1, "boundary"), Bus(2)],
        branches=[Branch(1, 2, r=1.0, l=2e-3)],
        sources=[Source(bus=1, kind="voltage", mag=1.0, freq=60.0)],
        name="coupled",
    )
    explicit = NetworkCase(
        buses=base.buses,
        branches=base.branches + [Branch(2, 0, r=1.0 / g, model="shunt_rc")],
        sources=base.sources,
        name="resistor",
    )
    s1 = TrapezoidalSolver(base, 5e-5)
    s1.add_coupling([2], [2], [[g]])
    s2 = TrapezoidalSolver(explicit, 5e-5)
    for k in range(400):
        vd = np.array([math.cos(2 * math.pi * 60.0 * k * 5e-5)])
        v1, i1, _ = s1.step(vd)
        v2, i2, _ = s2.step(vd)
        np.testing.assert_allclose(v1, v2, atol=1e-13)
        np.testing.assert_allclose(i1, i2, atol=1e-13)


def test_injected_energy_into_passive_network_is_nonnegative(rng):
    # discrete passivity of the trapezoidal companion network
    for _ in range(5):
        case = random_rlc_case(rng, n_bus=6)
        solver = TrapezoidalSolver(case, 1e-4)
        node = solver.node_index[int(rng.choice(solver.node_ids))]
        inj = np.zeros(len(solver.node_ids))
        energy = 0.0
        for _k in range(3000):
            inj[node] = rng.standard_normal()
            v, _, _ = solver.step(np.zeros(0), inj)
            energy += v[node] * inj[node] * 1e-4
            assert np.isfinite(v).all()
        assert energy >= -1e-9


# ---------------------------------------------------------------------------
# sweep front end


def test_sweep_spec_schedule():
    spec = SweepSpec(f_start=10.0, f_stop=20.0, f_step=5.0, ts=1e-4,
                     cycles=4)
    np.testing.assert_allclose(spec.frequencies(), [10.0, 15.0, 20.0])
    segs = spec.segments()
    assert segs[0] == (10.0, 0, 4000)
    assert segs[1][1] == segs[0][2]          # contiguous
    assert segs[2][2] == sum(n for _, n in spec.schedule())
    dwell = SweepSpec(f_start=10.0, f_stop=20.0, f_step=5.0, ts=1e-4,
                      dwell_s=0.05)
    assert all(n == 500 for _, n in dwell.schedule())


def test_sweep_spec_validation():
    with pytest.raises(SweepSpecError):
        SweepSpec(f_stop=11000.0, ts=50e-6)          # beyond Nyquist
    with pytest.raises(SweepSpecError):
        SweepSpec(f_start=0.0)
    with pytest.raises(SweepSpecError):
        SweepSpec(cycles=2, discard_cycles=2)
    with pytest.raises(SweepSpecError):
        SweepSpec(dwell_s=-1.0)


def test_sweep_of_resistor_port():
    case = NetworkCase(
        buses=[Bus(1, "boundary")],
        branches=[Branch(1, 0, r=2.0, model="shunt_rc")],
        sources=[],
        name="r-port",
    )
    spec = SweepSpec(f_start=100.0, f_stop=300.0, f_step=100.0, ts=1e-4,
                     cycles=4)
    rec = frequency_sweep(case, [1], spec)[1]
    for seg in range(3):
        ratio = steady_amplitude_ratio(rec, 1, spec, seg)
        assert abs(ratio - 0.5) < 1e-12


def test_sweep_ratio_matches_bilinear_admittance():
    case = NetworkCase(
        buses=[Bus(1, "boundary"), Bus(2)],
        branches=[Branch(1, 2, r=5.0, l=2e-3),
                  Branch(2, 0, r=50.0, c=4e-6, model="shunt_rc")],
        sources=[],
        name="divider-port",
    )
    spec = SweepSpec(f_start=200.0, f_stop=1000.0, f_step=200.0, ts=5e-5,
                     cycles=8, discard_cycles=2)
    rec = frequency_sweep(case, [1], spec)[1]
    for seg, f in enumerate(spec.frequencies()):
        z = z_of(f, spec.ts)
        zrl = 5.0 + bilinear_l(2e-3, spec.ts, z)
        ysh = 1.0 / 50.0 + bilinear_c(4e-6, spec.ts, z)
        want = abs(1.0 / (zrl + 1.0 / ysh))
        got = steady_amplitude_ratio(rec, 1, spec, seg)
        assert abs(got - want) < 1e-5 * want
        # close to the continuous-frequency admittance as well
        y_cont = abs(1.0 / (5.0 + 2j * np.pi * f * 2e-3
                            + 1.0 / (1.0 / 50.0 + 2j * np.pi * f * 4e-6)))
        assert abs(got - y_cont) < 0.03 * y_cont


def test_two_port_sweep_cross_terms():
    # T network: port 1 - R - mid - R - port 2, mid grounded through R
    case = NetworkCase(
        buses=[Bus(1, "boundary"), Bus(2), Bus(3, "boundary")],
        branches=[Branch(1, 2, r=1.0),
                  Branch(2, 3, r=1.0),
                  Branch(2, 0, r=1.0, model="shunt_rc")],
        sources=[],
        name="tee",
    )
    spec = SweepSpec(f_start=100.0, f_stop=100.0, f_step=100.0, ts=1e-4,
                     cycles=4)
    recs = frequency_sweep(case, [1, 3], spec)
    # driving port 1 with port 3 shorted: y11 = 1/(1 + 0.5) ohms^-1 and the
    # transfer current into the network at port 3 is half the mid current
    y11 = steady_amplitude_ratio(recs[1], 1, spec, 0)
    y31 = steady_amplitude_ratio(recs[1], 3, spec, 0)
    assert abs(y11 - 2.0 / 3.0) < 1e-12
    assert abs(y31 - 1.0 / 3.0) < 1e-12
    # reciprocity
    y13 = steady_amplitude_ratio(recs[3], 1, spec, 0)
    assert abs(y13 - y31) < 1e-12


def test_sweep_port_validation():
    case = divider_case()
    spec = SweepSpec(f_start=100.0, f_stop=100.0, f_step=50.0, ts=1e-4)
    with pytest.raises(CaseError):
        frequency_sweep(case, [9], spec)
    with pytest.raises(CaseError):
        frequency_sweep(case, [1], spec)   # voltage-source bus
    with pytest.raises(ValueError):
        frequency_sweep(case, [], spec)
