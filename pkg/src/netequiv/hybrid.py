"""Hybrid co-simulation of a detailed study area against reduced externals.

One case file describes the whole network; the ``variant`` argument picks
how the external area is represented while the study area always runs in
the trapezoidal waveform solver:

    emt               full detail on both sides, the reference
    emt_tsa           external area as phasor machines behind the
                      fundamental-frequency reduced network
    emt_tsa_agg       same, coherent external machines merged first
    emt_fdne          external area as the fitted wide-band admittance
                      plus a constant operating-point current
    emt_fdne_tsa      fitted admittance for the off-fundamental response,
                      phasor machines for the fundamental
    emt_fdne_tsa_agg  same, external machines merged

Sign convention at the cut: every external-side current is referenced
*into* the external area (the draw), and the study-side coupler injects
the negation.  When the wide-band model and the phasor exchange run
together, the model's own fundamental response Yc(f0) Vb is subtracted
from the published phasor current so only one path carries the
fundamental; standalone, the model instead gets the constant compensation
built from the power-flow operating point.

Machines are classical: an EMF behind the transient reactance.  Study
machines live in the waveform solver as driven sources whose angle
advances with the swing state; their electrical power is measured with a
sliding one-cycle phasor of the stator current.  Start-up uses a freeze
window: machines hold their power-flow angles while the network
energizes, then every machine's mechanical power is trimmed to its
measured electrical power, so the discrete system sits at an exact
equilibrium before any event fires.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .emt_sim import TimeSeries, TrapezoidalSolver, apply_events_at
from .fdne_rt import (TWO_PI, FdneRuntime, PhasorValue,
                      fundamental_compensation, init_steady_state,
                      phasor_array)
from .netmodel import (Branch, Bus, CaseError, NetworkCase,
                       analytic_port_admittance, build_ybus, kron_reduce,
                       merge_buses, partition_reduced)
from .powerflow import solve_powerflow
from .rls_ident import RationalTFz, TFMatrix
from .tsa_if import (Machine, SlidingPhasor, aggregate_machines,
                     boundary_current, gen_bus_voltage,
                     machine_from_powerflow, swing_trapezoid, tsa_step,
                     window_samples)

VARIANTS = ("emt", "emt_tsa", "emt_tsa_agg", "emt_fdne", "emt_fdne_tsa",
            "emt_fdne_tsa_agg")

# Internal EMF nodes are numbered above the case's own bus space.
MACHINE_BUS_BASE = 1000


class HybridRunError(RuntimeError):
    """Co-simulation produced a non-finite network state."""


@dataclass(frozen=True)
class AreaSplit:
    """The case cut at its boundary buses.

    ties lists (branch index, sign) of the branches linking a boundary bus
    to the external side, sign +1 when from_bus is the boundary end, so
    that sign * series current is the draw into the external area.
    """

    study: NetworkCase
    external: NetworkCase
    boundary: tuple
    study_gens: tuple
    external_gens: tuple
    ties: tuple


def split_case(case: NetworkCase) -> AreaSplit:
    """Cut the case at its boundary buses.

    Boundary buses stay with the waveform (study) side and double as the
    ports of the external subnetwork; a branch belongs to the external
    side exactly when it touches an external-area bus.  Branches running
    directly between study and external buses would bypass the cut and
    are rejected.
    """
    boundary = tuple(case.boundary_buses())
    if not boundary:
        raise CaseError("case has no boundary buses")
    bset = set(boundary)
    for b in case.buses:
        if b.id in bset and b.area != "study":
            raise CaseError(f"boundary bus {b.id} must belong to area "
                            f"'study', got {b.area!r}")
    study_ids = {b.id for b in case.buses
                 if b.area == "study" and b.id not in bset}
    ext_ids = {b.id for b in case.buses if b.area == "external"}

    ext_branches, study_branches, ties = [], [], []
    for idx, br in enumerate(case.branches):
        ends = {br.from_bus, br.to_bus}
        if ends & study_ids and ends & ext_ids:
            raise CaseError(f"branch {br.from_bus}-{br.to_bus} crosses "
                            "the boundary without a boundary bus")
        if ends & ext_ids:
            ext_branches.append(br)
            if ends & bset:
                ties.append((idx, 1 if br.from_bus in bset else -1))
        else:
            study_branches.append(br)

    study_gens, ext_gens = [], []
    for g in case.generators:
        if g.bus in bset:
            raise CaseError(f"generator {g.id} sits on boundary bus {g.bus}")
        (ext_gens if g.bus in ext_ids else study_gens).append(g)
    for s in case.sources:
        if s.bus in ext_ids:
            raise CaseError(f"source at external bus {s.bus} cannot be "
                            "carried by the reduced representations")

    def pick(keep):
        return [b for b in case.buses if b.id in keep]

    study = NetworkCase(buses=pick(study_ids | bset),
                        branches=study_branches,
                        sources=list(case.sources), generators=study_gens,
                        f_nominal=case.f_nominal, name=case.name + "-study")
    external = NetworkCase(buses=pick(ext_ids | bset),
                           branches=ext_branches, generators=ext_gens,
                           f_nominal=case.f_nominal,
                           name=case.name + "-external")
    return AreaSplit(study=study, external=external, boundary=boundary,
                     study_gens=tuple(study_gens),
                     external_gens=tuple(ext_gens), ties=tuple(ties))


def external_equivalent_case(case: NetworkCase) -> NetworkCase:
    """External area as a passive network, boundary buses as its ports.

    Machine EMFs are shorted so only the stator branches remain; this is
    the system a wide-band port model has to reproduce.
    """
    sp = split_case(case)
    w0 = TWO_PI * case.f_nominal
    branches = list(sp.external.branches)
    for g in sp.external_gens:
        branches.append(Branch(from_bus=g.bus, to_bus=0, r=g.r_stator,
                               l=g.xd_prime / w0, model="series_rl"))
    return NetworkCase(buses=list(sp.external.buses), branches=branches,
                       f_nominal=case.f_nominal, name=case.name + "-fdne")


def external_partition(case: NetworkCase, f0: float | None = None,
                       aggregate: bool = False):
    """Reduce the external network to its boundary and machine buses.

    Returns (PartitionedY, machine bus order).  With ``aggregate`` the
    machine buses are first merged into one supernode, matching a single
    aggregated machine.  The reduction frequency defaults to nominal.
    """
    sp = split_case(case)
    if not sp.external_gens:
        raise CaseError("external area has no machines to keep")
    f = case.f_nominal if f0 is None else f0
    gen_buses = sorted({g.bus for g in sp.external_gens})
    ids = sp.external.bus_ids()
    y = build_ybus(sp.external, f)
    keep = list(sp.boundary) + gen_buses
    y_red = kron_reduce(y, keep, ids)
    if aggregate and len(gen_buses) > 1:
        y_red, new_ids = merge_buses(y_red, keep, [gen_buses])
        gen_buses = [min(gen_buses)]
        part = partition_reduced(y_red, sp.boundary, gen_buses, ids=new_ids)
    else:
        part = partition_reduced(y_red, sp.boundary, gen_buses, ids=keep)
    return part, gen_buses


def _one_pole_entry(y: complex, ts: float, wstar: float) -> RationalTFz:
    # Stable single-pole section matching the complex admittance y exactly
    # at the fundamental on the discrete axis (wstar is the prewarped
    # frequency).  Realized as a series R-L or R-C one-port; entries with
    # negative real part (mutual terms) get a negated numerator instead of
    # an unstable pole.
    if y == 0.0:
        return RationalTFz(a=[], b=[], ts=ts)
    sgn = 1.0
    if y.real < 0.0:
        sgn, y = -1.0, -y
    zi = 1.0 / y
    r, x = zi.real, zi.imag
    if r <= 0.0:
        raise CaseError("fundamental companion needs a lossy external "
                        "network (port resistance came out non-positive)")
    if x == 0.0:
        return RationalTFz(a=[], b=[], ts=ts, b0=sgn / r)
    if x > 0.0:
        # Inductive: series R-L paralleled with half the port conductance.
        # A bare R-L companion is an open circuit at the Nyquist frequency,
        # which leaves a boundary node fed only by series inductances with
        # an undamped alternating mode; the split keeps g_d there instead.
        g_d = y.real / 2.0
        zi = 1.0 / (y - g_d)
        r, x = zi.real, zi.imag
        d0 = r + 2.0 * (x / wstar) / ts
        d1 = r - 2.0 * (x / wstar) / ts
        a1 = d1 / d0
        return RationalTFz(a=[a1], b=[sgn * (1.0 / d0 + g_d * a1)], ts=ts,
                           b0=sgn * (1.0 / d0 + g_d))
    c = -1.0 / (wstar * x)
    q = 2.0 * c / ts
    return RationalTFz(a=[(1.0 - r * q) / (1.0 + r * q)],
                       b=[-sgn * q / (1.0 + r * q)], ts=ts,
                       b0=sgn * q / (1.0 + r * q))


def fundamental_companion(y60: np.ndarray, ports, ts: float,
                          f0: float) -> TFMatrix:
    """Discrete one-pole realization of a fundamental-frequency admittance.

    The returned matrix responds as y60 exactly at f0 and rolls off like
    the matching R-L / R-C one-ports elsewhere.  It lets the phasor-only
    external representation ride the same runtime as the wide-band model:
    the waveform side sees an instantaneous Norton admittance and the
    exchanged phasor current only carries the correction, which keeps the
    multi-rate interface stable.
    """
    y60 = np.asarray(y60, dtype=complex)
    m = len(ports)
    if y60.shape != (m, m):
        raise ValueError(f"y60 must be {m}x{m} for {m} ports")
    wstar = (2.0 / ts) * math.tan(math.pi * f0 * ts)
    entries = [[_one_pole_entry(complex(y60[q, p]), ts, wstar)
                for p in range(m)] for q in range(m)]
    tfm = TFMatrix(entries=entries, ports=tuple(ports))
    if not tfm.is_stable():
        raise CaseError("fundamental companion came out unstable")
    return tfm


def comparison_channels(case: NetworkCase) -> list:
    """Channels every variant of this case produces: boundary power and
    voltage plus the study machines' speed deviations."""
    sp = split_case(case)
    out = []
    for b in sp.boundary:
        out += [f"pb:{b}", f"vb:{b}"]
    out += [f"speed:{g.id}" for g in sorted(sp.study_gens,
                                            key=lambda g: g.id)]
    return out


def _embed_machines(base: NetworkCase, gens):
    """Add an EMF bus and stator branch per machine to a waveform case.

    Returns the extended case plus (gen, emf bus, branch index) triples in
    ascending generator id order.
    """
    buses = list(base.buses)
    branches = list(base.branches)
    known = {b.id for b in base.buses}
    w0 = TWO_PI * base.f_nominal
    placed = []
    for g in sorted(gens, key=lambda g: g.id):
        mb = MACHINE_BUS_BASE + g.id
        if mb in known:
            raise CaseError(f"machine EMF bus {mb} collides with the case")
        buses.append(Bus(id=mb, kind="internal", area="study"))
        placed.append((g, mb, len(branches)))
        branches.append(Branch(from_bus=mb, to_bus=g.bus, r=g.r_stator,
                               l=g.xd_prime / w0))
    case2 = NetworkCase(buses=buses, branches=branches,
                        sources=list(base.sources), generators=list(gens),
                        f_nominal=base.f_nominal, name=base.name + "-emt")
    return case2, placed


def _series_elem(solver: TrapezoidalSolver, branch_index: int) -> int:
    # Element slot of the branch's series part, resolved once so the main
    # loop can index i_elem directly.
    hit = np.nonzero((solver._eowner == branch_index)
                     & (solver._ekind != 2))[0]
    if len(hit) == 0:
        raise CaseError(f"branch {branch_index} has no series element")
    return int(hit[0])


class _EmtMachine:
    """Waveform-side classical machine.

    The EMF source angle advances from the anchored swing state with the
    speed held between phasor-rate updates; the stator current phasor is
    tracked by a sliding one-cycle window for the power measurement.
    """

    def __init__(self, mach: Machine, elem: int, f0: float, ts: float):
        self.mach = mach
        self.elem = elem
        self.extract = SlidingPhasor(f0, ts)
        self.w0 = TWO_PI * f0
        self.t_anchor = 0.0

    def delta_at(self, t: float) -> float:
        m = self.mach
        return m.delta + self.w0 * m.omega * (t - self.t_anchor)

    def source_value(self, t: float) -> float:
        return self.mach.e_mag * math.cos(self.w0 * t + self.delta_at(t))

    def electrical_power(self, t: float) -> float:
        e = self.mach.e_mag * np.exp(1j * self.delta_at(t))
        return float((e * np.conj(self.extract.value())).real
                     ) / self.mach.s_base

    def trim(self, t: float) -> None:
        self.mach = replace(self.mach, delta=self.delta_at(t),
                            p_m=self.electrical_power(t))
        self.t_anchor = t

    def advance(self, t: float, dt: float) -> None:
        # The measured power is held over the step; re-anchoring replaces
        # the zero-order-hold angle extrapolation with the swing update.
        pe = self.electrical_power(t)
        self.mach = swing_trapezoid(self.mach, lambda d: pe, dt, self.w0)
        self.t_anchor = t


class _TsaSide:
    """Phasor machines behind the reduced network, exchanged at the slow
    rate.

    Machines enter as Norton sources E y_m with their stator admittances
    folded into the machine block, so the published boundary current is
    the consistent stator/network solution and its sensitivity to the
    boundary voltage equals the machine-shorted port admittance.  That is
    exactly what the waveform side already carries, and netting it out of
    draw_ph leaves only the EMF dynamics on the exchanged phasor, which
    keeps the multi-rate loop stable."""

    def __init__(self, part, machines, dt, f0, carried):
        self.machines = list(machines)
        self.y_m = np.array([m.stator_y() for m in self.machines])
        self.part = replace(part, y_gg=part.y_gg + np.diag(self.y_m))
        self.dt = dt
        self.f0 = f0
        self.carried = carried
        self.draw_ph = None

    def _solve(self, vb_ph: np.ndarray) -> np.ndarray:
        e = np.array([m.emf() for m in self.machines])
        return gen_bus_voltage(self.part, e * self.y_m, vb_ph)

    def exchange(self, vb_ph: np.ndarray, advance: bool) -> None:
        v_g = self._solve(vb_ph)
        if advance:
            self.machines, _ = tsa_step(self.machines, v_g,
                                        self.dt, self.f0)
            v_g = self._solve(vb_ph)
        else:
            self.machines = [replace(m, p_m=m.electrical_power(v))
                             for m, v in zip(self.machines, v_g)]
        i_b = boundary_current(self.part, vb_ph, v_g)
        self.draw_ph = i_b - self.carried @ vb_ph


def run_hybrid(case: NetworkCase, variant: str, model=None, *,
               ts: float, duration: float, events=(), settle: float = 0.4,
               tsa_every: int = 100, f0: float | None = None) -> TimeSeries:
    """Run one variant; all variants share channel names for comparison.

    model is the fitted boundary TFMatrix, required by the fdne variants;
    its ports must be the boundary buses and its sample period must equal
    ts.  tsa_every is the phasor exchange period in waveform samples, and
    settle the freeze window after which machines are trimmed to
    equilibrium.  Scenario events must be faults starting after settle.

    Channels: v:<bus> node voltages, vb:/ib:/pb:<bus> boundary voltage,
    draw and instantaneous power into the external side, and per machine
    speed:<gen> (per-unit deviation) and delta:<gen> (rad).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; one of {VARIANTS}")
    if duration <= settle:
        raise ValueError("duration must extend past the settle window")
    if tsa_every < 1:
        raise ValueError("tsa_every must be a positive sample count")
    f = case.f_nominal if f0 is None else f0
    w0 = TWO_PI * f
    win = window_samples(f, ts)
    n_freeze = int(round(settle / ts))
    if n_freeze < 2 * win:
        raise ValueError("settle window must cover at least two "
                         f"fundamental cycles ({2 * win} samples)")
    events = list(events)
    for ev in events:
        if ev.kind != "fault":
            raise CaseError("co-simulation scenarios support fault events "
                            f"only, got {ev.kind!r}")
        if ev.t_start < settle:
            raise CaseError("events must start after the settle window")

    uses_tsa = "tsa" in variant
    uses_fdne = "fdne" in variant
    aggregate = variant.endswith("agg")

    pf = solve_powerflow(case, f)
    s_base = case.powerflow.s_base
    sp = split_case(case)
    if variant != "emt":
        detailed = {b.id for b in sp.study.buses}
        for ev in events:
            if ev.bus not in detailed:
                raise CaseError(f"fault bus {ev.bus} is outside the "
                                "detailed area")

    emt_gens = sp.study_gens + (sp.external_gens if variant == "emt" else ())
    base = case if variant == "emt" else sp.study
    emt_case, placed = _embed_machines(base, emt_gens)
    solver = TrapezoidalSolver(emt_case, ts,
                               driven_buses=[mb for _, mb, _ in placed])
    nb = len(sp.boundary)
    bb_idx = np.array([solver.node_index[b] for b in sp.boundary])

    emt_machines = []
    for g, mb, bidx in placed:
        v0 = pf.voltage(g.bus)
        i0 = np.conj(pf.injection(g.bus) / v0)
        emt_machines.append(_EmtMachine(
            machine_from_powerflow(g, v0, i0, s_base),
            _series_elem(solver, bidx), f, ts))
    n_mach = len(emt_machines)

    # Case sources kept on the study side, driven alongside the EMF buses.
    vsrc_by_bus = {s.bus: s for s in emt_case.sources if s.kind == "voltage"}
    tail_srcs = [vsrc_by_bus[b] for b in solver.driven_ids[n_mach:]]
    cur_srcs = [(solver.node_index[s.bus], s) for s in emt_case.sources
                if s.kind == "current"]

    # External representation.  Every reduced variant couples through the
    # same runtime: a port admittance stamped into the solver (feedthrough)
    # plus its history injection, and a phasor current on top.  For the
    # fdne variants the runtime is the fitted wide-band model; for the
    # phasor-only variants it is the one-pole fundamental companion, so the
    # exchanged current is always just a correction on an instantaneous
    # Norton admittance.  During the freeze window the phasor part is the
    # operating-point compensation; with a phasor side attached it is then
    # replaced by the live exchange.
    phasor_draw = None
    rt = None
    tsa = None
    if variant != "emt":
        part_full, gb_full = external_partition(case, f)
        vb0 = np.array([pf.voltage(b) for b in sp.boundary])
        vg0 = np.array([pf.voltage(b) for b in gb_full])
        ix0 = boundary_current(part_full, vb0, vg0)
        if uses_fdne:
            if model is None:
                raise ValueError(f"variant {variant!r} needs a fitted "
                                 "boundary model")
            if tuple(model.ports) != tuple(sp.boundary):
                raise CaseError(f"model ports {tuple(model.ports)} do not "
                                f"match boundary buses {sp.boundary}")
            if abs(model.ts - ts) > 1e-12 * ts:
                raise CaseError(f"model sample period {model.ts} does not "
                                f"match the run's {ts}")
            if not model.is_stable():
                raise ValueError("boundary model has unstable entries; "
                                 "stabilize before running")
        else:
            y60 = analytic_port_admittance(external_equivalent_case(case),
                                           sp.boundary, [f]).y[0]
            model = fundamental_companion(y60, sp.boundary, ts, f)
        rt = FdneRuntime(model)
        carried = model.response(np.array([f]))[0]
        solver.add_coupling(sp.boundary, sp.boundary, rt.b0)
        vb_ph = [PhasorValue.from_complex(complex(c), f) for c in vb0]
        init_steady_state(rt, vb_ph, f)
        s0 = vb0 * np.conj(ix0)
        phasor_draw = phasor_array(fundamental_compensation(
            s0.real, s0.imag, vb_ph, carried))
        if uses_tsa:
            part, _ = external_partition(case, f, aggregate=aggregate)
            machines = []
            for g in sorted(sp.external_gens, key=lambda g: g.bus):
                v0 = pf.voltage(g.bus)
                i0 = np.conj(pf.injection(g.bus) / v0)
                machines.append(machine_from_powerflow(g, v0, i0, s_base))
            if aggregate and len(machines) > 1:
                machines = [aggregate_machines(machines)]
            tsa = _TsaSide(part, machines, tsa_every * ts, f,
                           carried=carried)

    tie_elems = None
    if variant == "emt":
        tie_elems = [[] for _ in range(nb)]
        pos = {b: j for j, b in enumerate(sp.boundary)}
        for idx, sign in sp.ties:
            br = case.branches[idx]
            bus = br.from_bus if sign > 0 else br.to_bus
            tie_elems[pos[bus]].append((_series_elem(solver, idx), sign))

    n_total = int(round(duration / ts))
    dt = tsa_every * ts
    vb_extr = [SlidingPhasor(f, ts) for _ in range(nb)]
    n_nodes = len(solver.node_ids)
    volts = np.empty((n_total, n_nodes))
    ib = np.zeros((n_total, nb))
    gids = [em.mach.gen.id for em in emt_machines]
    if tsa is not None:
        gids += [m.gen.id for m in tsa.machines]
    speed = {gid: np.empty(n_total) for gid in gids}
    angle = {gid: np.empty(n_total) for gid in gids}

    vd = np.empty(len(solver.driven_ids))
    inj = np.zeros(n_nodes)
    for k in range(n_total):
        t = k * ts
        if events:
            apply_events_at(solver, events, k, ts)
        if k >= n_freeze and (k - n_freeze) % tsa_every == 0:
            first = k == n_freeze
            for em in emt_machines:
                em.trim(t) if first else em.advance(t, dt)
            if tsa is not None:
                vb_now = np.array([e.value() for e in vb_extr])
                if not np.all(np.isfinite(vb_now)):
                    raise HybridRunError("non-finite boundary phasor at "
                                         f"sample {k}")
                tsa.exchange(vb_now, advance=not first)
                phasor_draw = tsa.draw_ph

        for j, em in enumerate(emt_machines):
            vd[j] = em.source_value(t)
        for j, s in enumerate(tail_srcs):
            vd[n_mach + j] = s.value(t)
        inj[:] = 0.0
        draw = np.zeros(nb)
        if rt is not None:
            hist = rt.history()
            hrow = hist.sum(axis=1)
            draw += hrow
            inj[bb_idx] -= hrow
        if phasor_draw is not None:
            c = (phasor_draw * np.exp(1j * w0 * t)).real
            draw += c
            inj[bb_idx] -= c
        for node, s in cur_srcs:
            inj[node] += s.value(t)

        v, _, i_elem = solver.step(vd, inj)
        if not np.all(np.isfinite(v)):
            raise HybridRunError(f"non-finite node voltage at sample {k}")
        v_b = v[bb_idx]
        if rt is not None:
            rt.commit(v_b, hist)
            draw += rt.b0 @ v_b
        if tie_elems is not None:
            for jb in range(nb):
                draw[jb] = math.fsum(sg * i_elem[ei]
                                     for ei, sg in tie_elems[jb])
        for jb in range(nb):
            vb_extr[jb].update(v_b[jb])

        volts[k] = v
        ib[k] = draw
        for em in emt_machines:
            em.extract.update(i_elem[em.elem])
            gid = em.mach.gen.id
            speed[gid][k] = em.mach.omega
            angle[gid][k] = em.delta_at(t)
        if tsa is not None:
            for m in tsa.machines:
                speed[m.gen.id][k] = m.omega
                angle[m.gen.id][k] = m.delta

    channels = {}
    for j, bus in enumerate(solver.node_ids):
        channels[f"v:{bus}"] = volts[:, j]
    for jb, b in enumerate(sp.boundary):
        col = volts[:, solver.node_index[b]]
        channels[f"vb:{b}"] = col
        channels[f"ib:{b}"] = ib[:, jb]
        channels[f"pb:{b}"] = col * ib[:, jb]
    for gid in gids:
        channels[f"speed:{gid}"] = speed[gid]
        channels[f"delta:{gid}"] = angle[gid]
    return TimeSeries(ts=ts, channels=channels)
