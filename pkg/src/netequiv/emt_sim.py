"""Fixed-step waveform simulation of RLC networks.

Companion-model nodal solver with the trapezoidal rule: an inductive
series branch becomes a conductance 1/(R + 2L/Ts) with a history current,
a capacitor becomes 2C/Ts with its own history term.  Voltage sources make
their buses known nodes; everything else is solved from the factorized
conductance matrix once per step.

The same stepping core drives three front ends:
  * simulate()          case sources plus timed events
  * frequency_sweep()   stepped-sine port excitation for identification
  * external steppers   (hybrid couplers) that drive known-node voltages
    and nodal current injections sample by sample
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .netmodel import Branch, CaseError, NetworkCase, Source

_ELEM_R, _ELEM_RL, _ELEM_C = 0, 1, 2


class TopologyError(ValueError):
    """Network cannot be solved (isolated node, conflicting sources, ...)."""


class SweepSpecError(ValueError):
    """Invalid sweep description."""


@dataclass
class TimeSeries:
    """Uniformly sampled named channels."""

    ts: float
    channels: dict[str, np.ndarray]
    t0: float = 0.0

    def __post_init__(self):
        if self.ts <= 0.0:
            raise ValueError(f"sample period must be positive, got {self.ts}")
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"channel lengths differ: {sorted(lengths)}")
        self.channels = {k: np.asarray(v, dtype=float)
                         for k, v in self.channels.items()}

    def __len__(self) -> int:
        for v in self.channels.values():
            return len(v)
        return 0

    def time(self) -> np.ndarray:
        return self.t0 + self.ts * np.arange(len(self))

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise KeyError(f"no channel {name!r}; have "
                           f"{sorted(self.channels)}") from None


@dataclass(frozen=True)
class Event:
    """Timed network change.

    kind 'fault'       : shunt of resistance ``value`` ohms at ``bus`` from
                         t_start for ``duration`` seconds
    kind 'branch_open' : branch index ``target`` opens at t_start
    kind 'source_step' : source index ``target`` magnitude becomes ``value``
    """

    kind: str
    t_start: float
    bus: int = 0
    target: int = -1
    duration: float = 0.0
    value: float = 1e-4

    def __post_init__(self):
        if self.kind not in ("fault", "branch_open", "source_step"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.t_start < 0.0:
            raise ValueError("event start must be >= 0")
        if self.kind == "fault" and self.value <= 0.0:
            raise ValueError("fault resistance must be positive")


@dataclass
class SweepSpec:
    """Stepped-sine schedule for port admittance identification.

    Either an integer number of cycles per frequency point (default 5, the
    first of which is measurement settling) or a fixed dwell in seconds.
    """

    f_start: float = 1.0
    f_stop: float = 2500.0
    f_step: float = 1.0
    amplitude: float = 1.0
    cycles: int = 5
    dwell_s: float | None = None
    ts: float = 50e-6
    discard_cycles: int = 1

    def __post_init__(self):
        if self.ts <= 0.0:
            raise SweepSpecError("ts must be positive")
        if not (0.0 < self.f_start <= self.f_stop):
            raise SweepSpecError("need 0 < f_start <= f_stop")
        if self.f_step <= 0.0:
            raise SweepSpecError("f_step must be positive")
        if self.f_stop >= 0.5 / self.ts:
            raise SweepSpecError(f"f_stop {self.f_stop} beyond Nyquist "
                                 f"{0.5 / self.ts:g}")
        if self.amplitude <= 0.0:
            raise SweepSpecError("amplitude must be positive")
        if self.dwell_s is None:
            if self.cycles < 1:
                raise SweepSpecError("need at least one cycle per point")
            if self.discard_cycles >= self.cycles:
                raise SweepSpecError("discard_cycles must leave data")
        elif self.dwell_s <= 0.0:
            raise SweepSpecError("dwell must be positive")

    def frequencies(self) -> np.ndarray:
        n = int(math.floor((self.f_stop - self.f_start) / self.f_step + 1e-9))
        return self.f_start + self.f_step * np.arange(n + 1)

    def schedule(self) -> list[tuple[float, int]]:
        """(frequency, sample count) per dwell point."""
        out = []
        for f in self.frequencies():
            if self.dwell_s is not None:
                n = max(2, int(round(self.dwell_s / self.ts)))
            else:
                n = max(2, int(round(self.cycles / (f * self.ts))))
            out.append((float(f), n))
        return out

    def segments(self) -> list[tuple[float, int, int]]:
        """(frequency, first sample, one past last) in the sweep record."""
        out, k = [], 0
        for f, n in self.schedule():
            out.append((f, k, k + n))
            k += n
        return out


@dataclass
class SweepRecord:
    """Contiguous record of one port excitation run."""

    port: int
    series: TimeSeries
    segments: list[tuple[float, int, int]]

    def voltage(self) -> np.ndarray:
        return self.series.channel("v")

    def current(self, port: int) -> np.ndarray:
        return self.series.channel(f"i:{port}")


# ---------------------------------------------------------------------------
# companion-model core


def _expand_elements(branches, ts: float):
    """Flatten branches to primitive companion elements.

    Returns parallel arrays: from-node bus id, to-node bus id (0 = ground),
    kind, conductance, history gain, owning branch index.
    """
    ni, nj, kind, g, hgain, owner = [], [], [], [], [], []

    def add(i, j, k, gv, hv, br):
        ni.append(i)
        nj.append(j)
        kind.append(k)
        g.append(gv)
        hgain.append(hv)
        owner.append(br)

    for bidx, br in enumerate(branches):
        if br.model == "shunt_rc":
            if br.r > 0.0:
                add(br.from_bus, 0, _ELEM_R, 1.0 / br.r, 0.0, bidx)
            if br.c > 0.0:
                add(br.from_bus, 0, _ELEM_C, 2.0 * br.c / ts, 0.0, bidx)
            continue
        if br.l > 0.0:
            gv = 1.0 / (br.r + 2.0 * br.l / ts)
            add(br.from_bus, br.to_bus, _ELEM_RL, gv,
                (2.0 * br.l / ts - br.r) * gv, bidx)
        else:
            add(br.from_bus, br.to_bus, _ELEM_R, 1.0 / br.r, 0.0, bidx)
        if br.model == "pi" and br.c > 0.0:
            add(br.from_bus, 0, _ELEM_C, br.c / ts, 0.0, bidx)
            add(br.to_bus, 0, _ELEM_C, br.c / ts, 0.0, bidx)

    return (np.array(ni), np.array(nj), np.array(kind), np.array(g),
            np.array(hgain), np.array(owner))


class TrapezoidalSolver:
    """Stepping core over one NetworkCase.

    ``driven_buses`` become known-voltage nodes (in the given order) on top
    of any voltage-source buses of the case; their per-step values are
    supplied by the caller of step().
    """

    def __init__(self, case: NetworkCase, ts: float, driven_buses=()):
        if ts <= 0.0:
            raise ValueError("ts must be positive")
        self.case = case
        self.ts = ts
        self.node_ids = case.bus_ids()
        self.node_index = {b: k for k, b in enumerate(self.node_ids)}
        n = len(self.node_ids)

        vsrc_buses = [s.bus for s in case.sources if s.kind == "voltage"]
        if len(set(vsrc_buses)) != len(vsrc_buses):
            raise TopologyError("multiple voltage sources on one bus")
        driven = list(dict.fromkeys(list(driven_buses) + vsrc_buses))
        self.driven_ids = driven
        self.unknown_ids = [b for b in self.node_ids if b not in set(driven)]
        self._didx = np.array([self.node_index[b] for b in driven], dtype=int)
        self._uidx = np.array([self.node_index[b] for b in self.unknown_ids],
                              dtype=int)

        (eni, enj, self._ekind, self._eg, self._ehgain,
         self._eowner) = _expand_elements(case.branches, ts)
        # ground maps to a trailing phantom slot holding 0 V
        self._ei = np.array([self.node_index[b] for b in eni], dtype=int)
        self._ej = np.array([n if b == 0 else self.node_index[b]
                             for b in enj], dtype=int)
        self._open = np.zeros(len(self._eg), dtype=bool)
        self._vprev = np.zeros(len(self._eg))
        self._iprev = np.zeros(len(self._eg))

        self._g_base = self._assemble_g()
        self._g_extra = np.zeros_like(self._g_base)
        self._fault_g: dict[int, float] = {}
        self._refactor()

    # -- matrix management ------------------------------------------------

    def _assemble_g(self) -> np.ndarray:
        n = len(self.node_ids)
        g = np.zeros((n, n))
        for e in range(len(self._eg)):
            if self._open[e]:
                continue
            ge = self._eg[e]
            i, j = self._ei[e], self._ej[e]
            g[i, i] += ge
            if j < n:
                g[j, j] += ge
                g[i, j] -= ge
                g[j, i] -= ge
        return g

    def _refactor(self) -> None:
        n = len(self.node_ids)
        g = self._g_base + self._g_extra
        for bus, gf in self._fault_g.items():
            g[self.node_index[bus], self.node_index[bus]] += gf
        self._g = g
        if len(self._uidx) == 0:
            self._lu = None
        else:
            guu = g[np.ix_(self._uidx, self._uidx)]
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", sla.LinAlgWarning)
                    lu, piv = sla.lu_factor(guu, check_finite=False)
            except sla.LinAlgError as exc:
                raise TopologyError(f"singular network: {exc}") from exc
            pivots = np.abs(np.diag(lu))
            scale = np.abs(guu).max()
            if scale == 0.0 or pivots.min() < 1e-12 * scale:
                bad = [self.unknown_ids[k] for k in
                       np.nonzero(pivots < 1e-12 * max(scale, 1e-300))[0]]
                raise TopologyError(f"floating or degenerate nodes near "
                                    f"buses {bad or self.unknown_ids}")
            self._lu = (lu, piv)
        self._gud = g[np.ix_(self._uidx, self._didx)]

    def apply_fault(self, bus: int, r_fault: float) -> None:
        if bus not in self.node_index:
            raise TopologyError(f"fault at unknown bus {bus}")
        self._fault_g[bus] = 1.0 / r_fault
        self._refactor()

    def clear_fault(self, bus: int) -> None:
        self._fault_g.pop(bus, None)
        self._refactor()

    def open_branch(self, branch_index: int) -> None:
        hit = self._eowner == branch_index
        if not hit.any():
            raise TopologyError(f"no branch with index {branch_index}")
        self._open |= hit
        self._vprev[hit] = 0.0
        self._iprev[hit] = 0.0
        self._g_base = self._assemble_g()
        self._refactor()

    def add_coupling(self, row_buses, col_buses, g_matrix) -> None:
        """Stamp a linear current coupling i[row] += G @ v[col].

        Used for direct-feedthrough conductance of identified port models.
        """
        g_matrix = np.asarray(g_matrix, dtype=float)
        ri = [self.node_index[b] for b in row_buses]
        ci = [self.node_index[b] for b in col_buses]
        self._g_extra[np.ix_(ri, ci)] += g_matrix
        self._refactor()

    # -- stepping ----------------------------------------------------------

    def zero_state(self) -> None:
        self._vprev[:] = 0.0
        self._iprev[:] = 0.0

    def step(self, v_driven, i_inject=None):
        """Advance one sample.

        v_driven: voltages of driven nodes (order of ``driven_ids``).
        i_inject: optional current injected into each node (``node_ids``).
        Returns (node voltages, source currents into the network at driven
        nodes, element currents).
        """
        n = len(self.node_ids)
        hist = np.zeros(len(self._eg))
        dyn = ~self._open
        rl = dyn & (self._ekind == _ELEM_RL)
        cp = dyn & (self._ekind == _ELEM_C)
        hist[rl] = self._eg[rl] * self._vprev[rl] \
            + self._ehgain[rl] * self._iprev[rl]
        hist[cp] = -(self._eg[cp] * self._vprev[cp] + self._iprev[cp])

        b = np.zeros(n) if i_inject is None else np.asarray(i_inject, float).copy()
        np.subtract.at(b, self._ei, hist)
        valid_j = self._ej < n
        np.add.at(b, self._ej[valid_j], hist[valid_j])

        v = np.empty(n)
        vd = np.asarray(v_driven, dtype=float)
        if len(vd) != len(self._didx):
            raise ValueError(f"expected {len(self._didx)} driven voltages, "
                             f"got {len(vd)}")
        v[self._didx] = vd
        if self._lu is not None:
            rhs = b[self._uidx] - self._gud @ vd
            v[self._uidx] = sla.lu_solve(self._lu, rhs, check_finite=False)

        v_aug = np.append(v, 0.0)
        vb = v_aug[self._ei] - v_aug[self._ej]
        i_elem = np.where(dyn, self._eg * vb + hist, 0.0)
        self._vprev = np.where(dyn, vb, 0.0)
        self._iprev = i_elem

        i_src = (self._g[self._didx] @ v) - b[self._didx] \
            if len(self._didx) else np.zeros(0)
        return v, i_src, i_elem

    def series_current(self, i_elem: np.ndarray, branch_index: int) -> float:
        """Current of a branch's series element (from -> to)."""
        hit = (self._eowner == branch_index) & (self._ekind != _ELEM_C)
        idx = np.nonzero(hit)[0]
        if len(idx) == 0:
            raise TopologyError(f"branch {branch_index} has no series element")
        return float(i_elem[idx[0]])


# ---------------------------------------------------------------------------
# front ends


def apply_events_at(solver, events, k, ts):
    """Apply any event scheduled for sample k; returns source magnitude
    overrides {source index: new magnitude} or None."""
    mags = None
    for ev in events:
        k_on = int(round(ev.t_start / ts))
        if ev.kind == "fault":
            k_off = int(round((ev.t_start + ev.duration) / ts))
            if k == k_on:
                solver.apply_fault(ev.bus, ev.value)
            elif k == k_off:
                solver.clear_fault(ev.bus)
        elif ev.kind == "branch_open" and k == k_on:
            solver.open_branch(ev.target)
        elif ev.kind == "source_step" and k == k_on:
            mags = mags or {}
            mags[ev.target] = ev.value
    return mags


def simulate(case: NetworkCase, ts: float, duration: float,
             events=()) -> TimeSeries:
    """Run the case with its own sources and timed events.

    Records every bus voltage (``v:<bus>``), every branch series current
    (``i:<from>-<to>#<index>``), and the current delivered by each voltage
    source (``isrc:<bus>``).
    """
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    nsteps = int(round(duration / ts))
    events = list(events)
    for ev in events:
        if ev.kind == "fault" and ev.bus not in {b.id for b in case.buses}:
            raise TopologyError(f"fault event at unknown bus {ev.bus}")
        if ev.kind == "branch_open" and not 0 <= ev.target < len(case.branches):
            raise TopologyError(f"branch_open event at bad index {ev.target}")
        if ev.kind == "source_step" and not 0 <= ev.target < len(case.sources):
            raise TopologyError(f"source_step event at bad index {ev.target}")

    solver = TrapezoidalSolver(case, ts)
    src_mag = {i: s.mag for i, s in enumerate(case.sources)}
    vsrc_by_bus = {s.bus: (i, s) for i, s in enumerate(case.sources)
                   if s.kind == "voltage"}
    driven_src = [vsrc_by_bus[b] for b in solver.driven_ids]
    isrc = [(i, s) for i, s in enumerate(case.sources) if s.kind == "current"]

    n = len(solver.node_ids)
    volts = np.empty((nsteps, n))
    series_i = np.empty((nsteps, len(case.branches)))
    src_i = np.empty((nsteps, len(solver.driven_ids)))

    for k in range(nsteps):
        t = k * ts
        stepped = apply_events_at(solver, events, k, ts)
        if stepped:
            src_mag.update(stepped)
        vd = np.array([src_mag[idx]
                       * math.cos(2.0 * math.pi * s.freq * t + s.phase)
                       for idx, s in driven_src])
        inj = np.zeros(n)
        for idx, s in isrc:
            inj[solver.node_index[s.bus]] += src_mag[idx] \
                * math.cos(2.0 * math.pi * s.freq * t + s.phase)
        v, i_s, i_elem = solver.step(vd, inj)
        volts[k] = v
        src_i[k] = i_s
        for bidx in range(len(case.branches)):
            series_i[k, bidx] = _branch_series_sample(solver, i_elem, bidx)

    channels = {}
    for j, bus in enumerate(solver.node_ids):
        channels[f"v:{bus}"] = volts[:, j]
    for bidx, br in enumerate(case.branches):
        channels[f"i:{br.from_bus}-{br.to_bus}#{bidx}"] = series_i[:, bidx]
    for j, bus in enumerate(solver.driven_ids):
        channels[f"isrc:{bus}"] = src_i[:, j]
    return TimeSeries(ts=ts, channels=channels)


def _branch_series_sample(solver, i_elem, bidx):
    hit = (solver._eowner == bidx) & (solver._ekind != _ELEM_C)
    idx = np.nonzero(hit)[0]
    return float(i_elem[idx[0]]) if len(idx) else 0.0


def _de_energized(case: NetworkCase) -> NetworkCase:
    """Internal voltage sources become shorts, current sources vanish."""
    shorted = [Source(bus=s.bus, kind="voltage", mag=0.0, phase=0.0,
                      freq=s.freq)
               for s in case.sources if s.kind == "voltage"]
    return NetworkCase(buses=list(case.buses), branches=list(case.branches),
                       sources=shorted, generators=list(case.generators),
                       powerflow=None, f_nominal=case.f_nominal,
                       name=case.name + "-deenergized")


def frequency_sweep(case: NetworkCase, ports, spec: SweepSpec
                    ) -> dict[int, SweepRecord]:
    """Stepped-sine identification records, one per excited port.

    The case is de-energized first.  For each excitation the remaining
    ports are shorted, so channel ``i:<q>`` is the current into the network
    at port q and the record pair (v, i:q) identifies admittance entry
    (q, p).  The excitation is phase-continuous across frequency steps and
    the record is contiguous in time.
    """
    ports = list(ports)
    if not ports:
        raise ValueError("no ports to excite")
    known = {b.id for b in case.buses}
    missing = [p for p in ports if p not in known]
    if missing:
        raise CaseError(f"ports {missing} not in case")
    dead = _de_energized(case)
    clamped = {s.bus for s in dead.sources}
    overlap = sorted(set(ports) & clamped)
    if overlap:
        raise CaseError(f"ports {overlap} are voltage-source buses")

    segs = spec.segments()
    total = segs[-1][2]
    out = {}
    for p in ports:
        solver = TrapezoidalSolver(dead, spec.ts, driven_buses=ports)
        dcount = len(solver.driven_ids)
        port_col = {b: j for j, b in enumerate(solver.driven_ids)}
        vex = np.zeros(total)
        cur = np.empty((total, dcount))
        vd = np.zeros(dcount)
        phase = 0.0
        k = 0
        for f, nseg in spec.schedule():
            dphi = 2.0 * math.pi * f * spec.ts
            for _ in range(nseg):
                vd[port_col[p]] = spec.amplitude * math.sin(phase)
                _, i_src, _ = solver.step(vd)
                vex[k] = vd[port_col[p]]
                cur[k] = i_src
                phase += dphi
                k += 1
        channels = {"v": vex}
        for q in ports:
            channels[f"i:{q}"] = cur[:, port_col[q]]
        out[p] = SweepRecord(port=p,
                             series=TimeSeries(ts=spec.ts, channels=channels),
                             segments=segs)
    return out


def steady_amplitude_ratio(rec: SweepRecord, port: int, spec: SweepSpec,
                           seg_index: int) -> float:
    """|I|/|V| over the settled part of one dwell segment."""
    f, i0, i1 = rec.segments[seg_index]
    nskip = int(round(spec.discard_cycles / (f * spec.ts))) \
        if spec.dwell_s is None else (i1 - i0) // 5
    sl = slice(i0 + nskip, i1)
    v = rec.voltage()[sl]
    i = rec.current(port)[sl]
    t = np.arange(i0 + nskip, i1) * spec.ts
    # correlate against quadrature pair; robust to partial cycles
    c = np.cos(2.0 * np.pi * f * t)
    s = np.sin(2.0 * np.pi * f * t)
    basis = np.column_stack([c, s])
    va, *_ = np.linalg.lstsq(basis, v, rcond=None)
    ia, *_ = np.linalg.lstsq(basis, i, rcond=None)
    return float(np.hypot(*ia) / np.hypot(*va))
