"""Positive-sequence network model and frequency-domain reduction.

A network is a flat list of buses, RLC branches, and ideal sources.  All
quantities are SI (ohms, henries, farads, volts, hertz).  The nodal
admittance matrix is assembled per frequency, and boundary-preserving
reduction is a Schur complement on the eliminated bus block.

Key design choices:
  * bus ids are positive integers; ground is node 0 and is never a bus
  * matrix rows/columns follow sorted bus-id order unless an explicit
    ordering is passed alongside the matrix
  * elimination uses LU with partial pivoting; a pivot smaller than
    1e-12 times the largest eliminated-block entry is treated as a
    singular (isolated or degenerate) subnetwork
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

BUS_KINDS = ("internal", "boundary", "generator")
BUS_AREAS = ("study", "external")
BRANCH_MODELS = ("series_rl", "pi", "shunt_rc")
SOURCE_KINDS = ("voltage", "current")

# Relative pivot threshold below which elimination is refused.
SINGULAR_PIVOT_RTOL = 1e-12


class CaseError(ValueError):
    """Malformed network description."""


class DegenerateBranchError(CaseError):
    """Branch with no impedance at the requested frequency."""


class EliminationSingularityError(ValueError):
    """Eliminated bus block is singular (disconnected or degenerate)."""

    def __init__(self, bus_ids, detail=""):
        self.bus_ids = tuple(bus_ids)
        msg = f"singular elimination block for buses {sorted(self.bus_ids)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class PartitionError(ValueError):
    """Boundary/generator split does not cover the reduced matrix."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = "internal"
    area: str = "study"

    def __post_init__(self):
        if self.id <= 0:
            raise CaseError(f"bus id must be positive, got {self.id}")
        if self.kind not in BUS_KINDS:
            raise CaseError(f"bus {self.id}: unknown kind {self.kind!r}")
        if self.area not in BUS_AREAS:
            raise CaseError(f"bus {self.id}: unknown area {self.area!r}")


@dataclass(frozen=True)
class Branch:
    """RLC branch.

    series_rl : R in series with L between from_bus and to_bus
    pi        : series RL plus C/2 shunt at each end
    shunt_rc  : R parallel C from from_bus to ground (to_bus must be 0;
                r == 0 means no resistive part)
    """

    from_bus: int
    to_bus: int
    r: float = 0.0
    l: float = 0.0
    c: float = 0.0
    model: str = "series_rl"

    def __post_init__(self):
        if self.model not in BRANCH_MODELS:
            raise CaseError(f"branch {self.from_bus}-{self.to_bus}: "
                            f"unknown model {self.model!r}")
        if min(self.r, self.l, self.c) < 0.0:
            raise CaseError(f"branch {self.from_bus}-{self.to_bus}: "
                            "negative R, L, or C")
        if self.model == "shunt_rc":
            if self.to_bus != 0:
                raise CaseError(f"shunt branch at bus {self.from_bus} must "
                                f"have to_bus 0, got {self.to_bus}")
            if self.r == 0.0 and self.c == 0.0:
                raise DegenerateBranchError(
                    f"shunt branch at bus {self.from_bus} has no element")
        else:
            if self.from_bus == self.to_bus:
                raise CaseError(f"branch {self.from_bus}-{self.to_bus}: "
                                "self-loop")
            if self.r == 0.0 and self.l == 0.0:
                raise DegenerateBranchError(
                    f"branch {self.from_bus}-{self.to_bus} has zero series "
                    "impedance")


@dataclass(frozen=True)
class Source:
    """Ideal sinusoidal source between a bus and ground."""

    bus: int
    kind: str = "voltage"
    mag: float = 1.0
    phase: float = 0.0   # rad
    freq: float = 60.0   # Hz

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise CaseError(f"source at bus {self.bus}: "
                            f"unknown kind {self.kind!r}")

    def value(self, t: float) -> float:
        return self.mag * math.cos(2.0 * math.pi * self.freq * t + self.phase)


@dataclass(frozen=True)
class Generator:
    """Classical machine data attached to a bus.

    h is the inertia constant in seconds and d the damping factor, both on
    the case power base.  xd_prime is the transient reactance in ohms at
    nominal frequency.  p_set/v_set seed the power-flow solution.
    """

    id: int
    bus: int
    h: float
    d: float = 0.0
    xd_prime: float = 0.3
    r_stator: float = 0.0
    p_set: float = 0.0
    v_set: float = 1.0

    def __post_init__(self):
        if self.h <= 0.0:
            raise CaseError(f"generator {self.id}: inertia must be positive")
        if self.xd_prime <= 0.0:
            raise CaseError(f"generator {self.id}: xd_prime must be positive")


@dataclass(frozen=True)
class PowerFlowSpec:
    slack_bus: int
    s_base: float = 1.0
    tol: float = 1e-10
    max_iter: int = 40


@dataclass
class NetworkCase:
    """Complete positive-sequence case."""

    buses: list[Bus] = field(default_factory=list)
    branches: list[Branch] = field(default_factory=list)
    sources: list[Source] = field(default_factory=list)
    generators: list[Generator] = field(default_factory=list)
    powerflow: PowerFlowSpec | None = None
    f_nominal: float = 60.0
    name: str = ""

    def __post_init__(self):
        self.validate()

    # -- lookup helpers ---------------------------------------------------

    def bus_ids(self) -> list[int]:
        return sorted(b.id for b in self.buses)

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise CaseError(f"no bus {bus_id}")

    def buses_of_kind(self, kind: str) -> list[int]:
        return sorted(b.id for b in self.buses if b.kind == kind)

    def boundary_buses(self) -> list[int]:
        return self.buses_of_kind("boundary")

    def generator_buses(self) -> list[int]:
        return self.buses_of_kind("generator")

    def validate(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise CaseError(f"duplicate bus ids {dupes}")
        known = set(ids)
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end != 0 and end not in known:
                    raise CaseError(f"branch {br.from_bus}-{br.to_bus} "
                                    f"references unknown bus {end}")
        for s in self.sources:
            if s.bus not in known:
                raise CaseError(f"source references unknown bus {s.bus}")
        gids = [g.id for g in self.generators]
        if len(set(gids)) != len(gids):
            raise CaseError("duplicate generator ids")
        for g in self.generators:
            if g.bus not in known:
                raise CaseError(f"generator {g.id} references unknown "
                                f"bus {g.bus}")
        if self.powerflow is not None and self.powerflow.slack_bus not in known:
            raise CaseError(f"slack bus {self.powerflow.slack_bus} unknown")

    def subcase(self, keep_buses, name: str = "") -> "NetworkCase":
        """Cut out the subnetwork on ``keep_buses``.

        Branches with one end outside the set are dropped, so the cut is
        made at the kept buses themselves.  Sources and generators on kept
        buses are carried over.
        """
        keep = set(keep_buses)
        missing = keep - set(b.id for b in self.buses)
        if missing:
            raise CaseError(f"subcase references unknown buses {sorted(missing)}")
        buses = [b for b in self.buses if b.id in keep]
        branches = [br for br in self.branches
                    if br.from_bus in keep and (br.to_bus == 0 or br.to_bus in keep)]
        sources = [s for s in self.sources if s.bus in keep]
        gens = [g for g in self.generators if g.bus in keep]
        return NetworkCase(buses=buses, branches=branches, sources=sources,
                           generators=gens, powerflow=None,
                           f_nominal=self.f_nominal,
                           name=name or (self.name + "-sub"))


@dataclass(frozen=True)
class PartitionedY:
    """Reduced admittance split into boundary/generator blocks."""

    y_bb: np.ndarray
    y_bg: np.ndarray
    y_gb: np.ndarray
    y_gg: np.ndarray
    boundary: tuple[int, ...]
    generator: tuple[int, ...]

    def assemble(self) -> np.ndarray:
        top = np.hstack([self.y_bb, self.y_bg])
        bot = np.hstack([self.y_gb, self.y_gg])
        return np.vstack([top, bot])


@dataclass
class AdmittanceSampleSet:
    """Port admittance matrices tabulated over a frequency grid.

    ``ts`` is the sampling period when the samples came from a z-domain
    model (None for analytic continuous-frequency evaluations).
    """

    f_hz: np.ndarray
    y: np.ndarray          # shape (nf, m, m), complex
    ports: tuple[int, ...] = ()
    ts: float | None = None

    def __post_init__(self):
        self.f_hz = np.asarray(self.f_hz, dtype=float)
        self.y = np.asarray(self.y, dtype=complex)
        if self.y.ndim == 1:
            self.y = self.y.reshape(-1, 1, 1)
        if self.y.ndim != 3 or self.y.shape[1] != self.y.shape[2]:
            raise ValueError(f"sample array must be (nf, m, m), "
                             f"got {self.y.shape}")
        if self.f_hz.ndim != 1 or len(self.f_hz) != self.y.shape[0]:
            raise ValueError("frequency grid and sample count disagree")
        if np.any(self.f_hz < 0.0):
            raise ValueError("negative frequency in grid")
        if self.ts is not None and np.any(self.f_hz >= 0.5 / self.ts):
            raise ValueError("grid exceeds the Nyquist limit 1/(2 Ts)")

    @property
    def n_ports(self) -> int:
        return self.y.shape[1]


# ---------------------------------------------------------------------------
# admittance assembly


def _series_admittance(branch: Branch, omega: float) -> complex:
    z = complex(branch.r, omega * branch.l)
    if z == 0.0:
        raise DegenerateBranchError(
            f"branch {branch.from_bus}-{branch.to_bus} has zero impedance "
            f"at omega={omega:g} rad/s")
    return 1.0 / z


def branch_stamps(branch: Branch, f_hz: float):
    """Yield (bus_i, bus_j, y) admittance stamps; bus 0 is ground."""
    omega = 2.0 * math.pi * f_hz
    if branch.model == "shunt_rc":
        y = complex(0.0, omega * branch.c)
        if branch.r > 0.0:
            y += 1.0 / branch.r
        yield branch.from_bus, 0, y
        return
    y_se = _series_admittance(branch, omega)
    yield branch.from_bus, branch.to_bus, y_se
    if branch.model == "pi":
        y_sh = complex(0.0, omega * branch.c / 2.0)
        yield branch.from_bus, 0, y_sh
        yield branch.to_bus, 0, y_sh


def build_ybus(case: NetworkCase, f_hz: float) -> np.ndarray:
    """Nodal admittance matrix at f_hz, ordered by sorted bus id.

    Sources are not stamped; they are boundary conditions, not admittances.
    """
    if f_hz < 0.0:
        raise ValueError(f"negative frequency {f_hz}")
    ids = case.bus_ids()
    index = {b: k for k, b in enumerate(ids)}
    n = len(ids)
    y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        for bi, bj, ybr in branch_stamps(br, f_hz):
            if bj == 0:
                y[index[bi], index[bi]] += ybr
            else:
                i, j = index[bi], index[bj]
                y[i, i] += ybr
                y[j, j] += ybr
                y[i, j] -= ybr
                y[j, i] -= ybr
    return y


# ---------------------------------------------------------------------------
# reduction


def _resolve_ids(n: int, ids) -> list:
    if ids is None:
        return list(range(n))
    ids = list(ids)
    if len(ids) != n:
        raise ValueError(f"{n}x{n} matrix labelled with {len(ids)} ids")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids in matrix labelling")
    return ids


def kron_reduce(y: np.ndarray, keep, ids=None) -> np.ndarray:
    """Eliminate all buses not in ``keep`` by Schur complement.

    ``ids`` labels the rows/columns of ``y`` (defaults to 0..n-1).  The
    result is ordered exactly as ``keep``.
    """
    y = np.asarray(y, dtype=complex)
    if y.ndim != 2 or y.shape[0] != y.shape[1]:
        raise ValueError(f"admittance matrix must be square, got {y.shape}")
    ids = _resolve_ids(y.shape[0], ids)
    keep = list(keep)
    if not keep:
        raise ValueError("keep set is empty")
    if len(set(keep)) != len(keep):
        raise ValueError("duplicate ids in keep set")
    pos = {b: k for k, b in enumerate(ids)}
    missing = [b for b in keep if b not in pos]
    if missing:
        raise ValueError(f"keep ids {missing} not present in matrix labelling")

    kidx = np.array([pos[b] for b in keep], dtype=int)
    elim = [b for b in ids if b not in set(keep)]
    if not elim:
        return y[np.ix_(kidx, kidx)].copy()
    eidx = np.array([pos[b] for b in elim], dtype=int)

    y_kk = y[np.ix_(kidx, kidx)]
    y_ke = y[np.ix_(kidx, eidx)]
    y_ek = y[np.ix_(eidx, kidx)]
    y_ee = y[np.ix_(eidx, eidx)]

    # LU with partial pivoting; tiny pivots mean the eliminated block has
    # no path to the kept network at this frequency.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(y_ee, check_finite=False)
    scale = np.abs(y_ee).max()
    pivots = np.abs(np.diag(lu))
    if scale == 0.0 or np.any(pivots < SINGULAR_PIVOT_RTOL * scale):
        raise EliminationSingularityError(
            elim, f"min pivot {pivots.min() if scale else 0.0:.3e}, "
                  f"max entry {scale:.3e}")
    return y_kk - y_ke @ sla.lu_solve((lu, piv), y_ek, check_finite=False)


def partition_reduced(y_red: np.ndarray, boundary, generator,
                      ids=None) -> PartitionedY:
    """Split a reduced matrix into boundary/generator blocks."""
    y_red = np.asarray(y_red, dtype=complex)
    ids = _resolve_ids(y_red.shape[0], ids if ids is not None
                       else sorted(list(boundary) + list(generator)))
    boundary = list(boundary)
    generator = list(generator)
    bset, gset = set(boundary), set(generator)
    if bset & gset:
        raise PartitionError(f"buses {sorted(bset & gset)} listed as both "
                             "boundary and generator")
    if bset | gset != set(ids):
        extra = sorted((bset | gset) - set(ids))
        missing = sorted(set(ids) - (bset | gset))
        raise PartitionError(f"partition must cover the matrix exactly "
                             f"(extra {extra}, uncovered {missing})")
    pos = {b: k for k, b in enumerate(ids)}
    bi = np.array([pos[b] for b in boundary], dtype=int)
    gi = np.array([pos[b] for b in generator], dtype=int)
    return PartitionedY(
        y_bb=y_red[np.ix_(bi, bi)].copy(),
        y_bg=y_red[np.ix_(bi, gi)].copy(),
        y_gb=y_red[np.ix_(gi, bi)].copy(),
        y_gg=y_red[np.ix_(gi, gi)].copy(),
        boundary=tuple(boundary),
        generator=tuple(generator),
    )


def passive_ybus(case: NetworkCase, f_hz: float):
    """Ybus with internal sources de-energized.

    Voltage-source buses are clamped to ground (row/column removed); current
    sources are simply absent.  Returns (matrix, remaining bus ids).
    """
    y = build_ybus(case, f_hz)
    ids = case.bus_ids()
    grounded = sorted({s.bus for s in case.sources if s.kind == "voltage"})
    if not grounded:
        return y, ids
    keep = [b for b in ids if b not in grounded]
    if not keep:
        raise CaseError("every bus is clamped by a voltage source")
    pos = {b: k for k, b in enumerate(ids)}
    sel = np.array([pos[b] for b in keep], dtype=int)
    return y[np.ix_(sel, sel)].copy(), keep


def analytic_port_admittance(case: NetworkCase, ports,
                             f_grid) -> AdmittanceSampleSet:
    """Exact m-port admittance of the de-energized network over f_grid.

    Ports must be boundary buses.  Every other bus is eliminated at each
    frequency, so sample (q, p) is the current into port q per unit
    voltage at port p with the remaining ports shorted.
    """
    ports = list(ports)
    if not ports:
        raise ValueError("no ports given")
    for p in ports:
        if case.bus(p).kind != "boundary":
            raise CaseError(f"port bus {p} is not marked boundary")
    clamped = {s.bus for s in case.sources if s.kind == "voltage"}
    overlap = sorted(set(ports) & clamped)
    if overlap:
        raise CaseError(f"ports {overlap} are clamped by voltage sources")
    f_grid = np.asarray(f_grid, dtype=float)
    samples = np.empty((len(f_grid), len(ports), len(ports)), dtype=complex)
    for k, f in enumerate(f_grid):
        y, ids = passive_ybus(case, float(f))
        samples[k] = kron_reduce(y, ports, ids)
    return AdmittanceSampleSet(f_hz=f_grid, y=samples, ports=tuple(ports))


def merge_buses(y: np.ndarray, ids, merge_sets) -> tuple[np.ndarray, list]:
    """Collapse each id set in ``merge_sets`` into its smallest member.

    Standard supernode sum: rows/columns of merged buses are added.  Used
    when coherent generator buses are tied together for aggregation.
    """
    y = np.asarray(y, dtype=complex)
    ids = _resolve_ids(y.shape[0], ids)
    label = {b: b for b in ids}
    for group in merge_sets:
        group = sorted(group)
        for b in group:
            if b not in label:
                raise ValueError(f"merge id {b} not in matrix labelling")
            label[b] = group[0]
    new_ids = sorted({label[b] for b in ids})
    pos = {b: k for k, b in enumerate(new_ids)}
    out = np.zeros((len(new_ids), len(new_ids)), dtype=complex)
    old_pos = {b: k for k, b in enumerate(ids)}
    for bi in ids:
        for bj in ids:
            out[pos[label[bi]], pos[label[bj]]] += y[old_pos[bi], old_pos[bj]]
    return out, new_ids
