"""Phasor-side model and the waveform/phasor interface.

The external system, reduced to boundary plus machine buses, is solved as
nodal algebra on the partitioned matrix:

    V_g = Ygg^-1 (I_g - Ygb V_b)        machine bus voltages
    I_b = Ybb V_b + Ybg V_g             boundary current drawn externally

with machine currents from the classical model I_g = (E' e^{j delta} -
V_g) / (j X'd).  The swing pair per machine,

    d delta / dt = w_s * w
    2 H  d w / dt = P_m - P_e - D w,

is integrated by the trapezoidal rule with fixed-point iteration on the
implicit stage.  Powers use the phasor-product convention S = V conj(I)
(no 1/2), consistently on both the electrical and mechanical side.

Waveforms move across the interface through a sliding one-cycle Fourier
correlation (peak-amplitude phasors) and cosine reconstruction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from .fdne_rt import PhasorValue, TWO_PI, phasor_array
from .netmodel import Generator, PartitionedY


class InterfaceError(ValueError):
    """Phasor interface algebra cannot be evaluated."""


class ExtractionError(ValueError):
    """Signal unsuitable for sliding-window extraction."""


class SwingIntegrationError(RuntimeError):
    """Machine integration failed to converge or diverged."""


# ---------------------------------------------------------------------------
# phasor extraction and reconstruction


def window_samples(f0: float, ts: float, min_per_cycle: int = 8) -> int:
    """One-cycle window length; f0*ts must divide a cycle evenly."""
    if f0 <= 0.0 or ts <= 0.0:
        raise ExtractionError("f0 and ts must be positive")
    n_exact = 1.0 / (f0 * ts)
    n = int(round(n_exact))
    if n < min_per_cycle:
        raise ExtractionError(f"only {n_exact:.2f} samples per cycle; "
                              f"need >= {min_per_cycle}")
    if abs(n_exact - n) > 1e-6 * n:
        raise ExtractionError(f"cycle is {n_exact!r} samples, not an "
                              "integer; choose ts dividing the period")
    return n


@dataclass
class PhasorStream:
    """Sliding-window phasors; values[k] ends at sample offset + k."""

    f0: float
    ts: float
    offset: int
    values: np.ndarray

    def mag(self) -> np.ndarray:
        return np.abs(self.values)

    def angle(self) -> np.ndarray:
        return np.angle(self.values)

    def last(self) -> PhasorValue:
        return PhasorValue.from_complex(complex(self.values[-1]), self.f0)


def phasor_extract(x, f0: float, ts: float, t0: float = 0.0) -> PhasorStream:
    """Peak-amplitude phasors of x at f0 by one-cycle correlation.

    The angle is referenced to absolute time, so a stationary tone
    mag*cos(2 pi f0 t + phi) extracts to the constant phasor mag/phi.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ExtractionError("channel must be 1-D")
    n = window_samples(f0, ts)
    if len(x) < n:
        raise ExtractionError(f"need at least one window ({n} samples), "
                              f"got {len(x)}")
    t = t0 + ts * np.arange(len(x))
    mixed = x * np.exp(-1j * TWO_PI * f0 * t)
    csum = np.cumsum(mixed)
    win = csum[n - 1:].copy()
    win[1:] -= csum[:-n]
    return PhasorStream(f0=f0, ts=ts, offset=n - 1,
                        values=(2.0 / n) * win)


class SlidingPhasor:
    """Incremental one-sample-at-a-time version of phasor_extract.

    The running sum is rebuilt from the window every cycle to stop
    round-off drift on long runs.
    """

    def __init__(self, f0: float, ts: float, t0: float = 0.0):
        self.f0 = f0
        self.ts = ts
        self.n = window_samples(f0, ts)
        self._buf = np.zeros(self.n, dtype=complex)
        self._sum = 0.0 + 0.0j
        self._pos = 0
        self._count = 0
        self._t = t0

    @property
    def ready(self) -> bool:
        return self._count >= self.n

    def update(self, x: float) -> complex:
        mixed = x * complex(math.cos(TWO_PI * self.f0 * self._t),
                            -math.sin(TWO_PI * self.f0 * self._t))
        self._sum += mixed - self._buf[self._pos]
        self._buf[self._pos] = mixed
        self._pos += 1
        self._count += 1
        self._t += self.ts
        if self._pos == self.n:
            self._pos = 0
            self._sum = self._buf.sum()
        return (2.0 / self.n) * self._sum

    def value(self) -> complex:
        return (2.0 / self.n) * self._sum


def phasor_to_time(p: PhasorValue, t):
    """Cosine reconstruction mag*cos(2 pi f t + angle)."""
    return p.at(t)


def phasor_power(v: complex, i: complex) -> complex:
    """S = V conj(I), the product convention used throughout."""
    return v * np.conj(i)


# ---------------------------------------------------------------------------
# reduced-network algebra


def gen_bus_voltage(part: PartitionedY, i_g, v_b) -> np.ndarray:
    """Machine bus voltages from injections and boundary voltages."""
    i_g = np.atleast_1d(np.asarray(i_g, dtype=complex))
    v_b = np.atleast_1d(np.asarray(v_b, dtype=complex))
    if i_g.shape != (len(part.generator),):
        raise InterfaceError(f"expected {len(part.generator)} machine "
                             f"currents, got {i_g.shape}")
    if v_b.shape != (len(part.boundary),):
        raise InterfaceError(f"expected {len(part.boundary)} boundary "
                             f"voltages, got {v_b.shape}")
    rhs = i_g - part.y_gb @ v_b
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(part.y_gg, check_finite=False)
    except sla.LinAlgError as exc:
        raise InterfaceError(f"machine block singular: {exc}") from exc
    pivots = np.abs(np.diag(lu[0]))
    scale = np.abs(part.y_gg).max()
    if scale == 0.0 or pivots.min() < 1e-12 * scale:
        raise InterfaceError("machine block of the reduced matrix is "
                             "singular")
    return sla.lu_solve(lu, rhs, check_finite=False)


def boundary_current(part: PartitionedY, v_b, v_g) -> np.ndarray:
    """Current drawn by the external system at the boundary buses.

    This is the nodal relation on the reduced matrix; a study-side coupler
    injects the negation.
    """
    v_b = np.atleast_1d(np.asarray(v_b, dtype=complex))
    v_g = np.atleast_1d(np.asarray(v_g, dtype=complex))
    return part.y_bb @ v_b + part.y_bg @ v_g


# ---------------------------------------------------------------------------
# classical machines


@dataclass
class Machine:
    """Classical model state and parameters (powers on s_base)."""

    gen: Generator
    e_mag: float
    delta: float
    omega: float = 0.0       # pu speed deviation
    p_m: float = 0.0
    s_base: float = 1.0

    def emf(self, delta: float | None = None) -> complex:
        d = self.delta if delta is None else delta
        return self.e_mag * complex(math.cos(d), math.sin(d))

    def stator_y(self) -> complex:
        return 1.0 / complex(self.gen.r_stator, self.gen.xd_prime)

    def current(self, v_g: complex, delta: float | None = None) -> complex:
        return (self.emf(delta) - v_g) * self.stator_y()

    def electrical_power(self, v_g: complex,
                         delta: float | None = None) -> float:
        d = self.delta if delta is None else delta
        e = self.emf(d)
        return float(np.real(phasor_power(e, self.current(v_g, d)))) \
            / self.s_base


def swing_trapezoid(mach: Machine, p_e_fun, dt: float, omega_s: float,
                    max_iter: int = 30, tol: float = 1e-13) -> Machine:
    """One trapezoidal step of the swing pair.

    p_e_fun(delta) returns electrical power in pu at the trial angle;
    the implicit stage is solved by fixed-point iteration, which converges
    for any realistic dt because the stage gain scales with dt^2 / H.
    """
    h2 = 2.0 * mach.gen.h
    d0, w0 = mach.delta, mach.omega
    pe0 = p_e_fun(d0)
    acc0 = (mach.p_m - pe0 - mach.gen.d * w0) / h2
    d1, w1 = d0 + dt * omega_s * w0, w0 + dt * acc0   # explicit predictor
    for _ in range(max_iter):
        pe1 = p_e_fun(d1)
        acc1 = (mach.p_m - pe1 - mach.gen.d * w1) / h2
        w1_new = w0 + 0.5 * dt * (acc0 + acc1)
        d1_new = d0 + 0.5 * dt * omega_s * (w0 + w1_new)
        shift = max(abs(w1_new - w1), abs(d1_new - d1))
        d1, w1 = d1_new, w1_new
        if shift < tol:
            break
    else:
        raise SwingIntegrationError(f"implicit stage did not converge for "
                                    f"machine {mach.gen.id}")
    if not (math.isfinite(d1) and math.isfinite(w1)):
        raise SwingIntegrationError(f"machine {mach.gen.id} state "
                                    "non-finite")
    return replace(mach, delta=d1, omega=w1)


def tsa_step(machines: list[Machine], v_g, dt: float,
             f0: float = 60.0) -> tuple[list[Machine], np.ndarray]:
    """Advance every machine one phasor step against held bus voltages.

    Returns updated machines and their injected currents at the new
    angles.
    """
    v_g = np.atleast_1d(np.asarray(v_g, dtype=complex))
    if len(v_g) != len(machines):
        raise InterfaceError(f"{len(machines)} machines but {len(v_g)} "
                             "bus voltages")
    omega_s = TWO_PI * f0
    out = []
    for mach, v in zip(machines, v_g):
        out.append(swing_trapezoid(
            mach, lambda d, m=mach, vv=v: m.electrical_power(vv, d),
            dt, omega_s))
    i_g = np.array([m.current(v) for m, v in zip(out, v_g)], dtype=complex)
    return out, i_g


def machine_from_powerflow(gen: Generator, v_g: complex, i_g: complex,
                           s_base: float) -> Machine:
    """Initialize E', delta, and P_m for equilibrium at the solved point."""
    e = v_g + complex(gen.r_stator, gen.xd_prime) * i_g
    mach = Machine(gen=gen, e_mag=abs(e), delta=float(np.angle(e)),
                   omega=0.0, p_m=0.0, s_base=s_base)
    mach.p_m = mach.electrical_power(v_g)
    return mach


def aggregate_machines(machines: list[Machine]) -> Machine:
    """Collapse coherent machines into one equivalent.

    Inertias and damping add, stator branches parallel, the angle is the
    inertia-weighted mean, and the internal voltage magnitude preserves
    the paralleled source (Millman) so the aggregate injects the combined
    current at the common bus.
    """
    if not machines:
        raise ValueError("nothing to aggregate")
    if len(machines) == 1:
        return machines[0]
    s_base = machines[0].s_base
    h_tot = sum(m.gen.h for m in machines)
    d_tot = sum(m.gen.d for m in machines)
    y_tot = sum(m.stator_y() for m in machines)
    z_eq = 1.0 / y_tot
    e_mill = sum(m.emf() * m.stator_y() for m in machines) / y_tot
    delta = sum(m.gen.h * m.delta for m in machines) / h_tot
    gen = Generator(id=min(m.gen.id for m in machines),
                    bus=machines[0].gen.bus, h=h_tot, d=d_tot,
                    xd_prime=float(z_eq.imag),
                    r_stator=max(0.0, float(z_eq.real)),
                    p_set=sum(m.gen.p_set for m in machines),
                    v_set=machines[0].gen.v_set)
    agg = Machine(gen=gen, e_mag=abs(e_mill), delta=delta, omega=0.0,
                  p_m=sum(m.p_m for m in machines), s_base=s_base)
    return agg
