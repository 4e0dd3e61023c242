"""Real-time evaluation of identified port admittance models.

The runtime turns a TFMatrix into a per-sample current update

    I(k) = -a1 I(k-1) - ... - an I(k-n) + b1 V(k-1) + ... + bn V(k-n)

per entry, plus any direct b0 V(k) term a passivity correction may have
added.  Because identification leaves b0 at zero, the strictly proper part
needs only past voltages, so the history current is available before the
surrounding network solve of the same sample; couplers exploit that with
the history()/commit() pair while step() does both at once.

Fundamental handling: when a phasor-side model carries the 60 Hz operating
point, the admittance at nominal frequency must not be injected twice.
The compensating constant current of the standalone equivalent is
I_binj = conj(S_b / V_b) - Yc(f0) V_b per boundary port.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rls_ident import TFMatrix

TWO_PI = 2.0 * math.pi


class RuntimeDivergenceError(RuntimeError):
    """Model recursion produced non-finite currents."""

    def __init__(self, k):
        self.k = k
        super().__init__(f"port model output non-finite at sample {k}")


@dataclass(frozen=True)
class PhasorValue:
    """Cosine-referenced phasor: value(t) = mag * cos(2 pi f t + angle)."""

    mag: float
    angle: float
    freq: float

    @classmethod
    def from_complex(cls, c: complex, freq: float) -> "PhasorValue":
        return cls(mag=abs(c), angle=math.atan2(c.imag, c.real), freq=freq)

    def to_complex(self) -> complex:
        return self.mag * complex(math.cos(self.angle), math.sin(self.angle))

    def at(self, t) -> np.ndarray | float:
        return self.mag * np.cos(TWO_PI * self.freq * np.asarray(t)
                                 + self.angle)


def phasor_array(phasors) -> np.ndarray:
    return np.array([p.to_complex() for p in phasors], dtype=complex)


class FdneRuntime:
    """Stepper over an m-port TFMatrix with per-entry current histories."""

    def __init__(self, model: TFMatrix):
        self.model = model
        m = model.m
        n = model.max_order
        self.m = m
        self.n = n
        self.a = np.zeros((m, m, n))
        self.b = np.zeros((m, m, n))
        self.b0 = np.zeros((m, m))
        for q in range(m):
            for p in range(m):
                e = model.entries[q][p]
                self.a[q, p, :e.n] = e.a
                self.b[q, p, :e.n] = e.b
                self.b0[q, p] = e.b0
        # most-recent-first histories
        self.v_hist = np.zeros((m, n))
        self.i_hist = np.zeros((m, m, n))
        self.k = 0
        self.compensation: list[PhasorValue] | None = None

    @property
    def ports(self):
        return self.model.ports

    def history(self) -> np.ndarray:
        """Strictly proper part of each entry current for the next sample.

        Available before the sample's port voltages are known.
        """
        if self.n == 0:
            return np.zeros((self.m, self.m))
        hist = np.einsum("qpj,pj->qp", self.b, self.v_hist) \
            - np.einsum("qpj,qpj->qp", self.a, self.i_hist)
        return hist

    def commit(self, v_b, hist=None) -> np.ndarray:
        """Finish the sample: add feedthrough, push buffers, return entry
        currents."""
        v = np.asarray(v_b, dtype=float)
        if v.shape != (self.m,):
            raise ValueError(f"expected {self.m} port voltages, got {v.shape}")
        if hist is None:
            hist = self.history()
        i_entries = hist + self.b0 * v[None, :]
        if self.n:
            self.v_hist[:, 1:] = self.v_hist[:, :-1]
            self.v_hist[:, 0] = v
            self.i_hist[:, :, 1:] = self.i_hist[:, :, :-1]
            self.i_hist[:, :, 0] = i_entries
        self.k += 1
        if not np.all(np.isfinite(i_entries)):
            raise RuntimeDivergenceError(self.k)
        return i_entries


def fdne_step(rt: FdneRuntime, v_b) -> np.ndarray:
    """One recursion step: port currents for the given port voltages."""
    return rt.commit(v_b).sum(axis=1)


def fundamental_compensation(p_b, q_b, v_b, y_c60,
                             include_operating_point: bool = True
                             ) -> list[PhasorValue]:
    """Constant boundary current completing a standalone equivalent.

    p_b, q_b: active/reactive boundary flow into the external area, in the
    phasor-product convention S = V conj(I).  v_b: boundary voltage
    phasors.  y_c60: model admittance evaluated at nominal frequency.
    With include_operating_point False only the -Yc(f0) V_b term remains,
    which is the correction used when a phasor co-simulation carries the
    operating point instead.
    """
    v_b = list(v_b)
    freq = {p.freq for p in v_b}
    if len(freq) != 1:
        raise ValueError("boundary phasors must share one frequency")
    f0 = freq.pop()
    vc = phasor_array(v_b)
    if np.any(np.abs(vc) == 0.0):
        raise ValueError("zero boundary voltage phasor")
    y_c60 = np.atleast_2d(np.asarray(y_c60, dtype=complex))
    if y_c60.shape != (len(vc), len(vc)):
        raise ValueError(f"admittance shape {y_c60.shape} does not match "
                         f"{len(vc)} ports")
    inj = -(y_c60 @ vc)
    if include_operating_point:
        s = np.asarray(p_b, dtype=float) + 1j * np.asarray(q_b, dtype=float)
        inj = inj + np.conj(s / vc)
    return [PhasorValue.from_complex(c, f0) for c in inj]


def init_steady_state(rt: FdneRuntime, v_b_phasors, f0: float | None = None
                      ) -> None:
    """Prime histories with the periodic response to a steady excitation.

    After priming, stepping with the continuing sinusoid produces no
    start-up transient: sample 0 is taken at t = 0 with history samples at
    t = -Ts, -2 Ts, ...
    """
    v_b_phasors = list(v_b_phasors)
    if len(v_b_phasors) != rt.m:
        raise ValueError(f"expected {rt.m} phasors, got {len(v_b_phasors)}")
    freqs = {p.freq for p in v_b_phasors}
    if len(freqs) != 1:
        raise ValueError("phasors must share one frequency")
    f = f0 if f0 is not None else freqs.pop()
    ts = rt.model.ts
    h = rt.model.response(np.array([f]))[0]          # (m, m) complex
    vc = phasor_array(v_b_phasors)
    i_entry_ph = h * vc[None, :]                     # entry (q,p) phasor
    for j in range(rt.n):
        t = -(j + 1) * ts
        rot = complex(math.cos(TWO_PI * f * t), math.sin(TWO_PI * f * t))
        rt.v_hist[:, j] = (vc * rot).real
        rt.i_hist[:, :, j] = (i_entry_ph * rot).real
    rt.k = 0
