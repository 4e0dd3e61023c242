"""Rational z-domain admittance identification from waveform records.

The model class is a strictly proper transfer function with a monic
denominator,

    Y(z^-1) = (b1 z^-1 + ... + bn z^-n) / (1 + a1 z^-1 + ... + an z^-n),

fitted as an ARX regression of the port current on past currents and past
voltages.  Two estimators share the parameter layout
theta = (a1..an, b1..bn):

  * batch least squares on the stacked regressor matrix
  * exponentially weighted recursive least squares: a square-root
    information recursion for record fits, and a per-sample covariance
    form (RlsState / rls_step) for online refresh of an existing model

A direct term b0 exists on the type for models post-processed by the
passivity stage; identification itself always leaves it at zero so the
difference equation stays implementable with one sample of latency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

DEFAULT_P0 = 1e6
ORDER_SCAN_MAX = 24
ORDER_SCAN_STOP_REL = 1e-5
ORDER_SCAN_MIN_GAIN = 0.10


class DivergenceError(RuntimeError):
    """Estimator state became non-finite."""

    def __init__(self, k, what="recursive estimate"):
        self.k = k
        super().__init__(f"{what} diverged at sample {k}")


class IllConditionedError(ValueError):
    """Normal equations are rank deficient."""

    def __init__(self, cond):
        self.cond = cond
        super().__init__(f"regressor normal equations ill-conditioned "
                         f"(cond ~ {cond:.3e})")


class CoverageError(ValueError):
    """Sweep records do not cover the requested port matrix."""


class EvaluationError(ValueError):
    """Frequency response undefined at a grid point."""


@dataclass
class RationalTFz:
    """Discrete-time rational admittance with monic denominator."""

    a: np.ndarray
    b: np.ndarray
    ts: float
    b0: float = 0.0

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.ts <= 0.0:
            raise ValueError(f"ts must be positive, got {self.ts}")
        n = max(len(a), len(b))
        self.a = np.concatenate([a, np.zeros(n - len(a))])
        self.b = np.concatenate([b, np.zeros(n - len(b))])
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))
                and math.isfinite(self.b0)):
            raise ValueError("non-finite coefficients")

    @property
    def n(self) -> int:
        return len(self.a)

    def poles(self) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0, dtype=complex)
        return np.roots(np.concatenate([[1.0], self.a]))

    def is_stable(self) -> bool:
        p = self.poles()
        return bool(np.all(np.abs(p) < 1.0)) if len(p) else True

    def response(self, f_hz) -> np.ndarray:
        """Evaluate on the unit circle at z = exp(j 2 pi f Ts)."""
        f = np.atleast_1d(np.asarray(f_hz, dtype=float))
        zinv = np.exp(-2j * np.pi * f * self.ts)
        num = np.full(len(f), complex(self.b0))
        den = np.ones(len(f), dtype=complex)
        zp = np.ones(len(f), dtype=complex)
        for m in range(self.n):
            zp = zp * zinv
            num += self.b[m] * zp
            den += self.a[m] * zp
        bad = np.nonzero(den == 0.0)[0]
        if len(bad):
            raise EvaluationError(f"pole on the unit circle at "
                                  f"f = {f[bad[0]]:g} Hz")
        h = num / den
        if not np.all(np.isfinite(h)):
            raise EvaluationError("non-finite frequency response")
        return h if np.ndim(f_hz) else h[0]

    def filter(self, u: np.ndarray, u_hist=None, y_hist=None) -> np.ndarray:
        """Free-run output driven by input only (the runtime recursion).

        Optional histories are most-recent-first buffers of length n.
        """
        u = np.asarray(u, dtype=float)
        n = self.n
        uh = np.zeros(n) if u_hist is None else np.asarray(u_hist, float).copy()
        yh = np.zeros(n) if y_hist is None else np.asarray(y_hist, float).copy()
        out = np.empty(len(u))
        for k in range(len(u)):
            yk = self.b0 * u[k]
            if n:
                yk += self.b @ uh - self.a @ yh
                uh[1:] = uh[:-1]
                uh[0] = u[k]
                yh[1:] = yh[:-1]
                yh[0] = yk
            out[k] = yk
        return out

    def scaled_numerator(self, factor: float) -> "RationalTFz":
        return RationalTFz(a=self.a.copy(), b=self.b * factor,
                           ts=self.ts, b0=self.b0 * factor)


@dataclass
class RlsState:
    """Recursive least-squares estimator state.

    Buffers are most-recent-first; theta stacks (a1..an, b1..bn).  P is
    kept symmetric by explicit symmetrization every step.
    """

    n: int
    gamma: float
    theta: np.ndarray
    p: np.ndarray
    u_hist: np.ndarray
    y_hist: np.ndarray
    k: int = 0

    @classmethod
    def fresh(cls, n: int, gamma: float = 1.0,
              p0: float = DEFAULT_P0) -> "RlsState":
        if n < 1:
            raise ValueError("model order must be >= 1")
        if not 0.0 < gamma <= 1.0:
            raise ValueError(f"forgetting factor must be in (0, 1], "
                             f"got {gamma}")
        if p0 <= 0.0:
            raise ValueError("initial covariance scale must be positive")
        return cls(n=n, gamma=gamma, theta=np.zeros(2 * n),
                   p=p0 * np.eye(2 * n), u_hist=np.zeros(n),
                   y_hist=np.zeros(n))

    def regressor(self) -> np.ndarray:
        return np.concatenate([-self.y_hist, self.u_hist])

    def to_tf(self, ts: float) -> RationalTFz:
        return RationalTFz(a=self.theta[:self.n].copy(),
                           b=self.theta[self.n:].copy(), ts=ts)


def rls_step(state: RlsState, u_k: float, y_k: float) -> RlsState:
    """One gain/covariance/parameter update, then advance the buffers."""
    x = state.regressor()
    px = state.p @ x
    denom = state.gamma + x @ px
    gain = px / denom
    state.theta = state.theta + gain * (y_k - x @ state.theta)
    p_new = (state.p - np.outer(gain, px)) / state.gamma
    state.p = 0.5 * (p_new + p_new.T)
    state.y_hist[1:] = state.y_hist[:-1]
    state.y_hist[0] = y_k
    state.u_hist[1:] = state.u_hist[:-1]
    state.u_hist[0] = u_k
    state.k += 1
    if not (np.all(np.isfinite(state.theta)) and np.all(np.isfinite(state.p))):
        raise DivergenceError(state.k)
    return state


def build_regressor(u: np.ndarray, y: np.ndarray, n: int,
                    feedthrough: bool = False) -> np.ndarray:
    """Stacked regressor matrix, zero history before the record starts.

    Row k is (-y[k-1..k-n], u[k-1..k-n]); with ``feedthrough`` the current
    input u[k] is inserted between the blocks, so the parameter layout
    becomes (a1..an, b0, b1..bn).
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != y.shape or u.ndim != 1:
        raise ValueError("u and y must be 1-D arrays of equal length")
    nsamp = len(u)
    ex = int(bool(feedthrough))
    x = np.zeros((nsamp, 2 * n + ex))
    if feedthrough:
        x[:, n] = u
    for m in range(1, n + 1):
        x[m:, m - 1] = -y[:-m]
        x[m:, n + ex + m - 1] = u[:-m]
    return x


def batch_ls(x: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Normal-equation solve theta = (X'X)^-1 X'phi."""
    x = np.asarray(x, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if x.ndim != 2:
        raise ValueError("regressor matrix must be 2-D")
    if len(phi) != x.shape[0]:
        raise ValueError("regressor and target lengths differ")
    if x.shape[0] < x.shape[1]:
        raise ValueError(f"need at least {x.shape[1]} samples, "
                         f"got {x.shape[0]}")
    xtx = x.T @ x
    cond = np.linalg.cond(xtx)
    if not np.isfinite(cond) or cond > 1e12:
        raise IllConditionedError(cond)
    return sla.solve(xtx, x.T @ phi, assume_a="sym")


def prediction_residuals(tf: RationalTFz, u: np.ndarray,
                         y: np.ndarray) -> np.ndarray:
    """One-step-ahead residuals of a fixed model over a record."""
    x = build_regressor(u, y, tf.n)
    theta = np.concatenate([tf.a, tf.b])
    yhat = x @ theta + tf.b0 * np.asarray(u, dtype=float)
    return np.asarray(y, dtype=float) - yhat


@dataclass
class FitResult:
    tf: RationalTFz
    rms: float
    rel_rms: float
    n: int
    samples: int


_FIT_BLOCK = 8192


def _sqrt_info_fit(u, y, n, gamma, p0=DEFAULT_P0, feedthrough=False):
    """Exponentially weighted LS in square-root information form.

    Same estimate as running rls_step over the record (including the p0
    ridge prior), but the recursion carries a QR factor of the information
    matrix instead of the covariance, so it keeps full float64 precision.
    The covariance form loses half the mantissa, which matters here: long
    stepped-sine records reach regressor condition numbers around 1e16.
    Processed block-recursively so the QR work is vectorized.
    """
    x = build_regressor(u, y, n, feedthrough)
    d = x.shape[1]
    r = np.eye(d) / math.sqrt(p0)
    z = np.zeros(d)
    for s in range(0, len(y), _FIT_BLOCK):
        xb = x[s:s + _FIT_BLOCK]
        yb = np.asarray(y[s:s + _FIT_BLOCK], dtype=float)
        if gamma < 1.0:
            w = gamma ** (0.5 * np.arange(len(yb) - 1, -1, -1))
            xb = xb * w[:, None]
            yb = yb * w
            fade = gamma ** (0.5 * len(yb))
        else:
            fade = 1.0
        q, r = np.linalg.qr(np.vstack([r * fade, xb]))
        z = q.T @ np.concatenate([z * fade, yb])
    if not np.all(np.isfinite(r)):
        raise DivergenceError(len(y), "square-root information factor")
    diag = np.abs(np.diag(r))
    if diag.min() == 0.0 or diag.max() / diag.min() > 1e15:
        raise IllConditionedError(float(diag.max() / max(diag.min(),
                                                         np.finfo(float).tiny)))
    return sla.solve_triangular(r, z)


def fit_entry(v, i, n: int | None = None, gamma: float = 1.0,
              ts: float = 1.0, p0: float = DEFAULT_P0,
              feedthrough: bool = False) -> FitResult:
    """Fit one admittance entry from a voltage/current record pair.

    With n given, a single recursive pass; with n None, an even-order scan
    2, 4, ... up to ORDER_SCAN_MAX that stops once the residual falls
    below 1e-5 of the signal RMS or stops improving by 10 percent.

    The default model is strictly proper, which is what a one-sample
    latency exchange can realize.  Ports whose discrete admittance has an
    instantaneous term (any port, in general: the trapezoidal companions
    are proper) can request ``feedthrough`` to estimate b0 as well; a
    nodal-coupled runtime embeds b0 in the conductance matrix, and the
    model class then contains the exact discrete response, so fits of
    swept networks come back passive instead of extrapolating freely
    above the sweep band.
    """
    v = np.asarray(v, dtype=float)
    i = np.asarray(i, dtype=float)
    if v.shape != i.shape or v.ndim != 1:
        raise ValueError("voltage and current records must match")
    sig_rms = float(np.sqrt(np.mean(i ** 2)))

    def run(order):
        if len(v) < 2 * order:
            raise ValueError(f"record too short for order {order}")
        theta = _sqrt_info_fit(v, i, order, gamma, p0, feedthrough)
        if feedthrough:
            tf = RationalTFz(a=theta[:order].copy(),
                             b=theta[order + 1:].copy(), ts=ts,
                             b0=float(theta[order]))
        else:
            tf = RationalTFz(a=theta[:order].copy(), b=theta[order:].copy(),
                             ts=ts)
        res = prediction_residuals(tf, v, i)
        rms = float(np.sqrt(np.mean(res ** 2)))
        rel = rms / sig_rms if sig_rms > 0.0 else rms
        return FitResult(tf=tf, rms=rms, rel_rms=rel, n=order, samples=len(v))

    if n is not None:
        return run(int(n))

    best = None
    prev_rms = None
    for order in range(2, ORDER_SCAN_MAX + 1, 2):
        cand = run(order)
        if best is None or cand.rms < best.rms:
            best = cand
        if cand.rel_rms < ORDER_SCAN_STOP_REL:
            break
        if prev_rms is not None and prev_rms > 0.0:
            if (prev_rms - cand.rms) / prev_rms < ORDER_SCAN_MIN_GAIN:
                break
        prev_rms = cand.rms
    return best


@dataclass
class TFMatrix:
    """Square matrix of rational admittance entries over shared Ts.

    entries[q][p] maps the voltage at port p to the current contribution
    at port q; mutual entries carry their own sign, so the port current is
    the plain row sum of entry outputs.
    """

    entries: list[list[RationalTFz]]
    ports: tuple[int, ...]
    fit_rel_rms: np.ndarray | None = None

    def __post_init__(self):
        m = len(self.entries)
        if m == 0 or any(len(row) != m for row in self.entries):
            raise ValueError("entry grid must be square")
        if len(self.ports) != m:
            raise ValueError(f"{m} rows but {len(self.ports)} port labels")
        ts = {e.ts for row in self.entries for e in row}
        if len(ts) != 1:
            raise ValueError(f"entries disagree on Ts: {sorted(ts)}")

    @property
    def m(self) -> int:
        return len(self.entries)

    @property
    def ts(self) -> float:
        return self.entries[0][0].ts

    @property
    def max_order(self) -> int:
        return max(e.n for row in self.entries for e in row)

    def entry(self, q: int, p: int) -> RationalTFz:
        return self.entries[q][p]

    def response(self, f_hz) -> np.ndarray:
        """Stacked frequency response, shape (nf, m, m)."""
        f = np.atleast_1d(np.asarray(f_hz, dtype=float))
        out = np.empty((len(f), self.m, self.m), dtype=complex)
        for q in range(self.m):
            for p in range(self.m):
                out[:, q, p] = self.entries[q][p].response(f)
        return out

    def is_stable(self) -> bool:
        return all(e.is_stable() for row in self.entries for e in row)

    def feedthrough(self) -> np.ndarray:
        return np.array([[e.b0 for e in row] for row in self.entries])

    def map_entries(self, fn) -> "TFMatrix":
        return TFMatrix(entries=[[fn(e) for e in row] for row in self.entries],
                        ports=self.ports, fit_rel_rms=self.fit_rel_rms)


def fit_mimo(records: dict, ports, n: int | None = None,
             gamma: float = 1.0, feedthrough: bool = False,
             p0: float = DEFAULT_P0) -> TFMatrix:
    """Fit the full m x m port admittance from per-port sweep records.

    records[p] must hold the run with port p excited: its voltage channel
    is the shared input, its ``i:<q>`` channels the per-row outputs.
    """
    ports = list(ports)
    missing = [p for p in ports if p not in records]
    if missing:
        raise CoverageError(f"no sweep record for excited ports {missing}")
    ts_all = {records[p].series.ts for p in ports}
    if len(ts_all) != 1:
        raise CoverageError(f"records disagree on Ts: {sorted(ts_all)}")
    ts = ts_all.pop()

    m = len(ports)
    grid: list[list[RationalTFz]] = [[None] * m for _ in range(m)]
    rel = np.zeros((m, m))
    for pc, p in enumerate(ports):
        rec = records[p]
        v = rec.voltage()
        for qc, q in enumerate(ports):
            try:
                i = rec.current(q)
            except KeyError as exc:
                raise CoverageError(str(exc)) from exc
            res = fit_entry(v, i, n=n, gamma=gamma, ts=ts, p0=p0,
                            feedthrough=feedthrough)
            grid[qc][pc] = res.tf
            rel[qc, pc] = res.rel_rms
    return TFMatrix(entries=grid, ports=tuple(ports), fit_rel_rms=rel)


def enforce_stability(tf: RationalTFz) -> RationalTFz:
    """Reflect unstable poles into the unit circle, preserving magnitude.

    Reflecting a pole p to 1/conj(p) divides |A| on the unit circle by
    |p|, so scaling the numerator by the product of reflected-pole
    magnitudes keeps |Y| unchanged at every frequency.  Poles on the
    circle are nudged just inside.
    """
    if tf.n == 0:
        return tf
    poles = tf.poles()
    mags = np.abs(poles)
    if np.all(mags < 1.0):
        return tf
    scale = 1.0
    new_poles = poles.copy()
    for idx in np.nonzero(mags >= 1.0)[0]:
        p = poles[idx]
        r_new = min(1.0 / mags[idx], 1.0 - 1e-9)
        new_poles[idx] = (p / mags[idx]) * r_new
        scale *= mags[idx]
    a_new = np.real(np.poly(new_poles))[1:]
    return RationalTFz(a=a_new, b=tf.b / scale, ts=tf.ts, b0=tf.b0 / scale)
