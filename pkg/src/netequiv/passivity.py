"""Passivity screening and enforcement for identified port models.

A fitted admittance matrix is passive when the Hermitian (conductance)
part of every frequency sample is positive semidefinite.  Violations are
repaired sample by sample: the conductance part is replaced by its nearest
PSD matrix in the Frobenius norm (eigenvalue clipping), the skew-Hermitian
part is kept, and the numerators of the rational entries are refitted to
the corrected samples by weighted least squares with the (stable)
denominators held fixed, so enforcement can never destabilize a model.
If violations survive the refit rounds a constant conductance equal to the
worst residual violation is added to the diagonal entries, which shifts
every eigenvalue up by that amount and guarantees the check passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import AdmittanceSampleSet
from .rls_ident import EvaluationError, RationalTFz, TFMatrix

SamplingError = EvaluationError

PASSIVITY_TOL = 1e-9
DEFAULT_MAX_ROUNDS = 4


class EnforcementError(RuntimeError):
    """Refit failed; carries the latest report for diagnosis."""

    def __init__(self, msg, report=None):
        self.report = report
        super().__init__(msg)


@dataclass
class PassivityReport:
    """Minimum conductance eigenvalue per frequency sample."""

    f_hz: np.ndarray
    min_eig: np.ndarray
    tol: float

    def __post_init__(self):
        self.f_hz = np.asarray(self.f_hz, dtype=float)
        self.min_eig = np.asarray(self.min_eig, dtype=float)
        if self.f_hz.shape != self.min_eig.shape:
            raise ValueError("frequency and eigenvalue arrays differ")

    @property
    def violations(self) -> np.ndarray:
        return np.nonzero(self.min_eig < -self.tol)[0]

    @property
    def passive(self) -> bool:
        return len(self.violations) == 0

    @property
    def worst(self) -> float:
        """Magnitude of the deepest violation (0 when passive)."""
        worst = float(self.min_eig.min()) if len(self.min_eig) else 0.0
        return max(0.0, -worst)

    def violating_bands(self) -> list[tuple[float, float]]:
        """Contiguous violating frequency ranges."""
        idx = self.violations
        if len(idx) == 0:
            return []
        bands = []
        start = prev = idx[0]
        for k in idx[1:]:
            if k != prev + 1:
                bands.append((float(self.f_hz[start]), float(self.f_hz[prev])))
                start = k
            prev = k
        bands.append((float(self.f_hz[start]), float(self.f_hz[prev])))
        return bands


def sample_admittance(tfm: TFMatrix, f_grid) -> AdmittanceSampleSet:
    """Evaluate the model at z = exp(j 2 pi f Ts) over the grid."""
    f_grid = np.asarray(f_grid, dtype=float)
    if f_grid.ndim != 1 or len(f_grid) == 0:
        raise ValueError("frequency grid must be a non-empty 1-D array")
    return AdmittanceSampleSet(f_hz=f_grid, y=tfm.response(f_grid),
                               ports=tfm.ports, ts=tfm.ts)


def conductance_part(y: np.ndarray) -> np.ndarray:
    """Hermitian part (Y + Y^H)/2; equals Re[Y] for one port."""
    y = np.asarray(y, dtype=complex)
    return 0.5 * (y + np.conj(np.swapaxes(y, -1, -2)))


def susceptance_part(y: np.ndarray) -> np.ndarray:
    """Skew-Hermitian part (Y - Y^H)/2."""
    y = np.asarray(y, dtype=complex)
    return 0.5 * (y - np.conj(np.swapaxes(y, -1, -2)))


def check_passivity(samples: AdmittanceSampleSet,
                    tol: float = PASSIVITY_TOL) -> PassivityReport:
    """Minimum eigenvalue of the conductance part at every sample."""
    if tol < 0.0:
        raise ValueError("tolerance must be non-negative")
    g = conductance_part(samples.y)
    min_eig = np.array([np.linalg.eigvalsh(g[k])[0]
                        for k in range(g.shape[0])])
    return PassivityReport(f_hz=samples.f_hz.copy(), min_eig=min_eig, tol=tol)


def nearest_psd(g: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD matrix to a Hermitian input.

    Eigenvalue clipping U max(L, 0) U^H is the orthogonal projection onto
    the PSD cone, hence optimal.  Inputs already PSD (to machine slack)
    are returned unchanged, which also makes the projection exactly
    idempotent.
    """
    g = np.asarray(g, dtype=complex)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"matrix must be square, got {g.shape}")
    herm_gap = np.abs(g - g.conj().T).max()
    scale = max(1.0, np.abs(g).max())
    if herm_gap > 1e-9 * scale:
        raise ValueError(f"input is not Hermitian (gap {herm_gap:.3e})")
    w, u = np.linalg.eigh(0.5 * (g + g.conj().T))
    slack = 1e-14 * max(1.0, float(np.abs(w).max()))
    if w[0] >= -slack:
        return g
    out = (u * np.maximum(w, 0.0)) @ u.conj().T
    return 0.5 * (out + out.conj().T)


def correct_sample_set(samples: AdmittanceSampleSet,
                       tol: float = PASSIVITY_TOL):
    """Project violating samples onto the passive cone.

    Only the conductance part moves; the skew-Hermitian part is carried
    over untouched.  Returns (corrected sample array, changed mask).
    """
    g = conductance_part(samples.y)
    b = susceptance_part(samples.y)
    y_corr = samples.y.copy()
    changed = np.zeros(samples.y.shape[0], dtype=bool)
    for k in range(samples.y.shape[0]):
        if np.linalg.eigvalsh(g[k])[0] < -tol:
            y_corr[k] = nearest_psd(g[k]) + b[k]
            changed[k] = True
    return y_corr, changed


def densified_grid(f_grid) -> np.ndarray:
    """Sweep grid plus interval midpoints: the enforcement grid default."""
    f = np.unique(np.asarray(f_grid, dtype=float))
    if len(f) < 2:
        return f
    return np.unique(np.concatenate([f, 0.5 * (f[:-1] + f[1:])]))


def _refit_numerator(entry: RationalTFz, zinv_pows: np.ndarray,
                     den: np.ndarray, targets: np.ndarray,
                     weights: np.ndarray) -> RationalTFz:
    """Weighted LS numerator (b0..bn) against complex targets, A fixed."""
    basis = zinv_pows[:, :entry.n + 1] / den[:, None]
    m = basis * weights[:, None]
    rhs = targets * weights
    sys_r = np.vstack([m.real, m.imag])
    rhs_r = np.concatenate([rhs.real, rhs.imag])
    coef, *_ = np.linalg.lstsq(sys_r, rhs_r, rcond=None)
    if not np.all(np.isfinite(coef)):
        raise EnforcementError("numerator refit produced non-finite "
                               "coefficients")
    return RationalTFz(a=entry.a.copy(), b=coef[1:], ts=entry.ts,
                       b0=float(coef[0]))


def _refit_to_samples(tfm: TFMatrix, f_grid: np.ndarray,
                      y_corr: np.ndarray) -> TFMatrix:
    zinv = np.exp(-2j * np.pi * f_grid * tfm.ts)
    nmax = tfm.max_order
    zinv_pows = zinv[:, None] ** np.arange(nmax + 1)[None, :]
    floor = 1e-9 * max(np.abs(y_corr).max(), 1e-300)
    new_rows = []
    for q in range(tfm.m):
        row = []
        for p in range(tfm.m):
            entry = tfm.entries[q][p]
            den = np.ones(len(f_grid), dtype=complex)
            for mdx in range(entry.n):
                den += entry.a[mdx] * zinv_pows[:, mdx + 1]
            if np.any(den == 0.0):
                raise EnforcementError("denominator zero on the "
                                       "enforcement grid")
            targets = y_corr[:, q, p]
            weights = 1.0 / np.maximum(np.abs(targets), floor)
            row.append(_refit_numerator(entry, zinv_pows, den, targets,
                                        weights))
        new_rows.append(row)
    return TFMatrix(entries=new_rows, ports=tfm.ports,
                    fit_rel_rms=tfm.fit_rel_rms)


def enforce_passivity(tfm: TFMatrix, f_grid,
                      max_rounds: int = DEFAULT_MAX_ROUNDS,
                      tol: float = PASSIVITY_TOL) -> TFMatrix:
    """Return a model passing check_passivity(tol) on the grid.

    Already-passive input is returned as is.  The input must be stable;
    denominators are never touched, so the output is stable too.
    """
    if max_rounds < 1:
        raise ValueError("need at least one round")
    if not tfm.is_stable():
        raise ValueError("enforce stability before passivity")
    f_grid = np.asarray(f_grid, dtype=float)

    current = tfm
    for _ in range(max_rounds):
        samples = sample_admittance(current, f_grid)
        report = check_passivity(samples, tol)
        if report.passive:
            return current
        y_corr, _ = correct_sample_set(samples, tol)
        current = _refit_to_samples(current, f_grid, y_corr)

    report = check_passivity(sample_admittance(current, f_grid), tol)
    if not report.passive:
        # Parallel conductance on the diagonal: numerator gains shift*den
        # so the response moves by exactly shift at every frequency, which
        # raises every conductance eigenvalue by worst.
        shift = report.worst
        rows = []
        for q in range(current.m):
            row = []
            for p in range(current.m):
                e = current.entries[q][p]
                if q == p:
                    row.append(RationalTFz(a=e.a.copy(),
                                           b=e.b + shift * e.a,
                                           ts=e.ts, b0=e.b0 + shift))
                else:
                    row.append(RationalTFz(a=e.a.copy(), b=e.b.copy(),
                                           ts=e.ts, b0=e.b0))
            rows.append(row)
        current = TFMatrix(entries=rows, ports=current.ports,
                           fit_rel_rms=current.fit_rel_rms)
        report = check_passivity(sample_admittance(current, f_grid), tol)
        if not report.passive:
            raise EnforcementError("conductance shift failed to clear "
                                   "violations", report)
    return current
