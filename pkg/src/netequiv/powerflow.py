"""Flat-start Newton power flow for case initialization.

Loads are constant impedances already inside the admittance matrix, so
the only active injections are the machines: generator buses are PV
nodes, one of them is the slack, and every remaining bus balances to zero
injection.  Powers follow the phasor-product convention S = V conj(I)
used by the rest of the toolkit.  The Jacobian is finite-difference;
cases here are desk scale and the solver typically converges in three or
four iterations from flat start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import CaseError, NetworkCase, build_ybus


class PowerFlowError(RuntimeError):
    """Newton iteration failed to converge."""


@dataclass
class PowerFlowResult:
    bus_ids: list[int]
    v: np.ndarray                 # complex bus voltages
    s_inj: np.ndarray             # net injection V conj(I) per bus
    iterations: int
    max_mismatch: float

    def voltage(self, bus: int) -> complex:
        return complex(self.v[self.bus_ids.index(bus)])

    def injection(self, bus: int) -> complex:
        return complex(self.s_inj[self.bus_ids.index(bus)])


def _injections(y: np.ndarray, v: np.ndarray) -> np.ndarray:
    return v * np.conj(y @ v)


def solve_powerflow(case: NetworkCase, f_hz: float | None = None
                    ) -> PowerFlowResult:
    """Solve for bus voltages with machines as PV nodes.

    Unknowns are the angles at every non-slack bus and the magnitudes at
    non-generator buses.  Requires case.powerflow with the slack set to a
    generator bus.
    """
    pf = case.powerflow
    if pf is None:
        raise CaseError("case has no [powerflow] section")
    if not case.generators:
        raise CaseError("power flow needs at least one generator")
    f = case.f_nominal if f_hz is None else f_hz
    y = build_ybus(case, f)
    ids = case.bus_ids()
    pos = {b: k for k, b in enumerate(ids)}
    n = len(ids)

    gen_by_bus = {}
    for g in case.generators:
        if g.bus in gen_by_bus:
            raise CaseError(f"two generators on bus {g.bus}")
        gen_by_bus[g.bus] = g
    if pf.slack_bus not in gen_by_bus:
        raise CaseError(f"slack bus {pf.slack_bus} has no generator")

    slack = pos[pf.slack_bus]
    pv = [pos[b] for b in sorted(gen_by_bus) if b != pf.slack_bus]
    pq = [k for k in range(n) if k != slack and k not in pv]
    ang_idx = [k for k in range(n) if k != slack]

    vm = np.ones(n)
    va = np.zeros(n)
    for b, g in gen_by_bus.items():
        vm[pos[b]] = g.v_set
    p_spec = np.zeros(n)
    for b, g in gen_by_bus.items():
        p_spec[pos[b]] = g.p_set

    def mismatch(vm_, va_):
        v = vm_ * np.exp(1j * va_)
        s = _injections(y, v)
        mis_p = s.real - p_spec
        mis = [mis_p[k] for k in ang_idx]
        mis += [s.imag[k] for k in pq]
        return np.array(mis)

    nun = len(ang_idx) + len(pq)
    it = 0
    for it in range(1, pf.max_iter + 1):
        f0 = mismatch(vm, va)
        worst = np.abs(f0).max() if len(f0) else 0.0
        if worst < pf.tol:
            break
        jac = np.empty((nun, nun))
        eps = 1e-7
        for col in range(nun):
            vm_p, va_p = vm.copy(), va.copy()
            if col < len(ang_idx):
                va_p[ang_idx[col]] += eps
            else:
                vm_p[pq[col - len(ang_idx)]] += eps
            jac[:, col] = (mismatch(vm_p, va_p) - f0) / eps
        try:
            dx = np.linalg.solve(jac, -f0)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular Jacobian: {exc}") from exc
        for col in range(nun):
            if col < len(ang_idx):
                va[ang_idx[col]] += dx[col]
            else:
                vm[pq[col - len(ang_idx)]] += dx[col]
    else:
        raise PowerFlowError(f"no convergence after {pf.max_iter} "
                             f"iterations (mismatch {worst:.3e})")

    v = vm * np.exp(1j * va)
    return PowerFlowResult(bus_ids=ids, v=v, s_inj=_injections(y, v),
                           iterations=it, max_mismatch=float(worst))
