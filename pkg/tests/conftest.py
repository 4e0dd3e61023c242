"""Shared builders for the test suite."""

import numpy as np
import pytest

from netequiv.netmodel import Branch, Bus, NetworkCase
from netequiv.rls_ident import RationalTFz

# One line per acceptance criterion, echoed after the test summary so the
# pass/fail verdicts are visible without -s.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_stable_tf(rng, n, ts=1e-4, radius=(0.3, 0.85)):
    """Random strictly proper transfer function with poles well inside
    the unit circle (conjugate pairs plus a real pole when n is odd)."""
    poles = []
    for _ in range(n // 2):
        r = rng.uniform(*radius)
        ang = rng.uniform(0.15, np.pi - 0.15)
        poles.extend([r * np.exp(1j * ang), r * np.exp(-1j * ang)])
    if n % 2:
        poles.append(complex(rng.uniform(-radius[1], radius[1])))
    a = np.real(np.poly(poles))[1:]
    b = 0.5 * rng.standard_normal(n)
    if abs(b[0]) < 0.05:
        b[0] = 0.3
    return RationalTFz(a=a, b=b, ts=ts)


def random_rlc_case(rng, n_bus, boundary=(), extra_edges=None,
                    shunt_fraction=0.5):
    """Connected random RLC network with ground-referencing shunts.

    A spanning tree keeps it connected; extra edges add meshes.  Shunts
    guarantee the full nodal matrix is invertible so tests can solve the
    unreduced system directly.
    """
    ids = list(range(1, n_bus + 1))
    boundary = set(boundary)
    buses = [Bus(id=b, kind="boundary" if b in boundary else "internal")
             for b in ids]
    edges = [(int(rng.integers(1, k)), k) for k in range(2, n_bus + 1)]
    if extra_edges is None:
        extra_edges = int(rng.integers(0, n_bus))
    for _ in range(extra_edges):
        i, j = rng.choice(ids, size=2, replace=False)
        edges.append((int(i), int(j)))

    branches = []
    for i, j in edges:
        model = "pi" if rng.random() < 0.4 else "series_rl"
        branches.append(Branch(
            from_bus=i, to_bus=j,
            r=float(rng.uniform(0.02, 2.0)),
            l=float(10 ** rng.uniform(-4.0, -2.0)),
            c=float(10 ** rng.uniform(-7.0, -5.0)) if model == "pi" else 0.0,
            model=model))
    for b in ids:
        if rng.random() < shunt_fraction:
            branches.append(Branch(
                from_bus=b, to_bus=0,
                r=float(rng.uniform(0.5, 50.0)),
                c=float(10 ** rng.uniform(-7.0, -5.0)),
                model="shunt_rc"))
    # at least one ground reference
    if not any(br.model == "shunt_rc" for br in branches):
        branches.append(Branch(from_bus=ids[0], to_bus=0, r=10.0, c=1e-6,
                               model="shunt_rc"))
    return NetworkCase(buses=buses, branches=branches)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
