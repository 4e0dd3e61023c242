"""Coherency screening from modal participation factors.

The electromechanical mode shapes of the external system are summarized by
a participation matrix P with one row per machine and one column per
retained mode.  Two quantities are derived:

  * a localness index per machine: sum over modes of (1 - P)^n with n the
    machine count, large when a machine barely participates anywhere and
    zero for full participation in every mode
  * coherent groups: machines whose above-threshold mode signatures are
    identical swing together and may be aggregated
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ParticipationError(ValueError):
    """Participation matrix fails validation."""


def _check_participation(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 2:
        raise ParticipationError(f"participation matrix must be 2-D, "
                                 f"got shape {p.shape}")
    if p.size == 0:
        raise ParticipationError("participation matrix is empty")
    if not np.all(np.isfinite(p)):
        raise ParticipationError("participation matrix has non-finite entries")
    if p.min() < 0.0 or p.max() > 1.0:
        raise ParticipationError("participation factors must lie in [0, 1]")
    return p


def localness_index(p) -> np.ndarray:
    """Per-machine localness, higher meaning weaker modal participation.

    For machine count n, machine g scores sum_j (1 - P[g, j])**n over the
    retained modes j.
    """
    p = _check_participation(p)
    n = p.shape[0]
    # scalar pow, mode-major order: ndarray**int takes a different libm path
    # than float**int and drifts a ulp for n >= 5, which would break exact
    # agreement with the defining double sum
    loc = np.zeros(n)
    for g in range(n):
        s = 0.0
        for j in range(p.shape[1]):
            s += (1.0 - p[g, j]) ** n
        loc[g] = s
    return loc


@dataclass
class CoherentGrouping:
    """Partition of machines into coherent groups.

    Groups are numbered 1..K in order of their smallest member id.
    ``external_group`` is set by the caller once one group is chosen for
    reduction; the toolkit never picks it automatically.
    """

    groups: tuple[tuple[int, ...], ...]
    localness: dict[int, float]
    tau: float
    external_group: int | None = None

    def __post_init__(self):
        if self.external_group is not None:
            if not 1 <= self.external_group <= len(self.groups):
                raise ValueError(f"external_group {self.external_group} out "
                                 f"of range 1..{len(self.groups)}")

    def group_of(self, gen_id: int) -> int:
        for k, members in enumerate(self.groups, start=1):
            if gen_id in members:
                return k
        raise KeyError(f"generator {gen_id} not in grouping")

    def external_members(self) -> tuple[int, ...]:
        if self.external_group is None:
            raise ValueError("external group not selected")
        return self.groups[self.external_group - 1]

    def as_sets(self) -> set:
        return {frozenset(g) for g in self.groups}


def group_by_participation(p, gen_ids=None, tau: float = 0.1) -> CoherentGrouping:
    """Group machines by identical strong-mode signatures.

    A machine's signature is the set of modes where its participation is at
    least ``tau``.  Machines with equal signatures form one group.  Group
    numbering is deterministic: groups are sorted by smallest member id.
    """
    p = _check_participation(p)
    if not 0.0 < tau <= 1.0:
        raise ParticipationError(f"tau must be in (0, 1], got {tau}")
    n = p.shape[0]
    if gen_ids is None:
        gen_ids = list(range(1, n + 1))
    gen_ids = list(gen_ids)
    if len(gen_ids) != n:
        raise ParticipationError(f"{n} machines but {len(gen_ids)} ids")
    if len(set(gen_ids)) != n:
        raise ParticipationError("duplicate generator ids")

    by_sig: dict[frozenset, list[int]] = {}
    for row, gid in enumerate(gen_ids):
        sig = frozenset(np.nonzero(p[row] >= tau)[0].tolist())
        by_sig.setdefault(sig, []).append(gid)
    groups = sorted((tuple(sorted(members)) for members in by_sig.values()),
                    key=lambda g: g[0])
    loc = localness_index(p)
    localness = {gid: float(loc[row]) for row, gid in enumerate(gen_ids)}
    return CoherentGrouping(groups=tuple(groups), localness=localness, tau=tau)
