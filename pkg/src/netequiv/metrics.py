"""Comparison metrics between simulation variants.

The single figure of merit is the l2 relative error
||ref - actual|| / ||ref|| over matched channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .emt_sim import TimeSeries


class MetricError(ValueError):
    """Records cannot be compared."""


def relative_error(ref, actual) -> float:
    """l2 relative error of actual against ref."""
    ref = np.asarray(ref, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if ref.shape != actual.shape:
        raise MetricError(f"length mismatch: {ref.shape} vs {actual.shape}")
    denom = float(np.linalg.norm(ref))
    if denom == 0.0:
        raise MetricError("reference record has zero norm")
    return float(np.linalg.norm(ref - actual) / denom)


@dataclass
class ComparisonReport:
    """Per-channel relative errors of one variant against the reference."""

    reference: str
    variant: str
    errors: dict[str, float] = field(default_factory=dict)

    def worst(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def lines(self) -> list[str]:
        out = [f"variant {self.variant} vs {self.reference}"]
        for name in sorted(self.errors):
            out.append(f"  {name:24s} rel_err {self.errors[name]:.6g}")
        return out


def compare_series(ref: TimeSeries, actual: TimeSeries, channels,
                   reference_name: str = "reference",
                   variant_name: str = "variant",
                   skip: int = 0) -> ComparisonReport:
    """Relative error per channel, optionally skipping leading samples."""
    if abs(ref.ts - actual.ts) > 1e-15:
        raise MetricError(f"sample periods differ: {ref.ts} vs {actual.ts}")
    rep = ComparisonReport(reference=reference_name, variant=variant_name)
    for name in channels:
        a = ref.channel(name)[skip:]
        b = actual.channel(name)[skip:]
        n = min(len(a), len(b))
        if n == 0:
            raise MetricError(f"channel {name} empty after skip")
        rep.errors[name] = relative_error(a[:n], b[:n])
    return rep


@dataclass
class TimingReport:
    """Wall-clock seconds per pipeline stage."""

    stages: dict[str, float] = field(default_factory=dict)

    def add(self, stage: str, seconds: float) -> None:
        self.stages[stage] = self.stages.get(stage, 0.0) + seconds

    def lines(self) -> list[str]:
        width = max((len(s) for s in self.stages), default=0)
        return [f"{name:{width}s} {sec:10.3f} s"
                for name, sec in self.stages.items()]
