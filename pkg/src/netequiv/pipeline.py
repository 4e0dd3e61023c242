"""Experiment orchestration: one config file, one output directory.

A run config names a case, a fault scenario, and the knobs of every stage
(sweep schedule, fit order, passivity grid).  ``run_pipeline`` chains

    reduce -> sweep -> identify -> passify -> simulate -> compare

and writes each stage's artifact into the output directory, so a failed
run leaves everything up to the failing stage on disk.  Any stage error
propagates as :class:`PipelineError` carrying the stage name.

The reference is always the full-detail ``emt`` run of the same case and
scenario; the configured variant is compared against it channel by
channel.  Two runs of the same config and seed produce byte-identical
model files and reports; wall-clock timings are therefore kept out of
``report.txt`` and written to ``timing.txt`` on the side.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .emt_sim import Event, SweepRecord, SweepSpec, TimeSeries, frequency_sweep
from .fileio import (FormatError, load_case, load_model, load_timeseries_csv,
                     parse_kv, parse_sections, save_admittance_csv,
                     save_model, save_passivity_csv, save_timeseries_csv)
from .hybrid import (VARIANTS, comparison_channels, external_equivalent_case,
                     external_partition, run_hybrid, split_case)
from .metrics import ComparisonReport, TimingReport, compare_series
from .netmodel import AdmittanceSampleSet, NetworkCase
from .passivity import check_passivity, enforce_passivity, sample_admittance
from .rls_ident import TFMatrix, fit_mimo

__all__ = [
    "ConfigError", "PipelineError", "RunConfig", "load_config",
    "run_pipeline", "timing_report",
    "stage_reduce", "stage_sweep", "stage_identify", "stage_passify",
    "stage_simulate", "stage_compare",
]


class ConfigError(ValueError):
    """Run config missing, malformed, or inconsistent."""


class PipelineError(RuntimeError):
    """A stage failed; str(err) starts with the [stage] tag."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class RunConfig:
    """Everything one experiment needs, resolvable from a single file.

    ``seed`` is recorded with the run so randomized scenario generators
    can key off it; the reference pipeline itself is deterministic.
    Paths in a config file are taken relative to the file's directory.
    ``f_max`` of None means "up to the Nyquist limit of the run".
    ``window_start``/``window_stop`` bound the comparison in seconds on
    the simulation clock; both default to the full scenario.
    """

    case: str
    out: str = "runs/out"
    variant: str = "emt_fdne_tsa"
    samples_per_cycle: int = 334
    tsa_every: int = 100
    seed: int = 0
    # scenario
    fault_bus: int | None = None
    fault_start: float = 0.7
    fault_duration: float = 0.1
    fault_r: float = 1e-4
    duration: float = 2.0
    settle: float = 0.4
    window_start: float | None = None
    window_stop: float | None = None
    # sweep
    f_start: float = 1.0
    f_stop: float = 2400.0
    f_step: float = 2.0
    cycles: int = 5
    amplitude: float = 1.0
    # fit
    order: int = 12
    gamma: float = 1.0
    feedthrough: bool = True
    p0: float = 1e9
    # passivity grid
    f_max: float | None = None
    n_grid: int = 1200
    rounds: int = 4

    def validate(self) -> None:
        if not self.case:
            raise ConfigError("config names no case file")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; "
                              f"one of {', '.join(VARIANTS)}")
        if self.samples_per_cycle < 8:
            raise ConfigError("samples_per_cycle must be at least 8")
        if self.tsa_every < 1:
            raise ConfigError("tsa_every must be a positive sample count")
        if not 0.0 < self.settle < self.duration:
            raise ConfigError("need 0 < settle < duration")
        if self.fault_bus is not None:
            if self.fault_start < self.settle:
                raise ConfigError("fault must start after the settle window")
            if self.fault_duration <= 0.0 or self.fault_r <= 0.0:
                raise ConfigError("fault duration and resistance must be "
                                  "positive")
        if not 0.0 < self.f_start <= self.f_stop:
            raise ConfigError("need 0 < f_start <= f_stop")
        if self.f_step <= 0.0 or self.cycles < 2 or self.amplitude <= 0.0:
            raise ConfigError("sweep needs f_step > 0, cycles >= 2, "
                              "amplitude > 0")
        if self.order < 1:
            raise ConfigError("fit order must be at least 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("forgetting factor must be in (0, 1]")
        if self.p0 <= 0.0:
            raise ConfigError("prior covariance p0 must be positive")
        if self.f_max is not None and self.f_max <= 0.0:
            raise ConfigError("f_max must be positive (or auto)")
        if self.n_grid < 2 or self.rounds < 1:
            raise ConfigError("passivity grid needs n_grid >= 2, rounds >= 1")
        for name in ("window_start", "window_stop"):
            w = getattr(self, name)
            if w is not None and not 0.0 <= w <= self.duration:
                raise ConfigError(f"{name} outside the scenario")
        if (self.window_start is not None and self.window_stop is not None
                and self.window_stop <= self.window_start):
            raise ConfigError("window_stop must exceed window_start")


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _parse_auto_float(raw: str):
    return None if raw.lower() in ("auto", "none") else float(raw)


def _parse_opt_int(raw: str):
    return None if raw.lower() == "none" else int(raw)


# Section -> key -> parser.  Key names match the RunConfig fields.
_SCHEMA = {
    "run": {"case": str, "out": str, "variant": str,
            "samples_per_cycle": int, "tsa_every": int, "seed": int},
    "scenario": {"fault_bus": _parse_opt_int, "fault_start": float,
                 "fault_duration": float, "fault_r": float,
                 "duration": float, "settle": float,
                 "window_start": _parse_auto_float,
                 "window_stop": _parse_auto_float},
    "sweep": {"f_start": float, "f_stop": float, "f_step": float,
              "cycles": int, "amplitude": float},
    "fit": {"order": int, "gamma": float, "feedthrough": _parse_bool,
            "p0": float},
    "passivity": {"f_max": _parse_auto_float, "n_grid": int, "rounds": int},
}


def load_config(path) -> RunConfig:
    """Parse a sectioned-text run config; see data/two_area.cfg."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        sections = parse_sections(text)
    except FormatError as exc:
        raise ConfigError(str(exc)) from exc

    known = {f.name for f in fields(RunConfig)}
    kw = {}
    for sec, lines in sections.items():
        schema = _SCHEMA.get(sec)
        if schema is None:
            raise ConfigError(f"unknown config section [{sec}]")
        try:
            pairs = parse_kv(lines, sec)
        except FormatError as exc:
            raise ConfigError(str(exc)) from exc
        for key, raw in pairs.items():
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]")
            try:
                kw[key] = schema[key](raw)
            except ValueError:
                raise ConfigError(f"bad value for {sec}.{key}: "
                                  f"{raw!r}") from None
    assert set(kw) <= known
    if "case" not in kw:
        raise ConfigError("config must name a case ([run] case = ...)")

    cfg = RunConfig(**kw)
    base = path.resolve().parent
    for name in ("case", "out"):
        p = Path(getattr(cfg, name))
        if not p.is_absolute():
            setattr(cfg, name, str(base / p))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# stages
#
# Each stage raises PipelineError with its own tag; run_pipeline chains
# them and files the artifacts.  They are also the workers behind the
# matching CLI verbs, which chain through the artifact files instead.


def _wrap(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, str(exc)) from exc


def load_case_checked(cfg: RunConfig) -> NetworkCase:
    """The config's case, cut-validated so later stages cannot surprise."""
    def work():
        case = load_case(cfg.case)
        split_case(case)
        return case
    return _wrap("load", work)


def run_timestep(cfg: RunConfig, case: NetworkCase) -> float:
    return 1.0 / (case.f_nominal * cfg.samples_per_cycle)


def stage_reduce(cfg: RunConfig, case: NetworkCase) -> AdmittanceSampleSet:
    """External network reduced to boundary + machine buses at nominal."""
    def work():
        part, gen_buses = external_partition(case)
        ports = tuple(part.boundary) + tuple(gen_buses)
        return AdmittanceSampleSet(f_hz=[case.f_nominal],
                                   y=part.assemble()[None, :, :],
                                   ports=ports)
    return _wrap("reduce", work)


def stage_sweep(cfg: RunConfig, case: NetworkCase) -> dict[int, SweepRecord]:
    """Stepped-sine sweep of the de-energized external network."""
    def work():
        sp = split_case(case)
        spec = SweepSpec(f_start=cfg.f_start, f_stop=cfg.f_stop,
                         f_step=cfg.f_step, amplitude=cfg.amplitude,
                         cycles=cfg.cycles, ts=run_timestep(cfg, case))
        return frequency_sweep(external_equivalent_case(case),
                               sp.boundary, spec)
    return _wrap("sweep", work)


def stage_identify(cfg: RunConfig, records: dict, ports) -> TFMatrix:
    """Fit the wide-band boundary admittance from the sweep records."""
    return _wrap("identify", fit_mimo, records, ports, n=cfg.order,
                 gamma=cfg.gamma, feedthrough=cfg.feedthrough, p0=cfg.p0)


def passivity_grid(cfg: RunConfig, ts: float) -> np.ndarray:
    """DC to (just below) Nyquist unless the config caps it lower."""
    nyq = 0.5 / ts
    f_max = np.nextafter(nyq, 0.0) if cfg.f_max is None else cfg.f_max
    if f_max >= nyq:
        raise PipelineError("passify", f"f_max {f_max:g} is at or above the "
                            f"Nyquist limit {nyq:g} of this run")
    return np.linspace(0.0, f_max, cfg.n_grid)


def stage_passify(cfg: RunConfig, model: TFMatrix):
    """Enforce passivity on the configured grid.

    Returns (enforced model, report before, report after).
    """
    def work():
        grid = passivity_grid(cfg, model.ts)
        before = check_passivity(sample_admittance(model, grid))
        enforced = enforce_passivity(model, grid, max_rounds=cfg.rounds)
        after = check_passivity(sample_admittance(enforced, grid))
        return enforced, before, after
    return _wrap("passify", work)


def scenario_events(cfg: RunConfig) -> list[Event]:
    if cfg.fault_bus is None:
        return []
    return [Event(kind="fault", t_start=cfg.fault_start, bus=cfg.fault_bus,
                  duration=cfg.fault_duration, value=cfg.fault_r)]


def stage_simulate(cfg: RunConfig, case: NetworkCase, variant: str,
                   model: TFMatrix | None = None) -> TimeSeries:
    """One variant of the configured scenario."""
    return _wrap("simulate", run_hybrid, case, variant, model,
                 ts=run_timestep(cfg, case), duration=cfg.duration,
                 events=scenario_events(cfg), settle=cfg.settle,
                 tsa_every=cfg.tsa_every)


def _window(series: TimeSeries, k0: int, k1: int) -> TimeSeries:
    ch = {name: v[k0:k1] for name, v in series.channels.items()}
    return TimeSeries(ts=series.ts, channels=ch, t0=series.t0 + k0 * series.ts)


def stage_compare(cfg: RunConfig, case: NetworkCase, reference: TimeSeries,
                  actual: TimeSeries) -> ComparisonReport:
    """Per-channel relative errors over the configured window."""
    def work():
        k0 = (0 if cfg.window_start is None
              else int(round(cfg.window_start / reference.ts)))
        k1 = (len(reference) if cfg.window_stop is None
              else int(round(cfg.window_stop / reference.ts)))
        ref = _window(reference, k0, k1)
        act = _window(actual, k0, k1)
        return compare_series(ref, act, comparison_channels(case),
                              reference_name="emt", variant_name=cfg.variant)
    return _wrap("compare", work)


# ---------------------------------------------------------------------------
# the chained run


def _save_errors_csv(report: ComparisonReport, path) -> None:
    lines = ["channel,relative_error"]
    lines += [f"{name},{report.errors[name]:.17g}"
              for name in sorted(report.errors)]
    Path(path).write_text("\n".join(lines) + "\n")


def run_pipeline(cfg: RunConfig) -> ComparisonReport:
    """Run every stage, filing artifacts under cfg.out.

    Writes reduced.csv, sweep_<port>.csv, model_raw.txt, passivity_raw.csv,
    model.txt, passivity.csv (fdne variants only), run_emt.csv,
    run_<variant>.csv, report.txt, errors.csv and timing.txt.
    """
    try:
        cfg.validate()
    except ConfigError as exc:
        raise PipelineError("config", str(exc)) from exc
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    timing = TimingReport()
    t_all = time.perf_counter()

    case = load_case_checked(cfg)
    ts = run_timestep(cfg, case)

    t0 = time.perf_counter()
    reduced = stage_reduce(cfg, case)
    save_admittance_csv(reduced, out / "reduced.csv")
    timing.add("reduce", time.perf_counter() - t0)

    model = None
    t_fdne = 0.0
    if "fdne" in cfg.variant:
        t0 = time.perf_counter()
        records = stage_sweep(cfg, case)
        for port, rec in sorted(records.items()):
            save_timeseries_csv(rec.series, out / f"sweep_{port}.csv")
        timing.add("FDNE sweep", time.perf_counter() - t0)

        t1 = time.perf_counter()
        raw = stage_identify(cfg, records, sorted(records))
        save_model(raw, out / "model_raw.txt")
        timing.add("FDNE fit", time.perf_counter() - t1)

        t2 = time.perf_counter()
        model, before, after = stage_passify(cfg, raw)
        save_passivity_csv(before, out / "passivity_raw.csv")
        save_model(model, out / "model.txt")
        save_passivity_csv(after, out / "passivity.csv")
        timing.add("FDNE passify", time.perf_counter() - t2)
        t_fdne = time.perf_counter() - t0
    timing.add("FDNE sweep+fit+passify", t_fdne)

    # The phasor-side build is repeated inside the variant run; this
    # entry measures the same computation standalone.
    t0 = time.perf_counter()
    if "tsa" in cfg.variant:
        _wrap("tsa", external_partition, case,
              aggregate=cfg.variant.endswith("agg"))
    timing.add("TSA build", time.perf_counter() - t0)

    t0 = time.perf_counter()
    reference = stage_simulate(cfg, case, "emt")
    save_timeseries_csv(reference, out / "run_emt.csv")
    timing.add("simulate emt", time.perf_counter() - t0)

    if cfg.variant == "emt":
        actual = reference
    else:
        t0 = time.perf_counter()
        actual = stage_simulate(cfg, case, cfg.variant, model)
        save_timeseries_csv(actual, out / f"run_{cfg.variant}.csv")
        timing.add(f"simulate {cfg.variant}", time.perf_counter() - t0)

    t0 = time.perf_counter()
    report = stage_compare(cfg, case, reference, actual)
    (out / "report.txt").write_text("\n".join(report.lines()) + "\n")
    _save_errors_csv(report, out / "errors.csv")
    timing.add("compare", time.perf_counter() - t0)

    timing.add("total", time.perf_counter() - t_all)
    (out / "timing.txt").write_text("\n".join(timing.lines()) + "\n")
    return report


def timing_report(cfg: RunConfig) -> TimingReport:
    """Stage timings of the completed run under cfg.out."""
    path = Path(cfg.out) / "timing.txt"
    if not path.exists():
        raise PipelineError("timing", f"no timing record at {path}; "
                            "run the pipeline first")
    rep = TimingReport()
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        body = line.rstrip()
        if not body.endswith(" s"):
            raise PipelineError("timing", f"unrecognized timing line {line!r}")
        try:
            name, sec = body[:-2].rsplit(None, 1)
            rep.add(name, float(sec))
        except ValueError:
            raise PipelineError("timing",
                                f"unrecognized timing line {line!r}") from None
    return rep
