"""Command-line front end.

Verbs mirror the pipeline stages and chain through the artifact files in
the output directory, so stages can be re-run individually:

    netequiv reduce   --case two_area.case --out runs/a
    netequiv sweep    --config two_area.cfg
    netequiv identify --config two_area.cfg --order 12
    netequiv passify  --config two_area.cfg
    netequiv simulate --config two_area.cfg --variant emt_fdne_tsa
    netequiv compare  --config two_area.cfg
    netequiv pipeline --config two_area.cfg

Every verb accepts either a config file or bare flags; flags override the
config.  Errors exit nonzero with a [stage]-tagged message on stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .emt_sim import SweepRecord
from .fileio import (load_model, load_timeseries_csv, save_admittance_csv,
                     save_model, save_passivity_csv, save_timeseries_csv)
from .hybrid import VARIANTS, split_case
from .pipeline import (ConfigError, PipelineError, RunConfig, load_case_checked,
                       load_config, run_pipeline, stage_compare,
                       stage_identify, stage_passify, stage_reduce,
                       stage_simulate, stage_sweep, timing_report)

_VERBS = (
    ("reduce", "Kron-reduce the external network, write reduced.csv"),
    ("sweep", "stepped-sine sweep of the external network"),
    ("identify", "fit the boundary admittance from sweep records"),
    ("passify", "enforce passivity on the fitted model"),
    ("simulate", "run one variant of the configured scenario"),
    ("compare", "error report of the variant run against the emt run"),
    ("pipeline", "all of the above in order"),
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netequiv",
        description="network equivalents: reduce, fit, passify, co-simulate")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, text in _VERBS:
        q = sub.add_parser(verb, help=text)
        q.add_argument("--config", metavar="FILE", help="run config file")
        q.add_argument("--case", metavar="FILE",
                       help="case file (overrides the config)")
        q.add_argument("--out", metavar="DIR", help="artifact directory")
        q.add_argument("--variant", choices=VARIANTS,
                       help="external-area representation")
        q.add_argument("--order", type=int, help="fit order per entry")
        q.add_argument("--gamma", type=float, help="RLS forgetting factor")
        q.add_argument("--fmax", type=float,
                       help="frequency cap in Hz (sweep upper bound and "
                            "passivity grid limit)")
        q.add_argument("--seed", type=int, help="run seed (recorded)")
    return parser


def _config_from_args(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.case:
        cfg = RunConfig(case=args.case)
    else:
        raise ConfigError("need --config or --case")
    if args.case:
        cfg.case = args.case
    if args.out:
        cfg.out = args.out
    if args.variant:
        cfg.variant = args.variant
    if args.order is not None:
        cfg.order = args.order
    if args.gamma is not None:
        cfg.gamma = args.gamma
    if args.fmax is not None:
        cfg.f_stop = args.fmax
        cfg.f_max = args.fmax
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _wrote(path) -> None:
    print(f"wrote {path}")


def _cmd_reduce(cfg: RunConfig) -> int:
    case = load_case_checked(cfg)
    samples = stage_reduce(cfg, case)
    path = _outdir(cfg) / "reduced.csv"
    save_admittance_csv(samples, path)
    _wrote(path)
    return 0


def _cmd_sweep(cfg: RunConfig) -> int:
    case = load_case_checked(cfg)
    records = stage_sweep(cfg, case)
    out = _outdir(cfg)
    for port, rec in sorted(records.items()):
        path = out / f"sweep_{port}.csv"
        save_timeseries_csv(rec.series, path)
        _wrote(path)
    return 0


def _cmd_identify(cfg: RunConfig) -> int:
    case = load_case_checked(cfg)
    boundary = split_case(case).boundary
    out = _outdir(cfg)
    records = {}
    for port in boundary:
        path = out / f"sweep_{port}.csv"
        if not path.exists():
            raise PipelineError("identify", f"missing sweep record {path}; "
                                "run the sweep verb first")
        records[port] = SweepRecord(port=port,
                                    series=load_timeseries_csv(path),
                                    segments=[])
    model = stage_identify(cfg, records, boundary)
    path = out / "model_raw.txt"
    save_model(model, path)
    _wrote(path)
    return 0


def _cmd_passify(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    raw_path = out / "model_raw.txt"
    if not raw_path.exists():
        raise PipelineError("passify", f"missing fitted model {raw_path}; "
                            "run the identify verb first")
    model, before, after = stage_passify(cfg, load_model(raw_path))
    save_passivity_csv(before, out / "passivity_raw.csv")
    save_model(model, out / "model.txt")
    save_passivity_csv(after, out / "passivity.csv")
    _wrote(out / "model.txt")
    print(f"min conductance eigenvalue {before.min_eig.min():.3e} "
          f"-> {after.min_eig.min():.3e} over {len(before.f_hz)} samples")
    return 0


def _cmd_simulate(cfg: RunConfig) -> int:
    case = load_case_checked(cfg)
    out = _outdir(cfg)
    model = None
    if "fdne" in cfg.variant:
        path = out / "model.txt"
        if not path.exists():
            raise PipelineError("simulate", f"missing passive model {path}; "
                                "run the passify verb first")
        model = load_model(path)
    series = stage_simulate(cfg, case, cfg.variant, model)
    path = out / f"run_{cfg.variant}.csv"
    save_timeseries_csv(series, path)
    _wrote(path)
    return 0


def _cmd_compare(cfg: RunConfig) -> int:
    case = load_case_checked(cfg)
    out = _outdir(cfg)
    ref_path = out / "run_emt.csv"
    if not ref_path.exists():
        raise PipelineError("compare", f"missing reference run {ref_path}; "
                            "simulate --variant emt first")
    reference = load_timeseries_csv(ref_path)
    if cfg.variant == "emt":
        actual = reference
    else:
        act_path = out / f"run_{cfg.variant}.csv"
        if not act_path.exists():
            raise PipelineError("compare", f"missing variant run {act_path}; "
                                "run the simulate verb first")
        actual = load_timeseries_csv(act_path)
    report = stage_compare(cfg, case, reference, actual)
    (out / "report.txt").write_text("\n".join(report.lines()) + "\n")
    for line in report.lines():
        print(line)
    return 0


def _cmd_pipeline(cfg: RunConfig) -> int:
    report = run_pipeline(cfg)
    for line in report.lines():
        print(line)
    for line in timing_report(cfg).lines():
        print(f"  {line}")
    print(f"artifacts in {cfg.out}")
    return 0


_HANDLERS = {
    "reduce": _cmd_reduce,
    "sweep": _cmd_sweep,
    "identify": _cmd_identify,
    "passify": _cmd_passify,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "pipeline": _cmd_pipeline,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return _HANDLERS[args.verb](cfg)
    except ConfigError as exc:
        print(f"netequiv: error: [config] {exc}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        print(f"netequiv: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
