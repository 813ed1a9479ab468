"""Command-line interface.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import __version__, datamodel, exposure, matching, pipeline, synth
from .errors import (
    ConfigError,
    DataError,
    ExpomatchError,
    IoFailureError,
    NumericalError,
    RegionAnalysisError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="TOML config file")
    parser.add_argument("--data", metavar="PATH", help="input ZIP table CSV")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--cutoff", type=float, metavar="X",
                        help="exposure cutoff in ug/m3 (default 4.0)")
    parser.add_argument("--seed", type=int, metavar="N", help="generator seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expomatch",
        description="Source-oriented exposure classification, propensity matching, "
                    "and per-region Poisson rate-ratio analysis.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-check", help="parse and validate the input table")
    _add_common(p)

    p = sub.add_parser("classify", help="label ZIPs high-exposed or control at a cutoff")
    _add_common(p)

    p = sub.add_parser("match", help="propensity-score matching without the outcome model")
    _add_common(p)

    p = sub.add_parser("analyze", help="matched Poisson IRR analysis")
    _add_common(p)
    p.add_argument("--mode", choices=["primary", "secondary"], default=None,
                   help="primary (default) or secondary (pm25-adjusted)")

    p = sub.add_parser("stratify", help="propensity-quintile stratified analysis")
    _add_common(p)

    p = sub.add_parser("daps", help="distance-adjusted matched analysis")
    _add_common(p)

    p = sub.add_parser("sweep", help="primary analysis over a cutoff range")
    _add_common(p)
    p.add_argument("--sweep", metavar="LO:HI:STEP", help="cutoff grid (default 3.0:5.0:0.25)")

    p = sub.add_parser("synth", help="generate a synthetic input table with ground truth")
    _add_common(p)
    p.add_argument("--n-per-region", type=int, default=2000)
    p.add_argument("--true-irr", type=float, default=1.0, help="true incidence rate ratio")
    p.add_argument("--confounding", type=float, default=1.0)
    p.add_argument("--spatial", type=float, default=0.0)
    p.add_argument("--pm25-shift", type=float, default=0.0)
    p.add_argument("--pm25-effect", type=float, default=0.0)

    p = sub.add_parser("report", help="print the human-readable IRR table of a finished run")
    p.add_argument("run_dir", metavar="DIR")
    return parser


def _overrides_from_args(args) -> dict:
    overrides = {
        "data_csv": getattr(args, "data", None),
        "out_dir": getattr(args, "out", None),
        "cutoff": getattr(args, "cutoff", None),
        "seed": getattr(args, "seed", None),
    }
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    if getattr(args, "sweep", None):
        parts = args.sweep.split(":")
        if len(parts) != 3:
            raise ConfigError(f"--sweep expects LO:HI:STEP, got {args.sweep!r}")
        try:
            overrides["sweep_lo"], overrides["sweep_hi"], overrides["sweep_step"] = (
                float(parts[0]), float(parts[1]), float(parts[2])
            )
        except ValueError as err:
            raise ConfigError(f"invalid --sweep value {args.sweep!r}") from err
    return overrides


def _resolve_config(args, mode: pipeline.AnalysisMode | None) -> pipeline.RunConfig:
    overrides = _overrides_from_args(args)
    if mode is not None:
        overrides["mode"] = mode
    if getattr(args, "config", None):
        config = pipeline.load_config(args.config, overrides)
    else:
        config = pipeline.config_from_mapping({}, overrides)
    if config.data_csv is None:
        raise ConfigError("no input table: pass --data or set data_csv in the config")
    return config


def _load_dataset(config: pipeline.RunConfig) -> datamodel.Dataset:
    if not os.path.exists(config.data_csv):
        raise DataError(f"input file not found: {config.data_csv}")
    return datamodel.parse_zip_table(config.data_csv, schema=config.schema or None)


def _cmd_ingest_check(args) -> int:
    config = _resolve_config(args, None)
    ds = _load_dataset(config)
    violations = datamodel.validate(ds)
    prov = ds.provenance
    print(f"accepted {prov.accepted} rows, dropped {prov.dropped} "
          f"(source {prov.source}, sha256 {prov.digest[:12]})")
    by_region = datamodel.split_by_region(ds)
    for region in datamodel.Region:
        print(f"  {region.code}: {len(by_region[region])} ZIPs")
    if violations:
        print(f"{len(violations)} invariant violations (records excluded from models):")
        for v in violations[:20]:
            print(f"  {v.zip_id}: {v.rule} = {v.value}")
        if len(violations) > 20:
            print(f"  ... and {len(violations) - 20} more")
    else:
        print("all records pass validation")
    return EXIT_OK


def _cmd_classify(args) -> int:
    config = _resolve_config(args, None)
    ds = _load_dataset(config)
    summary = exposure.classify(ds, config.cutoff)
    print(f"cutoff {config.cutoff}: {summary.n_high_exposed} high-exposed, "
          f"{summary.n_control} control")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "exposure_assignments.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["zip", "label", "influence", "cutoff"])
            for a in summary:
                writer.writerow([a.zip_id, a.label.value, repr(a.influence), repr(a.cutoff)])
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_match(args) -> int:
    config = _resolve_config(args, None)
    ds = _load_dataset(config)
    ds, _ = pipeline.prepare_dataset(ds)
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    for region, sub in datamodel.split_by_region(ds).items():
        if not sub.records:
            continue
        summary = exposure.classify(sub, config.cutoff)
        flags = np.array([a.treated for a in summary], dtype=float)
        try:
            _, units = pipeline._ps_units(list(sub.records), flags, with_pm25=False)
            matched = matching.match_with_trim(units, config.caliper_factor)
        except ExpomatchError as err:
            raise RegionAnalysisError(region.code, err) from err
        path = os.path.join(out_dir, f"matched_{region.code}.csv")
        matching.write_matched_set(matched, units, path)
        print(f"{region.code}: {matched.n_pairs} pairs "
              f"(caliper {matched.caliper:.4f}), wrote {path}")
    return EXIT_OK


def _run_and_emit(args, mode: pipeline.AnalysisMode) -> int:
    config = _resolve_config(args, mode)
    ds = _load_dataset(config)
    report = pipeline.run(ds, config)
    written = pipeline.emit_report(report, config.out_dir)
    print(pipeline.human_table(report), end="")
    print(f"wrote {len(written)} files to {config.out_dir}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    import math

    if args.true_irr <= 0:
        raise ConfigError("--true-irr must be positive")
    params = synth.SynthParams(
        n_per_region=args.n_per_region,
        true_log_irr=math.log(args.true_irr),
        confounding_strength=args.confounding,
        spatial_confounder_scale=args.spatial,
        seed=args.seed if args.seed is not None else 0,
        pm25_treated_shift=args.pm25_shift,
        pm25_outcome_effect=args.pm25_effect,
    )
    ds, truth = synth.generate(params)
    out_dir = args.out or "synth_out"
    os.makedirs(out_dir, exist_ok=True)
    data_path = os.path.join(out_dir, "data.csv")
    truth_path = os.path.join(out_dir, "ground_truth.csv")
    datamodel.write_zip_table(ds, data_path)
    synth.write_ground_truth_csv(truth, truth_path)
    print(f"wrote {data_path} ({len(ds)} ZIPs) and {truth_path}")
    return EXIT_OK


def _cmd_report(args) -> int:
    path = os.path.join(args.run_dir, "irr_table.csv")
    if not os.path.exists(path):
        raise DataError(f"no irr_table.csv under {args.run_dir}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    print(f"{'region':<8} {'mode':<10} {'IRR':>6} {'95% CI':>16} {'pairs':>7}")
    for row in rows:
        irr = float(row["irr"])
        ci = f"({float(row['ci_low']):.2f}, {float(row['ci_high']):.2f})"
        print(f"{row['region']:<8} {row['mode']:<10} {irr:>6.2f} {ci:>16} {row['n_pairs']:>7}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "ingest-check": lambda: _cmd_ingest_check(args),
        "classify": lambda: _cmd_classify(args),
        "match": lambda: _cmd_match(args),
        "analyze": lambda: _run_and_emit(args, None),
        "stratify": lambda: _run_and_emit(args, pipeline.AnalysisMode.Stratified),
        "daps": lambda: _run_and_emit(args, pipeline.AnalysisMode.Daps),
        "sweep": lambda: _run_and_emit(args, pipeline.AnalysisMode.Sweep),
        "synth": lambda: _cmd_synth(args),
        "report": lambda: _cmd_report(args),
    }
    try:
        return handlers[args.command]()
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except RegionAnalysisError as err:
        code = EXIT_NUMERICAL if isinstance(err.cause, NumericalError) else EXIT_DATA
        print(f"error: {err}", file=sys.stderr)
        return code
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, IoFailureError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except ExpomatchError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
