#!/usr/bin/env python3
"""
microtrap command line: solve-fields, run, fit, waveform, report.

Every command prints its result as indented JSON on stdout and writes its
artifacts to the output directory (--out, else the config's output_dir,
else MICROTRAP_RESULTS_DIR). Expected failures print one line on stderr
and exit with the code of the error class (see microtrap.errors).
"""
import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from microtrap import __version__
from microtrap.config import (
    RunConfig,
    TransportRequest,
    config_hash,
    configure_logging,
    describe_validation,
    load_experiment,
    load_run_config,
)
from microtrap.constants import mhz_to_angular
from microtrap.errors import ConfigError, MicrotrapError
from microtrap.estimators import FIT_MODELS, fit_record
from microtrap.field_cache import FieldCache
from microtrap.field_solver import PotentialField, electrode_window
from microtrap.records import (
    read_json,
    read_record,
    write_frame,
    write_json,
    write_record,
    write_waveform,
)
from microtrap.reporting import (
    DEFAULT_PROFILE,
    TOLERANCE_PROFILES,
    build_field_report,
    lamb_dicke_values,
    measure_fields,
    summarize_outputs,
)
from microtrap.sequence_engine import scan
from microtrap.waveform_synth import BasisCurves, shuttle_waveform

logger = logging.getLogger(__name__)

FIELD_REPORT = "field_report.json"


def _print(doc: Dict) -> None:
    print(json.dumps(doc, indent=2, default=str))


def _load_config(args) -> RunConfig:
    if not args.config:
        return RunConfig()
    return load_run_config(args.config)


def _seed(args, config: RunConfig) -> int:
    return config.seed if args.seed is None else args.seed


def cmd_solve_fields(args) -> Dict:
    """Solve or load every basis field and check the trap constants."""
    config = _load_config(args)
    out = config.output_path(args.out)
    geometry = config.geometry()
    grid = config.grid
    cache = FieldCache(config.cache_path())
    drive, ion = config.drive.to_drive(), config.ion.to_ion()
    logger.info("Solving fields for %d segment pairs (grid %g µm)", geometry.n_pairs, grid.spacing_um)

    result = measure_fields(
        geometry,
        drive,
        ion,
        grid.spacing_um,
        grid.margin_factor,
        grid.window_half_length_um,
        grid.tolerance,
        grid.max_iterations,
        grid.levels,
        grid.field_model,
        cache,
        config.workers(),
        refine=args.refine,
    )
    measured = dict(result.values)
    measured.update(lamb_dicke_values(config.beam("spectroscopy"), ion))

    files = []
    for name, table in result.tables.items():
        files.append(write_frame(table, os.path.join(out, f"{name}.csv")))
    report = build_field_report(
        measured,
        args.tolerance_profile,
        extra={
            "seed": _seed(args, config),
            "config_hash": config_hash(config),
            "geometry_hash": geometry.hash,
            "field_model": grid.field_model,
            "cache_dir": cache.directory,
            "files": [os.path.basename(f) for f in files],
        },
    )
    write_json(report, os.path.join(out, FIELD_REPORT))
    return report


def cmd_run(args) -> Dict:
    """Run an experiment file (scan or single sequence) and write the record CSV."""
    config = _load_config(args)
    path = args.sequence or config.resolve(config.sequence_file)
    if not path:
        raise ConfigError("No experiment file: pass --sequence or set sequence_file")
    experiment = load_experiment(path)
    if args.shots is not None:
        if args.shots < 1:
            raise ConfigError("--shots must be >= 1")
        experiment = experiment.model_copy(update={"shots": args.shots})
    seed = _seed(args, config)
    digest = config_hash(config, experiment)
    record = scan(experiment, config.experiment, seed, config.workers(), digest)

    name = args.name or os.path.splitext(os.path.basename(path))[0]
    out = os.path.join(config.output_path(args.out), f"{name}.csv")
    write_record(record, out)
    return {
        "record": out,
        "rows": len(record.frame),
        "variable": record.variable,
        "unit": record.unit,
        "shots": experiment.shots,
        "seed": seed,
        "config_hash": digest,
    }


def cmd_fit(args) -> Dict:
    """Fit a record file with one of the estimator models."""
    frame, meta = read_record(args.record)
    report = fit_record(frame, args.model, meta.get("variable", ""), meta.get("unit", ""))
    report["record"] = os.path.abspath(args.record)
    for key in ("seed", "config_hash"):
        if key in meta:
            report[key] = meta[key]
    out_dir = args.out or os.path.dirname(os.path.abspath(args.record))
    stem = os.path.splitext(os.path.basename(args.record))[0]
    write_json(report, os.path.join(out_dir, f"{stem}.{args.model}.fit.json"))
    return report


def cached_dc_fields(config: RunConfig) -> Dict[str, PotentialField]:
    """
    DC basis fields from the cache, without solving.

    Raises:
        ConfigError: any field missing (solve-fields has not been run)
    """
    geometry = config.geometry()
    grid = config.grid
    cache = FieldCache(config.cache_path())
    fields, missing = {}, []
    for electrode in geometry.dc_electrodes:
        window = electrode_window(geometry, electrode.label, grid.spacing_um, grid.margin_factor)
        f = cache.load(geometry, window, electrode.label, grid.tolerance)
        if f is None:
            missing.append(electrode.label)
        else:
            fields[electrode.label] = f
    if missing:
        raise ConfigError(
            f"{len(missing)} DC basis fields not cached (first: {missing[0]}); "
            "run solve-fields with this config first"
        )
    return fields


def load_basis(config: RunConfig) -> BasisCurves:
    geometry = config.geometry()
    if config.grid.field_model == "analytic":
        return BasisCurves.analytic(geometry)
    lo, hi = geometry.x_extent
    return BasisCurves.from_fields(geometry, cached_dc_fields(config), np.arange(lo, hi + 2.5, 5.0))


def cmd_waveform(args) -> Dict:
    """Synthesize a shuttling waveform between two segments."""
    config = _load_config(args)
    request = config.transport
    overrides = {
        k: v
        for k, v in {
            "start_segment": args.start,
            "end_segment": args.end,
            "duration_us": args.duration_us,
            "samples": args.samples,
            "omega_ax_MHz": args.omega_ax_MHz,
        }.items()
        if v is not None
    }
    if request is None and not {"start_segment", "end_segment"} <= overrides.keys():
        raise ConfigError("No transport request: set 'transport' or pass --start and --end")
    doc = {**(request.model_dump() if request else {}), **overrides}
    try:
        request = TransportRequest.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(f"transport: {describe_validation(e)}")

    basis = load_basis(config)
    omega = mhz_to_angular(request.omega_ax_MHz)
    waveform = shuttle_waveform(
        basis,
        request.start_segment,
        request.end_segment,
        request.duration_us,
        request.samples,
        omega,
        config.ion.to_ion(),
        request.bound_V,
        request.slew_limit_V,
        request.drift_tolerance,
        workers=config.workers(),
        continuity=request.continuity,
    )
    name = f"waveform_{waveform.metadata['start_segment']}_{waveform.metadata['end_segment']}"
    path = os.path.join(config.output_path(args.out), f"{name}.csv")
    extra = {"seed": _seed(args, config), "config_hash": config_hash(config)}
    csv_path, side_path = write_waveform(waveform, path, omega, extra)
    return {"waveform": csv_path, "sidecar": side_path, **waveform.report(omega), **waveform.metadata}


def cmd_report(args) -> Dict:
    """Summarise an output directory; re-evaluates the field report under the chosen profile."""
    config = _load_config(args)
    out = config.output_path(args.out)
    summary = summarize_outputs(out)
    report_path = os.path.join(out, FIELD_REPORT)
    if os.path.exists(report_path):
        stored = read_json(report_path)
        measured = {c["name"]: c["measured"] for c in stored.get("checks", [])}
        measured.update(stored.get("values", {}))
        rebuilt = build_field_report(measured, args.tolerance_profile)
        summary["field_report"] = {
            "profile": rebuilt["profile"],
            "passed": rebuilt["passed"],
            "failed": rebuilt["failed"],
            "failing": [c["name"] for c in rebuilt["checks"] if not c["pass"]],
        }
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="microtrap", description="Segmented microchip Paul trap simulator"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override MICROTRAP_LOG_LEVEL")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run configuration JSON")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed")
    common.add_argument("--out", help="Output directory")
    common.add_argument(
        "--tolerance-profile",
        default=DEFAULT_PROFILE,
        choices=sorted(TOLERANCE_PROFILES),
        help="Reference tolerance scaling for field reports",
    )

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-fields", parents=[common], help="Solve/cache basis fields and report")
    p.add_argument("--refine", action="store_true", help="Also solve the storage RF at half spacing")
    p.set_defaults(func=cmd_solve_fields)

    p = sub.add_parser("run", parents=[common], help="Run an experiment file")
    p.add_argument("--sequence", help="Experiment JSON (default: config sequence_file)")
    p.add_argument("--shots", type=int, default=None, help="Override shots per point")
    p.add_argument("--name", help="Record name (default: experiment file stem)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fit", parents=[common], help="Fit a record file")
    p.add_argument("record", help="Record CSV")
    p.add_argument("--model", required=True, choices=FIT_MODELS)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("waveform", parents=[common], help="Synthesize a transport waveform")
    p.add_argument("--start", type=int, default=None, help="Start segment index")
    p.add_argument("--end", type=int, default=None, help="End segment index")
    p.add_argument("--duration-us", type=float, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--omega-ax-MHz", dest="omega_ax_MHz", type=float, default=None)
    p.set_defaults(func=cmd_waveform)

    p = sub.add_parser("report", parents=[common], help="Summarise an output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging(args.log_level)
        result = args.func(args)
    except MicrotrapError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    _print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
