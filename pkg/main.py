# main.py
# Command-line runner for the smarticle glider simulator and experiment harness.

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from config import ConfigError, RunConfig, config_hash, load_config, resolve_output_dir
from constants import (
    BASIN_CSV_FILENAME, CALIBRATION_CSV_FILENAME, CALIBRATION_FILENAME, CYCLE_CSV_FILENAME, DIR_LOGS, DIR_PLOTS,
    DIR_TABLES, FEEDBACK_LIFETIMES_CSV_FILENAME, FEEDBACK_TRACES_CSV_FILENAME, GLIDERS_CSV_FILENAME,
    LOG_SCHEMA_VERSION, MANIFEST_FILENAME, PACKAGE_NAME, PACKAGE_VERSION, PERIOD_CSV_FILENAME,
    REFINED_TEMPLATES_FILENAME, RELAXATION_CSV_FILENAME, SCAN_KINDS, SWEEP_MSD_CSV_FILENAME,
    SWEEP_SUMMARY_CSV_FILENAME, SWEEP_TRIALS_CSV_FILENAME, TEMPLATES_FILENAME, TRIAL_SUMMARY_CSV_FILENAME,
)
from experiments import (
    basin_contrast, contact_transition, default_templates_path, emergence_rate, extract_attractor_templates,
    feedback_ratio, glider_travel, lifetime_ordering, relaxation_trend, run_amplitude_sweep,
    run_bound_pair_relaxation, run_cloud7, run_feedback_calibration, run_feedback_comparison, run_polar_scan,
    save_calibration, save_templates, transport_ordering, write_manifest,
)
from export_csv import export_logs, read_frame, write_frame
from logging_config import get_logger, setup_logging
from observables import analyze_logs
from render_svg import FIGURES, render

logger = get_logger(__name__)

# --- Scenario Dispatch ---

def _plot(outputs: list[Path], out_dir: Path, figure: str, csv_path: Path) -> None:
    outputs.append(render(figure, csv_path, out_dir / DIR_PLOTS / f"fig_{figure}_{csv_path.stem}.svg"))


def _export_pair_tables(outputs: list[Path], out_dir: Path, plots: bool) -> None:
    """Per-period pair rows, pair summaries and the cycle-0 projection table of every written log."""
    logs = sorted((out_dir / DIR_LOGS).glob("*.log"))
    if not logs:
        logger.info("No trajectory logs were written; skipping pair tables.")
        return
    written = export_logs(logs, out_dir / DIR_TABLES, msd=False, cycle=0)
    outputs += written
    cycle_csv = out_dir / DIR_TABLES / CYCLE_CSV_FILENAME
    if plots and cycle_csv in written:
        _plot(outputs, out_dir, "5", cycle_csv)


def run_scenario(config: RunConfig, out_dir: Path, n_jobs: int = 1) -> Path:
    """
    Runs the config's scenario and writes its CSVs, plots and manifest.

    Args:
        config: Validated run config.
        out_dir: Output directory.
        n_jobs: Worker processes.

    Returns:
        Path of the run manifest.
    """
    kind = config.scenario.kind
    plots = config.output.plots
    outputs: list[Path] = []
    metrics: dict = {}
    logger.info(f"Running {kind} ({len(config.scenario.seeds)} seed(s), horizon {config.scenario.horizon}, "
                f"config {config_hash(config)}) into {out_dir}")

    if kind == "Cloud7":
        trials, gliders = run_cloud7(config, n_jobs=n_jobs, out_dir=out_dir)
        outputs.append(write_frame(trials, out_dir / TRIAL_SUMMARY_CSV_FILENAME))
        gliders_csv = write_frame(gliders, out_dir / GLIDERS_CSV_FILENAME)
        outputs.append(gliders_csv)
        travel_mean, travel_se, n_long = glider_travel(gliders)
        metrics = {"emergence_rate": emergence_rate(trials, config.scenario.parameters["emergence_periods"]),
                   "travel_w_mean": travel_mean, "travel_w_se": travel_se, "long_lived_gliders": n_long,
                   **lifetime_ordering(gliders)}
        if plots and not gliders.empty:
            _plot(outputs, out_dir, "3c", gliders_csv)
            _plot(outputs, out_dir, "lifetimes", gliders_csv)
        templates = extract_attractor_templates(gliders, config_hash(config)) if not gliders.empty else {}
        if templates:
            save_templates(templates, out_dir / TEMPLATES_FILENAME)
            outputs.append(out_dir / TEMPLATES_FILENAME)

    elif kind == "PolarScanConstantR":
        maps = run_polar_scan(config, n_jobs=n_jobs, out_dir=out_dir)
        cells = pd.concat([m.cells for m in maps], ignore_index=True)
        basin_csv = write_frame(cells, out_dir / BASIN_CSV_FILENAME)
        outputs.append(basin_csv)
        metrics = {f"phase_{m.phase:g}": {**m.counts(), **basin_contrast(m.cells)} for m in maps}
        if plots:
            _plot(outputs, out_dir, "4b", basin_csv)

    elif kind == "AmplitudeSweep":
        trials, summary, msd = run_amplitude_sweep(config, n_jobs=n_jobs, out_dir=out_dir)
        outputs.append(write_frame(trials, out_dir / SWEEP_TRIALS_CSV_FILENAME))
        summary_csv = write_frame(summary, out_dir / SWEEP_SUMMARY_CSV_FILENAME)
        msd_csv = write_frame(msd, out_dir / SWEEP_MSD_CSV_FILENAME)
        outputs += [summary_csv, msd_csv]
        metrics = transport_ordering(summary)
        if plots:
            _plot(outputs, out_dir, "7", summary_csv)
            if not msd.empty:
                _plot(outputs, out_dir, "7", msd_csv)

    elif kind == "BoundPairRelaxation":
        trials, summary = run_bound_pair_relaxation(config, n_jobs=n_jobs, out_dir=out_dir)
        outputs.append(write_frame(trials, out_dir / TRIAL_SUMMARY_CSV_FILENAME))
        summary_csv = write_frame(summary, out_dir / RELAXATION_CSV_FILENAME)
        outputs.append(summary_csv)
        metrics = {"spearman_rho": relaxation_trend(summary), "contact_transition_deg": contact_transition(summary)}
        if plots:
            _plot(outputs, out_dir, "7", summary_csv)

    elif kind == "FeedbackCalibration":
        impulses, band = run_feedback_calibration(config, n_jobs=n_jobs, out_dir=out_dir)
        outputs.append(write_frame(impulses, out_dir / CALIBRATION_CSV_FILENAME))
        median = float(impulses["impulse"].median())
        calibration = out_dir / CALIBRATION_FILENAME
        save_calibration(band, median, calibration)
        outputs.append(calibration)
        metrics = {"median_impulse": median, "impact_band": list(band)}

    elif kind == "FeedbackComparison":
        lifetimes, traces = run_feedback_comparison(config, n_jobs=n_jobs, out_dir=out_dir)
        lifetimes_csv = write_frame(lifetimes, out_dir / FEEDBACK_LIFETIMES_CSV_FILENAME)
        traces_csv = write_frame(traces, out_dir / FEEDBACK_TRACES_CSV_FILENAME)
        outputs += [lifetimes_csv, traces_csv]
        metrics = {"median_lifetime_ratio": feedback_ratio(lifetimes)}
        if plots:
            _plot(outputs, out_dir, "6d", lifetimes_csv)
            _plot(outputs, out_dir, "6c", traces_csv)

    else:
        raise ValueError(f"Unknown scenario kind '{kind}'")

    if config.output.write_logs:
        _export_pair_tables(outputs, out_dir, plots)
    refined = out_dir / REFINED_TEMPLATES_FILENAME
    if "refine_periods" in config.scenario.parameters and refined.is_file():
        outputs.append(refined)

    manifest = write_manifest(config, out_dir, outputs, metrics)
    logger.info(f"\n{kind} finished. Manifest written to {manifest}")
    return manifest


# --- Error Reporting ---

def report_error(error: Exception) -> None:
    """Writes one JSON line per problem to stderr."""
    if isinstance(error, ConfigError):
        for issue in error.issues:
            print(json.dumps({"error": "ConfigError", **issue.as_dict()}), file=sys.stderr)
        return
    print(json.dumps({"error": type(error).__name__, "message": str(error)}), file=sys.stderr)


# --- Commands ---

def do_run(config_path: Path, output_dir: Optional[Path], n_jobs: int, scan_only: bool = False) -> None:
    config = load_config(config_path)
    if scan_only and config.scenario.kind not in SCAN_KINDS:
        raise ValueError(f"'scan' runs {', '.join(SCAN_KINDS)} configs; got {config.scenario.kind}. Use 'run'.")
    run_scenario(config, resolve_output_dir(config, output_dir), n_jobs)


def do_analyze(logs: list[Path], msd: bool, classify: bool, lifetimes: bool, output: Optional[Path],
               export_dir: Optional[Path] = None, cycle: Optional[int] = None) -> None:
    if cycle is not None and export_dir is None:
        raise ValueError("--cycle needs --export-dir: the cycle projection is written as a CSV table.")
    if not (msd or classify or lifetimes):
        classify = lifetimes = True
    frame = analyze_logs(logs, msd=msd, classify=classify, lifetimes=lifetimes)
    if output is not None:
        write_frame(frame, output)
    if export_dir is not None:
        export_logs(logs, export_dir, msd=msd, cycle=cycle)
    print(frame.to_string(index=False))


def do_seed_list(config_path: Optional[Path], count: int, base: int) -> None:
    if config_path is not None:
        seeds = load_config(config_path).scenario.seeds
    else:
        seeds = [int(s) for s in np.random.SeedSequence(base).generate_state(count)]
    for seed in seeds:
        print(seed)


def do_version() -> None:
    print(f"{PACKAGE_NAME} {PACKAGE_VERSION}")
    print(f"log schema {LOG_SCHEMA_VERSION}")


def do_templates(gliders_csv: Path, output: Path) -> None:
    manifest = gliders_csv.parent / MANIFEST_FILENAME
    cfg_hash = json.loads(manifest.read_text(encoding="utf-8")).get("config_hash", "") if manifest.is_file() else ""
    templates = extract_attractor_templates(read_frame(gliders_csv), cfg_hash)
    if not templates:
        raise RuntimeError(f"Error: No C1 or C2 gliders in '{gliders_csv}'. Reason: nothing to extract.")
    save_templates(templates, output)


# --- Main Execution ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Smarticle glider simulator and experiment harness.",
        formatter_class=argparse.RawTextHelpFormatter
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose (DEBUG) logging.")
    parser.add_argument("--log-file", type=Path, help="Also write DEBUG logs to this file.")
    subparsers = parser.add_subparsers(dest="command", required=True, help="The command to execute")

    for name, text in (("run", "Run the scenario described by a config file."),
                       ("scan", "Run a scan scenario (PolarScanConstantR or AmplitudeSweep).")):
        sub = subparsers.add_parser(name, help=text)
        sub.add_argument("config", type=Path, help="YAML run config.")
        sub.add_argument("-o", "--output-dir", type=Path, help="Override the output directory.")
        sub.add_argument("-j", "--jobs", type=int, default=1, help="Worker processes.")

    analyze = subparsers.add_parser("analyze", help="Compute pair observables from trajectory logs.")
    analyze.add_argument("logs", nargs="+", type=Path, help="Trajectory log files.")
    analyze.add_argument("--msd", action="store_true", help="Fit MSD exponents and COM speeds.")
    analyze.add_argument("--classify", action="store_true", help="Classify dyads as C1, C2 or Unbound.")
    analyze.add_argument("--lifetimes", action="store_true", help="Report bound lifetimes.")
    analyze.add_argument("-o", "--output", type=Path, help="Also write the table as CSV.")
    analyze.add_argument("--export-dir", type=Path,
                         help=f"Also write {PERIOD_CSV_FILENAME} and {TRIAL_SUMMARY_CSV_FILENAME} into this directory.")
    analyze.add_argument("--cycle", type=int,
                         help=f"With --export-dir, also write {CYCLE_CSV_FILENAME} for this cycle of pair (0, 1).")

    render_cmd = subparsers.add_parser("render", help="Render an SVG figure from a scenario CSV.")
    render_cmd.add_argument("csv", type=Path, help="Scenario CSV file.")
    render_cmd.add_argument("--fig", required=True, choices=FIGURES, help="Figure to render.")
    render_cmd.add_argument("-o", "--output", type=Path, help="Output SVG path.")

    seeds = subparsers.add_parser("seed-list", help="Print trial seeds.")
    seeds.add_argument("--config", type=Path, help="Print the seeds of this config instead.")
    seeds.add_argument("--count", type=int, default=10, help="Number of seeds to spawn.")
    seeds.add_argument("--base", type=int, default=0, help="Base entropy for the seed sequence.")

    subparsers.add_parser("version", help="Print package and log schema versions.")

    templates = subparsers.add_parser("templates", help="Extract attractor templates from Cloud7 glider records.")
    templates.add_argument("gliders", type=Path, help=f"{GLIDERS_CSV_FILENAME} from a Cloud7 run.")
    templates.add_argument("-o", "--output", type=Path, default=default_templates_path(),
                           help=f"Template file to write (default: templates/{TEMPLATES_FILENAME}).")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(verbose=args.verbose, log_file=args.log_file)

    try:
        if args.command in ("run", "scan"):
            do_run(args.config, args.output_dir, args.jobs, scan_only=args.command == "scan")
        elif args.command == "analyze":
            do_analyze(args.logs, args.msd, args.classify, args.lifetimes, args.output, args.export_dir, args.cycle)
        elif args.command == "render":
            render(args.fig, args.csv, args.output)
        elif args.command == "seed-list":
            do_seed_list(args.config, args.count, args.base)
        elif args.command == "version":
            do_version()
        elif args.command == "templates":
            do_templates(args.gliders, args.output)
    except (ConfigError, RuntimeError, ValueError, OSError) as e:
        logger.debug("Command failed", exc_info=True)
        report_error(e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
