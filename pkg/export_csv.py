#!/usr/bin/env python3
"""
CSV exports of scenario results and per-period pair observables.

Two schemas come straight from trajectory logs:
  pair_periods.csv   one row per (trial, pair, period): r, theta, phi, bound
  trial_summary.csv  one row per (trial, pair): class, lifetime, beta, V_com

Scenario tables (gliders, basin maps, sweep summaries, ...) are DataFrames
built by the scenario runners and written through write_frame.
"""

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from constants import CYCLE_CSV_FILENAME, PERIOD_CSV_FILENAME, TRIAL_SUMMARY_CSV_FILENAME
from logging_config import get_logger, setup_logging
from observables import all_pairs, analyze_logs, bound_mask, relative_series, transport_projection
from trajectory_log import TrajectoryLog, load_log

logger = get_logger(__name__)

PERIOD_COLUMNS = ["trial", "robot_a", "robot_b", "period", "r", "theta", "phi", "bound"]


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    """
    Writes a DataFrame as UTF-8 CSV without the index.

    Raises:
        RuntimeError: If the file cannot be written.
    """
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, encoding="utf-8")
    except OSError as e:
        raise RuntimeError(f"Error: Could not write '{path}'. Reason: {e}")
    logger.info(f"  - Wrote {path.name} ({len(frame)} rows)")
    return path


def read_frame(path: Path) -> pd.DataFrame:
    """
    Reads a CSV written by write_frame.

    Raises:
        RuntimeError: If the file is missing or unreadable.
    """
    if not path.is_file():
        raise RuntimeError(f"Error: CSV file not found at '{path}'.")
    try:
        return pd.read_csv(path, encoding="utf-8")
    except (OSError, ValueError) as e:
        raise RuntimeError(f"Error: Could not read '{path}'. Reason: {e}")


def period_frame(log: TrajectoryLog, pair: tuple[int, int], trial: str) -> pd.DataFrame:
    """Relative coordinates at each period boundary and the period's bound flag."""
    r, theta, phi = relative_series(log, pair)
    spp = log.samples_per_period
    periods = np.arange(log.n_periods)
    return pd.DataFrame({
        "trial": trial,
        "robot_a": pair[0],
        "robot_b": pair[1],
        "period": periods,
        "r": r[periods * spp],
        "theta": theta[periods * spp],
        "phi": phi[periods * spp],
        "bound": bound_mask(log, pair),
    }, columns=PERIOD_COLUMNS)


def cycle_frame(log: TrajectoryLog, pair: tuple[int, int], cycle: int) -> pd.DataFrame:
    """Separation change and velocity projections through one cycle, for the binding-mechanism figure."""
    r, _, _ = relative_series(log, pair)
    spp = log.samples_per_period
    start = cycle * spp
    projection = transport_projection(log, pair, cycle)
    n = min(spp, log.n_samples - 1 - start)
    end = start + n
    frame = pd.DataFrame({
        "cycle": cycle,
        "time": log.times[start:end] - log.times[start],
        "phase": np.arange(n) / spp,
        "delta_r": r[start + 1:end + 1] - r[start:end],
    })
    if projection is not None:
        frame["v_proj_a"] = projection.projections[0]
        frame["v_proj_b"] = projection.projections[1]
    return frame


def export_logs(paths: Sequence[Path], out_dir: Path, msd: bool = True,
                cycle: Optional[int] = None) -> list[Path]:
    """
    Writes per-period rows and per-pair summaries for a set of logs.

    Args:
        paths: Trajectory logs.
        out_dir: Output directory.
        msd: Include MSD exponents and COM speed in the summary.
        cycle: Also export the cycle projection table of the first pair at this cycle
            (logs with a single robot or fewer periods are skipped).

    Returns:
        Paths of the written CSVs.
    """
    frames = []
    cycles = []
    for path in paths:
        log = load_log(path)
        for pair in all_pairs(log.n_robots):
            frames.append(period_frame(log, pair, path.stem))
        if cycle is not None:
            if log.n_robots < 2 or cycle >= log.n_periods:
                logger.debug(f"No cycle {cycle} projection for {path.name}: {log.n_robots} robot(s), "
                             f"{log.n_periods} period(s).")
            else:
                cycles.append(cycle_frame(log, (0, 1), cycle).assign(trial=path.stem))
    written = [
        write_frame(pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=PERIOD_COLUMNS),
                    out_dir / PERIOD_CSV_FILENAME),
        write_frame(analyze_logs(paths, msd=msd), out_dir / TRIAL_SUMMARY_CSV_FILENAME),
    ]
    if cycles:
        written.append(write_frame(pd.concat(cycles, ignore_index=True), out_dir / CYCLE_CSV_FILENAME))
    return written


def main() -> None:
    """Parses command-line arguments and exports CSV tables from logs."""
    parser = argparse.ArgumentParser(
        description="Exports per-period and per-pair CSV tables from smarticle trajectory logs.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    parser.add_argument("logs", nargs="+", type=Path, help="Trajectory log files.")
    parser.add_argument("-o", "--output-dir", type=Path, default=Path("csv_out"), help="Directory for the CSV files.")
    parser.add_argument("--cycle", type=int, help="Also export the binding-mechanism table for this cycle.")
    parser.add_argument("--no-msd", action="store_true", help="Skip MSD fits in the summary.")
    args = parser.parse_args()
    setup_logging()

    try:
        export_logs(args.logs, args.output_dir, msd=not args.no_msd, cycle=args.cycle)
    except RuntimeError as e:
        logger.error(str(e))
        sys.exit(1)


if __name__ == "__main__":
    main()
