#!/usr/bin/env python3
"""
SVG figures from scenario CSVs.

Figure keys:
  3c         phi histogram of emergent gliders          (gliders.csv)
  4b         basin map per phase                        (basin_map.csv)
  5          delta r and velocity projections per cycle (cycle_projection.csv)
  6c         r(t) traces, open-loop vs feedback         (feedback_traces.csv)
  6d         lifetime distributions per condition       (feedback_lifetimes.csv)
  7          MSD curves, P_b, beta, V_com or steady r   (sweep_msd.csv, sweep_summary.csv, relaxation.csv)
  lifetimes  lifetime vs phi scatter and histogram      (gliders.csv)
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from matplotlib.patches import Patch

from constants import LABEL_COLOURS
from export_csv import read_frame
from logging_config import get_logger, setup_logging

logger = get_logger(__name__)

CLASS_COLOURS = {"C1": "#d95f02", "C2": "#1b9e77"}
FIGURES = ("3c", "4b", "5", "6c", "6d", "7", "lifetimes")


def _require(frame: pd.DataFrame, columns: list[str], figure: str) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise RuntimeError(f"Error: Figure {figure} needs columns {missing}, which the CSV does not have.")


def plot_phi_histogram(frame: pd.DataFrame) -> plt.Figure:
    _require(frame, ["mean_phi"], "3c")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(frame["mean_phi"].dropna(), bins=np.arange(0.0, 361.0, 15.0), color="#555555", edgecolor="white")
    ax.set_xlim(0, 360)
    ax.set_xticks(range(0, 361, 90))
    ax.set_xlabel("relative orientation phi (deg)")
    ax.set_ylabel("gliders")
    ax.set_title("Emergent glider orientations")
    return fig


def plot_basin_map(frame: pd.DataFrame) -> plt.Figure:
    _require(frame, ["phase", "theta", "phi", "label"], "4b")
    phases = sorted(frame["phase"].unique())
    fig, axes = plt.subplots(1, len(phases), figsize=(5 * len(phases), 5), subplot_kw={"projection": "polar"},
                             squeeze=False)
    for ax, phase in zip(axes[0], phases):
        cells = frame[frame["phase"] == phase]
        # theta sets the angular position; phi runs outward as the radius.
        colours = [LABEL_COLOURS[label] for label in cells["label"]]
        ax.scatter(np.radians(cells["theta"]), cells["phi"], c=colours, s=40, marker="s")
        ax.set_ylim(-30, 360)
        ax.set_title(f"phase {phase:g}")
    handles = [Patch(color=colour, label=label) for label, colour in LABEL_COLOURS.items()]
    fig.legend(handles=handles, loc="lower center", ncol=len(handles))
    return fig


def plot_cycle_projection(frame: pd.DataFrame) -> plt.Figure:
    _require(frame, ["phase", "delta_r"], "5")
    has_projection = "v_proj_a" in frame.columns
    fig, axes = plt.subplots(2 if has_projection else 1, 1, figsize=(7, 6 if has_projection else 3.5),
                             sharex=True, squeeze=False)
    ax = axes[0, 0]
    for cycle, rows in frame.groupby("cycle"):
        ax.plot(rows["phase"], rows["delta_r"], label=f"cycle {cycle}")
    ax.axhline(0.0, color="black", linewidth=0.5)
    ax.set_ylabel("delta r (BL)")
    if has_projection:
        ax = axes[1, 0]
        for cycle, rows in frame.groupby("cycle"):
            ax.plot(rows["phase"], rows["v_proj_a"], label=f"robot a, cycle {cycle}")
            ax.plot(rows["phase"], rows["v_proj_b"], linestyle="--", label=f"robot b, cycle {cycle}")
        ax.axhline(0.0, color="black", linewidth=0.5)
        ax.set_ylabel("v . t (m/s)")
        ax.legend(fontsize="small")
    axes[-1, 0].set_xlabel("gait phase")
    return fig


def plot_feedback_traces(frame: pd.DataFrame) -> plt.Figure:
    _require(frame, ["condition", "alpha_max", "seed", "period", "r"], "6c")
    fig, ax = plt.subplots(figsize=(7, 4))
    for (condition, alpha), rows in frame.groupby(["condition", "alpha_max"]):
        first_seed = rows["seed"].min()
        trace = rows[rows["seed"] == first_seed].sort_values("period")
        ax.plot(trace["period"], trace["r"], label=f"{condition} {alpha:g} deg")
    ax.set_xlabel("gait period")
    ax.set_ylabel("r (BL)")
    ax.legend()
    return fig


def plot_feedback_lifetimes(frame: pd.DataFrame) -> plt.Figure:
    _require(frame, ["condition", "alpha_max", "lifetime"], "6d")
    groups = [(f"{condition}\n{alpha:g} deg", rows["lifetime"].to_numpy())
              for (condition, alpha), rows in frame.groupby(["condition", "alpha_max"])]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.boxplot([g[1] for g in groups])
    ax.set_xticks(range(1, len(groups) + 1), labels=[g[0] for g in groups])
    ax.set_ylabel("lifetime (periods)")
    return fig


def plot_transport(frame: pd.DataFrame) -> plt.Figure:
    if "msd" in frame.columns:
        fig, ax = plt.subplots(figsize=(6, 5))
        curves = frame.groupby(["alpha_max", "lag"])["msd"].mean().reset_index()
        for alpha, rows in curves.groupby("alpha_max"):
            ax.loglog(rows["lag"], rows["msd"], label=f"{alpha:g} deg")
        ax.set_xlabel("lag (periods)")
        ax.set_ylabel("MSD (m^2)")
        ax.legend(fontsize="small")
        return fig
    if "r_mean" in frame.columns:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.errorbar(frame["alpha_max"], frame["r_mean"], yerr=frame.get("r_std"), fmt="o-", capsize=4)
        ax.set_xlabel("alpha_max (deg)")
        ax.set_ylabel("steady-state r (BL)")
        return fig

    _require(frame, ["alpha_max", "p_bound_at_end", "p_bound_throughout"], "7")
    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    alpha = frame["alpha_max"]
    for split, marker in (("bound_at_end", "o"), ("bound_throughout", "s")):
        p = frame[f"p_{split}"]
        err = [p - frame[f"p_{split}_low"], frame[f"p_{split}_high"] - p]
        axes[0].errorbar(alpha, p, yerr=err, fmt=f"{marker}-", capsize=3, label=split.replace("_", " "))
    axes[0].set_ylabel("P_b")
    axes[0].set_ylim(0, 1.05)
    axes[0].legend()
    if "beta_mean" in frame.columns:
        axes[1].errorbar(alpha, frame["beta_mean"], yerr=frame["beta_std"], fmt="o-", capsize=3)
        axes[1].axhline(1.0, color="grey", linestyle=":")
        axes[1].axhline(2.0, color="grey", linestyle=":")
    axes[1].set_ylabel("beta")
    if "v_com_mean" in frame.columns:
        axes[2].errorbar(alpha, frame["v_com_mean"], yerr=frame["v_com_std"], fmt="o-", capsize=3)
    axes[2].set_ylabel("V_com (BL/period)")
    for ax in axes:
        ax.set_xlabel("alpha_max (deg)")
    return fig


def plot_lifetimes(frame: pd.DataFrame) -> plt.Figure:
    _require(frame, ["class", "lifetime", "mean_phi"], "lifetimes")
    fig, (scatter, hist) = plt.subplots(1, 2, figsize=(11, 4))
    bins = np.arange(0, frame["lifetime"].max() + 11, 10) if not frame.empty else 10
    for name, colour in CLASS_COLOURS.items():
        rows = frame[frame["class"] == name]
        scatter.scatter(rows["mean_phi"], rows["lifetime"], color=colour, label=name, s=18)
        hist.hist(rows["lifetime"], bins=bins, color=colour, alpha=0.6, label=name)
    scatter.set_xlim(0, 360)
    scatter.set_xlabel("phi (deg)")
    scatter.set_ylabel("lifetime (periods)")
    scatter.legend()
    hist.set_yscale("log")
    hist.set_xlabel("lifetime (periods)")
    hist.set_ylabel("gliders")
    return fig


RENDERERS: dict[str, Callable[[pd.DataFrame], plt.Figure]] = {
    "3c": plot_phi_histogram,
    "4b": plot_basin_map,
    "5": plot_cycle_projection,
    "6c": plot_feedback_traces,
    "6d": plot_feedback_lifetimes,
    "7": plot_transport,
    "lifetimes": plot_lifetimes,
}


def render(figure: str, csv_path: Path, out_path: Optional[Path] = None) -> Path:
    """
    Renders one figure from a CSV to SVG.

    Args:
        figure: Figure key (see FIGURES).
        csv_path: Input table.
        out_path: SVG path (default: next to the CSV, named after the figure).

    Returns:
        The written SVG path.

    Raises:
        RuntimeError: On an unknown figure, unreadable CSV or missing columns.
    """
    if figure not in RENDERERS:
        raise RuntimeError(f"Error: Unknown figure '{figure}'. Known figures: {', '.join(FIGURES)}")
    frame = read_frame(csv_path)
    out_path = out_path or csv_path.with_name(f"fig_{figure}_{csv_path.stem}.svg")
    fig = RENDERERS[figure](frame)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out_path, format="svg", bbox_inches="tight")
    except OSError as e:
        raise RuntimeError(f"Error: Could not write '{out_path}'. Reason: {e}")
    finally:
        plt.close(fig)
    logger.info(f"  - Rendered figure {figure} to {out_path}")
    return out_path


def main() -> None:
    """Parses command-line arguments and renders a figure."""
    parser = argparse.ArgumentParser(description="Renders SVG figures from smarticle scenario CSVs.")
    parser.add_argument("csv", type=Path, help="Scenario CSV file.")
    parser.add_argument("--fig", required=True, choices=FIGURES, help="Figure to render.")
    parser.add_argument("-o", "--output", type=Path, help="Output SVG path.")
    args = parser.parse_args()
    setup_logging()

    try:
        render(args.fig, args.csv, args.output)
    except RuntimeError as e:
        logger.error(str(e))
        sys.exit(1)


if __name__ == "__main__":
    main()
