#!/usr/bin/env python3
"""
Pair observables computed from trajectory logs.

Relative coordinates (r, theta, phi) of a dyad, bound periods and lifetimes,
the separation-change series and its collision segmentation, the stepping
vector and velocity projections, MSD exponents, binding probabilities and
centre-of-mass speed. Everything here is a pure function of a log.

Conventions: r is in body lengths (BL); theta is the polar angle of B in A's
body frame, whose x-axis is A's heading normal; phi = heading_B - heading_A.
Both angles are reported in degrees on [0, 360).
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import binomtest, circmean, circstd, linregress, median_abs_deviation

from constants import (
    BOUND_GRACE_PERIODS, DELTA_R_MAD_K, GLIDER_THRESHOLD_PERIODS, MIN_BINDING_TRIALS,
    MIN_CLASSIFY_PERIODS, MIN_MSD_CYCLES, MSD_SKIP_LEADING_LAGS, MSD_TAIL_FRACTION,
    PHI_BAND_HALF_WIDTH_DEG,
)
from geometry import Face
from logging_config import get_logger, setup_logging
from trajectory_log import TrajectoryLog, load_log

logger = get_logger(__name__)

ARM_SIDE = {
    Face.ARM_OUTER_L: "L", Face.ARM_INNER_L: "L",
    Face.ARM_OUTER_R: "R", Face.ARM_INNER_R: "R",
}


class DyadClass(str, Enum):
    C1 = "C1"
    C2 = "C2"
    UNBOUND = "Unbound"


@dataclass
class PairObservables:
    """Per-sample relative coordinates and per-period binding of one robot pair."""
    pair: tuple[int, int]
    r: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    delta_r: np.ndarray
    bound_mask: np.ndarray
    lifetime: int
    run_start: int
    dyad_class: DyadClass
    mean_phi: float


@dataclass
class DeltaRSeries:
    delta_r: np.ndarray
    threshold: float
    attraction_events: list[tuple[int, int]]
    repulsion_events: list[tuple[int, int]]


@dataclass
class TransportProjection:
    """Velocity projections onto the stepping vector over one cycle, one row per robot."""
    cycle: int
    stepping_vector: np.ndarray
    times: np.ndarray
    projections: np.ndarray
    displacements: np.ndarray


@dataclass
class MsdResult:
    lags: np.ndarray
    msd: np.ndarray
    beta: float
    intercept: float
    fit_lags: np.ndarray


@dataclass
class TransportStats:
    stepping_vectors: list[Optional[np.ndarray]]
    msd: Optional[MsdResult]
    beta: float
    v_com: float
    displacement: float


@dataclass
class ContactCount:
    """Which arms and which link kinds touched during one cycle."""
    cycle: int
    arms_in_contact: int
    arm_body: bool
    arm_arm: bool


# --- Relative coordinates ---

def _pose(state) -> tuple[float, float, float]:
    if hasattr(state, "position"):
        return float(state.position[0]), float(state.position[1]), float(state.heading)
    return float(state[0]), float(state[1]), float(state[2])


def wrap_degrees(angle: float | np.ndarray) -> float | np.ndarray:
    """Wraps degrees onto [0, 360)."""
    wrapped = np.mod(angle, 360.0)
    if np.ndim(wrapped) == 0:
        return 0.0 if wrapped >= 360.0 else float(wrapped)
    wrapped[wrapped >= 360.0] = 0.0
    return wrapped


def relative_coords(state_a, state_b, body_length_unit: float) -> tuple[float, float, float]:
    """
    Relative position and orientation of robot B seen from robot A.

    Args:
        state_a, state_b: SmarticleState objects or (x, y, heading) triples.
        body_length_unit: BL in metres.

    Returns:
        (r in BL, theta in degrees or NaN when the positions coincide, phi in degrees).
    """
    xa, ya, ha = _pose(state_a)
    xb, yb, hb = _pose(state_b)
    dx, dy = xb - xa, yb - ya
    r = math.hypot(dx, dy) / body_length_unit
    phi = wrap_degrees(math.degrees(hb - ha))
    if r == 0.0:
        return 0.0, math.nan, phi
    along = dx * math.cos(ha) + dy * math.sin(ha)
    across = -dx * math.sin(ha) + dy * math.cos(ha)
    theta = wrap_degrees(math.degrees(math.atan2(across, along)))
    return r, theta, phi


def relative_series(log: TrajectoryLog, pair: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized relative_coords over every sample of a log."""
    a, b = pair
    xa, ya, ha = log.states[:, a, 0], log.states[:, a, 1], log.states[:, a, 2]
    xb, yb, hb = log.states[:, b, 0], log.states[:, b, 1], log.states[:, b, 2]
    dx, dy = xb - xa, yb - ya
    r = np.hypot(dx, dy) / log.body_length_unit
    along = dx * np.cos(ha) + dy * np.sin(ha)
    across = -dx * np.sin(ha) + dy * np.cos(ha)
    theta = wrap_degrees(np.degrees(np.arctan2(across, along)))
    theta = np.where(r == 0.0, np.nan, theta)
    phi = wrap_degrees(np.degrees(hb - ha))
    return r, theta, phi


# --- Classification and lifetimes ---

def circular_mean_deg(angles: np.ndarray) -> float:
    finite = np.asarray(angles, dtype=float)
    finite = finite[np.isfinite(finite)]
    if finite.size == 0:
        return math.nan
    return float(wrap_degrees(circmean(finite, high=360.0, low=0.0)))


def _angular_distance(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def classify_phi(mean_phi: float, band: float = PHI_BAND_HALF_WIDTH_DEG) -> DyadClass:
    """C1 near 180 degrees, C2 near 0 degrees, Unbound elsewhere."""
    if not math.isfinite(mean_phi):
        return DyadClass.UNBOUND
    if _angular_distance(mean_phi, 180.0) <= band:
        return DyadClass.C1
    if _angular_distance(mean_phi, 0.0) <= band:
        return DyadClass.C2
    return DyadClass.UNBOUND


def classify_dyad(phi: np.ndarray, bound_mask: np.ndarray,
                  band: float = PHI_BAND_HALF_WIDTH_DEG) -> DyadClass:
    """
    Classifies a dyad over a window of whole periods.

    Args:
        phi: Relative orientation samples (degrees) covering the window.
        bound_mask: One flag per period of the window.
        band: Half-width of the C1 and C2 bands in degrees.

    Returns:
        C1, C2 or Unbound. Only samples from bound periods enter the mean;
        a window without any bound period is Unbound.

    Raises:
        ValueError: If the window is shorter than three periods.
    """
    periods = len(bound_mask)
    if periods < MIN_CLASSIFY_PERIODS:
        raise ValueError(f"classify_dyad needs a window of at least {MIN_CLASSIFY_PERIODS} periods, got {periods}")
    mask = np.asarray(bound_mask, dtype=bool)
    if not mask.any():
        return DyadClass.UNBOUND
    phi = np.asarray(phi, dtype=float)
    per_period = len(phi) // periods
    if per_period == 0:
        raise ValueError(f"{len(phi)} phi samples cannot cover {periods} periods")
    samples = phi[: per_period * periods].reshape(periods, per_period)[mask]
    return classify_phi(circular_mean_deg(samples.ravel()), band)


def bound_mask(log: TrajectoryLog, pair: tuple[int, int], horizon: Optional[int] = None) -> np.ndarray:
    """Per-period flags: True when the pair has at least one contact event in that period."""
    periods = log.n_periods if horizon is None else horizon
    if periods > log.n_periods:
        raise ValueError(f"Log covers {log.n_periods} periods, fewer than the horizon {periods}")
    mask = np.zeros(periods, dtype=bool)
    for event in log.pair_events(*pair):
        index = log.period_of(event.time)
        if index < periods:
            mask[index] = True
    return mask


def longest_bound_run(mask: np.ndarray, grace: int = BOUND_GRACE_PERIODS) -> tuple[int, int]:
    """
    Longest run of bound periods, bridging gaps of at most ``grace`` unbound periods.

    Returns:
        (start period, length); (0, 0) when no period is bound.
    """
    best_start, best_length = 0, 0
    start: Optional[int] = None
    last_bound = -1
    for index, flag in enumerate(mask):
        if not flag:
            continue
        if start is None or index - last_bound - 1 > grace:
            start = index
        last_bound = index
        length = last_bound - start + 1
        if length > best_length:
            best_start, best_length = start, length
    return best_start, best_length


def bound_and_lifetime(log: TrajectoryLog, pair: tuple[int, int], horizon: Optional[int] = None,
                       grace: int = BOUND_GRACE_PERIODS) -> tuple[np.ndarray, int]:
    """
    Bound mask and lifetime (longest bound run, in periods) of a pair.

    Raises:
        ValueError: If the log is shorter than the horizon.
    """
    mask = bound_mask(log, pair, horizon)
    _, lifetime = longest_bound_run(mask, grace)
    return mask, lifetime


def delta_r_series(r: np.ndarray, k: float = DELTA_R_MAD_K) -> DeltaRSeries:
    """
    First difference of the separation with attraction/repulsion segmentation.

    Attraction events are maximal runs of samples with delta_r < -k * MAD,
    repulsion events runs with delta_r > k * MAD. Events are (start, end)
    index pairs into delta_r with end exclusive.
    """
    r = np.asarray(r, dtype=float)
    delta = np.diff(r)
    if delta.size == 0:
        return DeltaRSeries(delta, 0.0, [], [])
    threshold = k * float(median_abs_deviation(delta, nan_policy="omit"))
    return DeltaRSeries(delta, threshold, _segments(delta < -threshold), _segments(delta > threshold))


def _segments(flags: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate(([False], flags, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def events_per_cycle(events: Sequence[tuple[int, int]], samples_per_period: int, n_periods: int) -> np.ndarray:
    """Counts segmentation events by the cycle their first sample falls in."""
    counts = np.zeros(n_periods, dtype=int)
    for start, _ in events:
        cycle = start // samples_per_period
        if cycle < n_periods:
            counts[cycle] += 1
    return counts


# --- Transport ---

def com_track(log: TrajectoryLog, pair: tuple[int, int]) -> np.ndarray:
    """Mass-weighted centre of the pair at every sample, shape (n_samples, 2)."""
    a, b = pair
    ma, mb = log.masses[a], log.masses[b]
    return (ma * log.states[:, a, :2] + mb * log.states[:, b, :2]) / (ma + mb)


def _cycle_bounds(log: TrajectoryLog, cycle: int) -> tuple[int, int]:
    if not 0 <= cycle < log.n_periods:
        raise ValueError(f"Cycle {cycle} is outside the log's {log.n_periods} periods")
    start = cycle * log.samples_per_period
    end = min(start + log.samples_per_period, log.n_samples - 1)
    return start, end


def stepping_vector(log: TrajectoryLog, pair: tuple[int, int], cycle: int) -> Optional[np.ndarray]:
    """
    Unit displacement of the dyad COM over one gait cycle.

    The last cycle of a log ends at its final sample. Returns None when the
    COM did not move.
    """
    start, end = _cycle_bounds(log, cycle)
    com = com_track(log, pair)
    displacement = com[end] - com[start]
    norm = float(np.hypot(*displacement))
    if norm < 1e-15:
        return None
    return displacement / norm


def circular_spread_deg(vectors: Iterable[Optional[np.ndarray]]) -> float:
    """Circular standard deviation (degrees) of the directions of defined stepping vectors."""
    angles = [math.atan2(v[1], v[0]) for v in vectors if v is not None]
    if not angles:
        return math.nan
    return float(np.degrees(circstd(angles, high=math.pi, low=-math.pi)))


def transport_projection(log: TrajectoryLog, pair: tuple[int, int], cycle: int) -> Optional[TransportProjection]:
    """
    Projects each robot's velocity onto the cycle's stepping vector.

    Velocities are forward differences between consecutive samples, so the
    projections integrate exactly to each robot's displacement along the
    stepping vector. Returns None when the stepping vector is undefined.
    """
    t_hat = stepping_vector(log, pair, cycle)
    if t_hat is None:
        return None
    start, end = _cycle_bounds(log, cycle)
    interval = log.sample_interval
    rows = []
    for robot in pair:
        positions = log.states[start:end + 1, robot, :2]
        velocity = np.diff(positions, axis=0) / interval
        rows.append(velocity @ t_hat)
    projections = np.vstack(rows)
    return TransportProjection(
        cycle=cycle,
        stepping_vector=t_hat,
        times=log.times[start:end],
        projections=projections,
        displacements=projections.sum(axis=1) * interval,
    )


def msd_and_beta(trajectories: np.ndarray | Sequence[np.ndarray], time_step: float = 1.0,
                 n_lags: int = 40, min_cycles: int = MIN_MSD_CYCLES) -> MsdResult:
    """
    Mean-square displacement and its power-law exponent.

    For a single trajectory this is the time-averaged MSD. With several
    trajectories the ensemble drift is removed: sigma^2 = <|dx|^2> - |<dx>|^2
    averaged over every window of every trajectory.

    Args:
        trajectories: One (n, 2) array, or a list of them (one point per cycle).
        time_step: Time between points.
        n_lags: Number of log-spaced lags.
        min_cycles: Minimum number of steps in the shortest trajectory.

    Returns:
        MsdResult with the slope of log sigma^2 vs log t over the central
        decade of the usable lags (first two and last 10% excluded).

    Raises:
        ValueError: On too-short input or an MSD that is zero everywhere.
    """
    tracks = [np.asarray(trajectories, dtype=float)] if isinstance(trajectories, np.ndarray) and np.ndim(trajectories) == 2 \
        else [np.asarray(t, dtype=float) for t in trajectories]
    if not tracks:
        raise ValueError("msd_and_beta needs at least one trajectory")
    steps = min(len(t) for t in tracks) - 1
    if steps < min_cycles:
        raise ValueError(f"Trajectory too short for an MSD fit: {steps} steps, need at least {min_cycles}")

    lags = np.unique(np.round(np.logspace(0.0, math.log10(steps), n_lags)).astype(int))
    lags = lags[(lags >= 1) & (lags <= steps)]
    if lags[-1] / lags[0] < 10.0:
        raise ValueError(f"Lags span less than one decade ({lags[0]}..{lags[-1]})")

    msd = np.zeros(len(lags))
    for index, lag in enumerate(lags):
        displacements = np.concatenate([t[lag:] - t[:-lag] for t in tracks])
        sq = float(np.mean(np.sum(displacements ** 2, axis=1)))
        if len(tracks) > 1:
            drift = displacements.mean(axis=0)
            sq -= float(drift @ drift)
        msd[index] = max(sq, 0.0)
    if not np.any(msd > 0.0):
        raise ValueError("MSD is zero at every lag; the exponent is undefined")

    usable = lags[MSD_SKIP_LEADING_LAGS:]
    usable = usable[usable <= (1.0 - MSD_TAIL_FRACTION) * lags[-1]]
    if len(usable) < 2:
        usable = lags
    lo, hi = float(usable[0]), float(usable[-1])
    if hi / lo > 10.0:
        centre = math.sqrt(lo * hi)
        lo, hi = centre / math.sqrt(10.0), centre * math.sqrt(10.0)
    window = (lags >= lo - 1e-9) & (lags <= hi + 1e-9) & (msd > 0.0)
    if window.sum() < 2:
        raise ValueError("Fewer than two positive MSD points inside the fit window")

    fit = linregress(np.log(lags[window] * time_step), np.log(msd[window]))
    return MsdResult(lags=lags * time_step, msd=msd, beta=float(fit.slope),
                     intercept=float(fit.intercept), fit_lags=lags[window] * time_step)


def periodic_com(log: TrajectoryLog, pair: tuple[int, int], start_period: int = 0,
                 end_period: Optional[int] = None) -> np.ndarray:
    """Dyad COM sampled once per period boundary over [start_period, end_period]."""
    end_period = log.n_periods if end_period is None else end_period
    indices = [min(p * log.samples_per_period, log.n_samples - 1) for p in range(start_period, end_period + 1)]
    return com_track(log, pair)[indices]


def travel_speed(start: np.ndarray, end: np.ndarray, elapsed_periods: float,
                 body_length_unit: float, body_width: float) -> tuple[float, float]:
    """(speed in BL/period, displacement in body widths) between two COM positions."""
    distance = float(np.hypot(*(np.asarray(end) - np.asarray(start))))
    if elapsed_periods <= 0.0:
        return 0.0, distance / body_width
    return distance / body_length_unit / elapsed_periods, distance / body_width


def com_speed(log: TrajectoryLog, pair: tuple[int, int], start_period: int = 0,
              end_period: Optional[int] = None, body_width: Optional[float] = None) -> tuple[float, float]:
    """
    Net COM speed and displacement of a pair between two period boundaries.

    Args:
        log: Trajectory log.
        pair: Robot indices.
        start_period: First period boundary (default 0).
        end_period: Last period boundary (default: end of log).
        body_width: W in metres; defaults to the log's BL.

    Returns:
        (V_com in BL per period, displacement in W).
    """
    end_period = log.n_periods if end_period is None else end_period
    k_start = min(start_period * log.samples_per_period, log.n_samples - 1)
    k_end = min(end_period * log.samples_per_period, log.n_samples - 1)
    com = com_track(log, pair)
    elapsed = (k_end - k_start) / log.samples_per_period
    return travel_speed(com[k_start], com[k_end], elapsed, log.body_length_unit,
                        body_width or log.body_length_unit)


def binding_probability(outcomes: pd.DataFrame, group: str = "alpha_max",
                        confidence: float = 0.95) -> pd.DataFrame:
    """
    Binding probability per amplitude with Wilson intervals.

    Args:
        outcomes: One row per trial with boolean columns ``bound_at_end`` and
            ``bound_throughout`` plus the grouping column.
        group: Column to group by.
        confidence: Interval confidence level.

    Returns:
        DataFrame indexed by the group with trial counts, both P_b splits and
        their interval bounds.

    Raises:
        ValueError: If there are no trials.
    """
    if outcomes.empty:
        raise ValueError("binding_probability needs at least one trial")
    rows = []
    for value, frame in outcomes.groupby(group, sort=True):
        n = len(frame)
        if n < MIN_BINDING_TRIALS:
            logger.warning(f"Only {n} trials at {group}={value}; at least {MIN_BINDING_TRIALS} are expected.")
        row = {group: value, "n_trials": n}
        for split in ("bound_at_end", "bound_throughout"):
            k = int(frame[split].astype(bool).sum())
            interval = binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
            row[f"p_{split}"] = k / n
            row[f"p_{split}_low"] = float(interval.low)
            row[f"p_{split}_high"] = float(interval.high)
        rows.append(row)
    return pd.DataFrame(rows).set_index(group)


# --- Contact diagnostics ---

def contact_counts(log: TrajectoryLog, pair: tuple[int, int]) -> list[ContactCount]:
    """Distinct arms in contact and link-kind flags for every cycle of a pair."""
    arms: list[set] = [set() for _ in range(log.n_periods)]
    arm_body = [False] * log.n_periods
    arm_arm = [False] * log.n_periods
    for event in log.pair_events(*pair):
        cycle = log.period_of(event.time)
        if cycle >= log.n_periods:
            continue
        kinds = []
        for robot, face in zip(event.robots, event.face_ids):
            if face in ARM_SIDE:
                arms[cycle].add((robot, ARM_SIDE[face]))
                kinds.append("arm")
            else:
                kinds.append("body")
        if sorted(kinds) == ["arm", "body"]:
            arm_body[cycle] = True
        elif kinds == ["arm", "arm"]:
            arm_arm[cycle] = True
    return [ContactCount(c, len(arms[c]), arm_body[c], arm_arm[c]) for c in range(log.n_periods)]


# --- Assembled observables ---

def pair_observables(log: TrajectoryLog, pair: tuple[int, int], horizon: Optional[int] = None,
                     grace: int = BOUND_GRACE_PERIODS,
                     threshold: int = GLIDER_THRESHOLD_PERIODS) -> PairObservables:
    """
    Everything the analysis layer reports for one pair of one trial.

    The class is taken over the longest bound run and is Unbound whenever
    the lifetime is below the glider threshold.
    """
    r, theta, phi = relative_series(log, pair)
    mask = bound_mask(log, pair, horizon)
    start, lifetime = longest_bound_run(mask, grace)
    spp = log.samples_per_period
    mean_phi = math.nan
    dyad_class = DyadClass.UNBOUND
    if lifetime > 0:
        window_phi = phi[start * spp:(start + lifetime) * spp]
        mean_phi = circular_mean_deg(window_phi)
        if lifetime >= threshold:
            dyad_class = classify_dyad(window_phi, mask[start:start + lifetime])
    return PairObservables(
        pair=pair, r=r, theta=theta, phi=phi, delta_r=np.diff(r), bound_mask=mask,
        lifetime=lifetime, run_start=start, dyad_class=dyad_class, mean_phi=mean_phi,
    )


def transport_stats(log: TrajectoryLog, pair: tuple[int, int], start_period: int = 0,
                    end_period: Optional[int] = None, body_width: Optional[float] = None) -> TransportStats:
    """Stepping vectors, MSD exponent and COM speed over a bound stretch of a trial."""
    end_period = log.n_periods if end_period is None else end_period
    vectors = [stepping_vector(log, pair, c) for c in range(start_period, min(end_period, log.n_periods))]
    try:
        msd = msd_and_beta(periodic_com(log, pair, start_period, end_period))
        beta = msd.beta
    except ValueError as e:
        logger.debug(f"No MSD exponent for pair {pair}: {e}")
        msd, beta = None, math.nan
    v_com, displacement = com_speed(log, pair, start_period, end_period, body_width)
    return TransportStats(stepping_vectors=vectors, msd=msd, beta=beta, v_com=v_com, displacement=displacement)


def all_pairs(n_robots: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n_robots) for j in range(i + 1, n_robots)]


def analyze_logs(paths: Sequence[Path], msd: bool = False, classify: bool = True,
                 lifetimes: bool = True) -> pd.DataFrame:
    """
    One summary row per (log, pair) for the ``analyze`` command.

    Raises:
        SchemaMismatchError: If a log was written under another schema.
        RuntimeError: If a log cannot be read.
    """
    rows = []
    for path in paths:
        log = load_log(path)
        for pair in all_pairs(log.n_robots):
            obs = pair_observables(log, pair)
            row = {"log": path.name, "seed": log.seed, "robot_a": pair[0], "robot_b": pair[1]}
            if lifetimes:
                row["lifetime"] = obs.lifetime
                row["run_start"] = obs.run_start
                row["censored"] = obs.lifetime > 0 and obs.run_start + obs.lifetime >= log.n_periods
            if classify:
                row["class"] = obs.dyad_class.value
                row["mean_phi"] = obs.mean_phi
            if msd:
                end = obs.run_start + obs.lifetime
                stats = transport_stats(log, pair, obs.run_start, end)
                row["beta"] = stats.beta
                row["v_com"] = stats.v_com
                row["displacement_w"] = stats.displacement
            rows.append(row)
    return pd.DataFrame(rows)


def main() -> None:
    """Prints per-pair observables of trajectory logs."""
    parser = argparse.ArgumentParser(description="Computes pair observables from smarticle trajectory logs.")
    parser.add_argument("logs", nargs="+", type=Path, help="Trajectory log files.")
    parser.add_argument("--msd", action="store_true", help="Fit MSD exponents over each pair's longest bound run.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose (DEBUG) logging.")
    args = parser.parse_args()
    setup_logging(verbose=args.verbose)

    try:
        frame = analyze_logs(args.logs, msd=args.msd)
    except RuntimeError as e:
        logger.error(str(e))
        sys.exit(1)
    print(frame.to_string(index=False))


if __name__ == "__main__":
    main()
