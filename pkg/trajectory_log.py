#!/usr/bin/env python3
"""
In-memory TrajectoryLog and its line-delimited on-disk format.

A log file is plain text. The first line is a header of ``key=value`` tokens
(schema version, config hash, seed and the sampling contract); every other
line is either a state sample::

    t,robot_id,x,y,heading,alpha1,alpha2

or a contact event::

    t,EVT,i,j,face_i,face_j,impulse,nx,ny

Floats are written with ``repr`` (shortest round-trip decimal), so identical
runs produce byte-identical files on every platform.
"""

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, TextIO

import numpy as np
from packaging.version import InvalidVersion, Version

from constants import LOG_MAGIC, LOG_SCHEMA_VERSION
from geometry import Face
from logging_config import get_logger, setup_logging

logger = get_logger(__name__)

STATE_COLUMNS = ("x", "y", "heading", "alpha1", "alpha2")
EVENT_TAG = "EVT"


class SchemaMismatchError(RuntimeError):
    """Raised when a log was written under a different schema version than this analyzer reads."""


@dataclass(frozen=True)
class ContactEvent:
    """Summed contact between two robots on one face pair over one control tick."""
    time: float
    robots: tuple[int, int]
    face_ids: tuple[Face, Face]
    impulse_magnitude: float
    normal: tuple[float, float]

    def __post_init__(self) -> None:
        if self.impulse_magnitude < 0.0:
            raise ValueError(f"ContactEvent impulse must be >= 0, got {self.impulse_magnitude}")

    def involves(self, a: int, b: int) -> bool:
        return set(self.robots) == {a, b}


@dataclass
class TrajectoryLog:
    """
    Time-stamped robot states and contact events of one trial.

    ``states`` has shape (n_samples, n_robots, 5) with columns
    x, y, heading, alpha1, alpha2 (metres, radians). Sample k is taken at
    time k * period / samples_per_period.
    """
    config_hash: str
    seed: int
    period: float
    samples_per_period: int
    dt: float
    body_length_unit: float
    masses: tuple[float, ...]
    times: np.ndarray
    states: np.ndarray
    events: list[ContactEvent] = field(default_factory=list)
    schema_version: str = LOG_SCHEMA_VERSION
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_robots(self) -> int:
        return int(self.states.shape[1])

    @property
    def n_samples(self) -> int:
        return int(self.states.shape[0])

    @property
    def sample_interval(self) -> float:
        return self.period / self.samples_per_period

    @property
    def n_periods(self) -> int:
        return self.n_samples // self.samples_per_period

    def period_of(self, t: float) -> int:
        """Gait period index containing time t, robust to float rounding of tick times."""
        return int(round(t / self.sample_interval)) // self.samples_per_period

    def pair_events(self, a: int, b: int) -> list[ContactEvent]:
        return [event for event in self.events if event.involves(a, b)]


def _fmt(value: float) -> str:
    return repr(float(value))


def format_header(log: TrajectoryLog) -> str:
    masses = ";".join(_fmt(m) for m in log.masses)
    return (f"{LOG_MAGIC} schema={log.schema_version} config={log.config_hash} seed={log.seed} "
            f"robots={log.n_robots} samples={log.n_samples} period={_fmt(log.period)} "
            f"samples_per_period={log.samples_per_period} dt={_fmt(log.dt)} "
            f"bl={_fmt(log.body_length_unit)} masses={masses}")


def iter_lines(log: TrajectoryLog) -> Iterator[str]:
    """Yields every line of the on-disk representation, header first."""
    yield format_header(log)
    events_by_tick: dict[int, list[ContactEvent]] = {}
    for event in log.events:
        events_by_tick.setdefault(int(round(event.time / log.sample_interval)), []).append(event)

    for k in range(log.n_samples):
        t = _fmt(log.times[k])
        for robot in range(log.n_robots):
            values = ",".join(_fmt(v) for v in log.states[k, robot])
            yield f"{t},{robot},{values}"
        for event in events_by_tick.get(k, ()):
            i, j = event.robots
            yield (f"{_fmt(event.time)},{EVENT_TAG},{i},{j},{event.face_ids[0].value},{event.face_ids[1].value},"
                   f"{_fmt(event.impulse_magnitude)},{_fmt(event.normal[0])},{_fmt(event.normal[1])}")


def write_log(log: TrajectoryLog, path: Path) -> None:
    """
    Writes a TrajectoryLog to disk.

    Raises:
        RuntimeError: If the file cannot be written.
    """
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for line in iter_lines(log):
                f.write(line + "\n")
    except OSError as e:
        raise RuntimeError(f"Error: Could not write trajectory log '{path}'. Reason: {e}")
    logger.debug(f"Wrote {log.n_samples} samples and {len(log.events)} events to {path}")


def _parse_header(line: str) -> dict[str, str]:
    tokens = line.strip().split()
    if not tokens or tokens[0] != LOG_MAGIC:
        raise RuntimeError(f"Error: Not a smarticle trajectory log (missing '{LOG_MAGIC}' header).")
    header = {}
    for token in tokens[1:]:
        key, _, value = token.partition("=")
        header[key] = value
    return header


def check_schema(found: str, expected: str = LOG_SCHEMA_VERSION) -> None:
    """
    Refuses any log whose schema version differs from the analyzer's.

    Raises:
        SchemaMismatchError: On an unparseable or different version.
    """
    try:
        found_version = Version(found)
    except InvalidVersion:
        raise SchemaMismatchError(f"Log schema version '{found}' is not a valid version string.")
    if found_version != Version(expected):
        raise SchemaMismatchError(
            f"Log schema version {found} does not match analyzer schema {expected}; refusing to reinterpret."
        )


def read_log(source: TextIO) -> TrajectoryLog:
    """
    Parses a TrajectoryLog from an open text stream.

    Raises:
        SchemaMismatchError: If the header schema differs from LOG_SCHEMA_VERSION.
        RuntimeError: If the stream is malformed.
    """
    header = _parse_header(source.readline())
    check_schema(header.get("schema", ""))
    try:
        n_robots = int(header["robots"])
        n_samples = int(header["samples"])
        masses = tuple(float(m) for m in header["masses"].split(";"))
        period = float(header["period"])
        samples_per_period = int(header["samples_per_period"])
        body_length_unit = float(header["bl"])
    except (KeyError, ValueError) as e:
        raise RuntimeError(f"Error: Malformed log header. Reason: {e}")

    times = np.zeros(n_samples)
    states = np.zeros((n_samples, n_robots, len(STATE_COLUMNS)))
    filled = np.zeros((n_samples, n_robots), dtype=bool)
    events: list[ContactEvent] = []
    interval = period / samples_per_period
    for line_number, raw in enumerate(source, start=2):
        parts = raw.rstrip("\n").split(",")
        try:
            if parts[1] == EVENT_TAG:
                events.append(ContactEvent(
                    time=float(parts[0]),
                    robots=(int(parts[2]), int(parts[3])),
                    face_ids=(Face(parts[4]), Face(parts[5])),
                    impulse_magnitude=float(parts[6]),
                    normal=(float(parts[7]), float(parts[8])),
                ))
            else:
                t = float(parts[0])
                k = int(round(t / interval))
                robot = int(parts[1])
                if not 0 <= k < n_samples:
                    raise ValueError(f"sample time {t} lies outside the {n_samples}-sample horizon")
                if not 0 <= robot < n_robots:
                    raise ValueError(f"robot id {robot} is not among the {n_robots} robots")
                times[k] = t
                states[k, robot] = [float(v) for v in parts[2:7]]
                filled[k, robot] = True
        except (IndexError, ValueError) as e:
            raise RuntimeError(f"Error: Malformed log line {line_number}. Reason: {e}")

    if not filled.all():
        k, robot = np.argwhere(~filled)[0]
        raise RuntimeError(f"Error: Truncated log. Reason: no state for robot {robot} at sample {k} "
                           f"(t={k * interval:.6g}s); {int((~filled).sum())} state records missing.")

    return TrajectoryLog(
        config_hash=header.get("config", ""),
        seed=int(header.get("seed", 0)),
        period=period,
        samples_per_period=samples_per_period,
        dt=float(header.get("dt", 0.0)),
        body_length_unit=body_length_unit,
        masses=masses,
        times=times,
        states=states,
        events=events,
        schema_version=header["schema"],
    )


def load_log(path: Path) -> TrajectoryLog:
    """Reads a TrajectoryLog file from disk."""
    if not path.is_file():
        raise RuntimeError(f"Error: Trajectory log not found at '{path}'.")
    with open(path, "r", encoding="utf-8") as f:
        return read_log(f)


def main() -> None:
    """Prints a short summary of one or more trajectory logs."""
    parser = argparse.ArgumentParser(description="Summarizes smarticle trajectory logs.")
    parser.add_argument("logs", nargs="+", type=Path, help="Trajectory log files.")
    args = parser.parse_args()
    setup_logging()

    for path in args.logs:
        try:
            log = load_log(path)
        except RuntimeError as e:
            logger.error(str(e))
            sys.exit(1)
        logger.info(f"{path.name}: {log.n_robots} robots, {log.n_periods} periods, "
                    f"{len(log.events)} contact events, seed {log.seed}, config {log.config_hash}")


if __name__ == "__main__":
    main()
