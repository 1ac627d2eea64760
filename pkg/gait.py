#!/usr/bin/env python3
"""
Arm-angle targets for the square gait and the impact-gated feedback variant.

The gait is a square of side 2*alpha_max in the (alpha1, alpha2) shape space.
Each quarter-period moves exactly one arm from one corner value to the other
at the motor speed, then dwells. The shape plane is drawn with alpha2 on the
horizontal axis and alpha1 on the vertical axis; CCW traverses
(+a,+a) -> (+a,-a) -> (-a,-a) -> (-a,+a) in that picture.

RECIPROCAL is the time-symmetric control: it retraces its own path and
encloses no area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional

import numpy as np

from constants import (
    ALPHA_MAX_LIMIT_DEG, DEFAULT_ALPHA_MAX_DEG, DEFAULT_PERIOD, DEFAULT_MOTOR_SPEED_DEG,
    DEFAULT_PHASE0, IMPACT_BAND_FRACTIONS,
)
from geometry import ARM_FACES, Face
from logging_config import get_logger

logger = get_logger(__name__)


class ContractViolation(RuntimeError):
    """Raised when an operation is called on a program of the wrong mode."""


class Direction(str, Enum):
    CW = "CW"
    CCW = "CCW"
    RECIPROCAL = "RECIPROCAL"


class GaitMode(str, Enum):
    OPEN_LOOP = "OpenLoop"
    FEEDBACK = "Feedback"


class Actuation(str, Enum):
    CONTINUE = "Continue"
    HOLD_BOTH_ARMS = "HoldBothArms"


# Per quarter: (arm index moved, start sign, end sign). Arm index 0 is alpha1.
_QUARTERS = {
    Direction.CCW: ((1, +1, -1), (0, +1, -1), (1, -1, +1), (0, -1, +1)),
    Direction.CW: ((0, +1, -1), (1, +1, -1), (0, -1, +1), (1, -1, +1)),
    Direction.RECIPROCAL: ((1, +1, -1), (0, +1, -1), (0, -1, +1), (1, -1, +1)),
}


@dataclass(frozen=True)
class GaitProgram:
    """
    A periodic shape-space program for one robot.

    Angles and the motor speed are in degrees, as in config files. ``phase0``
    offsets the robot's phase clock; ``impact_band`` (N*s) is required in
    Feedback mode and forbidden otherwise.
    """
    alpha_max: float = DEFAULT_ALPHA_MAX_DEG
    period: float = DEFAULT_PERIOD
    motor_speed: float = DEFAULT_MOTOR_SPEED_DEG
    direction: Direction = Direction.CCW
    phase0: float = DEFAULT_PHASE0
    mode: GaitMode = GaitMode.OPEN_LOOP
    impact_band: Optional[tuple[float, float]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "mode", GaitMode(self.mode))
        if not 0.0 < self.alpha_max <= ALPHA_MAX_LIMIT_DEG:
            raise ValueError(f"alpha_max must lie in (0, {ALPHA_MAX_LIMIT_DEG:g}] degrees, got {self.alpha_max}")
        if self.period <= 0.0:
            raise ValueError(f"period must be positive, got {self.period}")
        if self.motor_speed <= 0.0:
            raise ValueError(f"motor_speed must be positive, got {self.motor_speed}")
        if not 0.0 <= self.phase0 < 1.0:
            raise ValueError(f"phase0 must lie in [0, 1), got {self.phase0}")
        if self.mode is GaitMode.FEEDBACK:
            if self.impact_band is None:
                raise ValueError("Feedback gait programs need an impact_band; run the FeedbackCalibration scenario first.")
            low, high = self.impact_band
            if not 0.0 <= low < high:
                raise ValueError(f"impact_band must satisfy 0 <= low < high, got {self.impact_band}")
            object.__setattr__(self, "impact_band", (float(low), float(high)))
        elif self.impact_band is not None:
            raise ValueError("impact_band is only meaningful for Feedback gait programs.")

    @property
    def alpha_max_rad(self) -> float:
        return math.radians(self.alpha_max)

    @property
    def motor_speed_rad(self) -> float:
        return math.radians(self.motor_speed)

    def phase(self, t: float) -> float:
        """Fractional phase p = frac(t/period + phase0)."""
        p = (t / self.period + self.phase0) % 1.0
        return 0.0 if p >= 1.0 else p

    def cycle(self, t: float) -> int:
        """Index of the gait cycle containing time t (boundaries follow the phase clock)."""
        return math.floor(t / self.period + self.phase0)


def target_angles(program: GaitProgram, t: float) -> tuple[float, float]:
    """
    Shape-space point of the gait at time t.

    Args:
        program: The gait program.
        t: Time in seconds, t >= 0.

    Returns:
        (alpha1, alpha2) targets in radians.
    """
    if t < 0.0:
        raise ValueError(f"target_angles needs t >= 0, got {t}")
    amplitude = program.alpha_max_rad
    p = program.phase(t)
    quarter = min(int(p * 4.0), 3)
    elapsed = (p - 0.25 * quarter) * program.period
    travelled = min(elapsed * program.motor_speed_rad, 2.0 * amplitude)

    quarters = _QUARTERS[program.direction]
    # Corner the quarter starts from: replay the moves of the earlier quarters.
    angles = [amplitude, amplitude]
    for arm, _, end in quarters[:quarter]:
        angles[arm] = end * amplitude
    arm, start, end = quarters[quarter]
    angles[arm] = start * amplitude + (end - start) * 0.5 * travelled
    return angles[0], angles[1]


def shape_path(program: GaitProgram, samples_per_period: int = 4000) -> np.ndarray:
    """Samples one period of target angles; returns an array of shape (n+1, 2) in radians."""
    times = np.linspace(0.0, program.period, samples_per_period + 1)
    return np.array([target_angles(program, float(t)) for t in times])


def path_length(path: np.ndarray) -> float:
    """Integral of |d alpha1| + |d alpha2| along a sampled shape path."""
    return float(np.abs(np.diff(path, axis=0)).sum())


def enclosed_area(path: np.ndarray) -> float:
    """
    Signed shape-space area of a closed sampled path (shoelace formula).

    Uses (alpha2, alpha1) as (horizontal, vertical) so CCW programs give a
    positive area.
    """
    horizontal, vertical = path[:, 1], path[:, 0]
    return float(0.5 * np.sum(horizontal[:-1] * vertical[1:] - horizontal[1:] * vertical[:-1]))


def arm_face_loads(events: Iterable, robot: int) -> dict[Face, float]:
    """
    Sums contact impulses per arm face of one robot over a batch of events.

    Args:
        events: ContactEvent objects (see dynamics) from one control tick.
        robot: Index of the sensing robot.

    Returns:
        Mapping from each of the robot's four arm faces to its summed impulse.
    """
    loads = {face: 0.0 for face in sorted(ARM_FACES, key=lambda f: f.value)}
    for event in events:
        i, j = event.robots
        for index, face in ((i, event.face_ids[0]), (j, event.face_ids[1])):
            if index == robot and face in ARM_FACES:
                loads[face] += event.impulse_magnitude
    return loads


def feedback_gate(program: GaitProgram, loads: Mapping[Face, float], t: float,
                  hold_cycle: Optional[int] = None) -> tuple[Actuation, Optional[int]]:
    """
    Impact-gated arm hold.

    Only the four arm faces are sensed. An arm-face impulse inside the impact
    band freezes both arms until the next period boundary; after it the gait
    resumes by chasing the current target from wherever the arms stopped.

    Args:
        program: A Feedback-mode gait program.
        loads: Per-face impulses of the current control tick (arm_face_loads).
        t: Time of the control tick.
        hold_cycle: Cycle index in which a hold is active, or None.

    Returns:
        (actuation command, updated hold_cycle).

    Raises:
        ContractViolation: If the program is not in Feedback mode.
    """
    if program.mode is not GaitMode.FEEDBACK:
        raise ContractViolation("feedback_gate called on an OpenLoop gait program.")

    cycle = program.cycle(t)
    if hold_cycle is not None and hold_cycle == cycle:
        return Actuation.HOLD_BOTH_ARMS, hold_cycle

    low, high = program.impact_band
    for face, impulse in loads.items():
        if face in ARM_FACES and low <= impulse <= high:
            logger.debug(f"Impact {impulse:.3e} N*s on {face.value} at t={t:.3f}s: holding arms until cycle {cycle + 1}.")
            return Actuation.HOLD_BOTH_ARMS, cycle
    return Actuation.CONTINUE, None


def calibrated_band(median_impulse: float,
                    fractions: tuple[float, float] = IMPACT_BAND_FRACTIONS) -> tuple[float, float]:
    """Impact band as fractions of a measured median compression impulse."""
    if median_impulse <= 0.0 or not math.isfinite(median_impulse):
        raise ValueError(f"Calibration median impulse must be positive, got {median_impulse}")
    return fractions[0] * median_impulse, fractions[1] * median_impulse
