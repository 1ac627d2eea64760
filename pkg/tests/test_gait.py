import math

import numpy as np
import pytest

from gait import (
    Actuation, ContractViolation, Direction, GaitMode, GaitProgram, arm_face_loads, calibrated_band,
    enclosed_area, feedback_gate, path_length, shape_path, target_angles,
)
from geometry import Face
from trajectory_log import ContactEvent

BAND = (1e-3, 3e-3)


def _event(face: Face, impulse: float, robots=(0, 1), other=Face.BODY_FRONT) -> ContactEvent:
    return ContactEvent(0.0, robots, (face, other), impulse, (1.0, 0.0))


def test_starts_at_positive_corner():
    a = math.radians(90.0)
    assert target_angles(GaitProgram(), 0.0) == pytest.approx((a, a))


def test_ccw_moves_one_arm_per_quarter():
    program = GaitProgram(alpha_max=60.0, period=1.6)
    a = math.radians(60.0)
    corners = [target_angles(program, q * 0.4) for q in range(4)]
    assert corners == [pytest.approx(c) for c in ((a, a), (a, -a), (-a, -a), (-a, a))]


def test_cw_visits_corners_in_reverse():
    program = GaitProgram(alpha_max=60.0, direction=Direction.CW)
    a = math.radians(60.0)
    assert target_angles(program, 0.4) == pytest.approx((-a, a))
    assert target_angles(program, 0.8) == pytest.approx((-a, -a))


def test_targets_move_at_motor_speed():
    program = GaitProgram(alpha_max=90.0, motor_speed=600.0)
    a1, a2 = target_angles(program, 0.1)
    assert a1 == pytest.approx(math.radians(90.0))
    assert a2 == pytest.approx(math.radians(90.0 - 60.0))


@pytest.mark.parametrize("direction", list(Direction))
def test_targets_bounded_and_periodic(direction):
    program = GaitProgram(alpha_max=45.0, direction=direction)
    limit = program.alpha_max_rad + 1e-12
    for t in np.linspace(0.0, 3 * program.period, 301):
        a1, a2 = target_angles(program, float(t))
        assert abs(a1) <= limit and abs(a2) <= limit
        assert target_angles(program, float(t) + program.period) == pytest.approx((a1, a2), abs=1e-12)


def test_square_gait_encloses_signed_area():
    for alpha in (30.0, 90.0):
        side = 2.0 * math.radians(alpha)
        ccw = shape_path(GaitProgram(alpha_max=alpha, direction=Direction.CCW))
        cw = shape_path(GaitProgram(alpha_max=alpha, direction=Direction.CW))
        assert enclosed_area(ccw) == pytest.approx(side ** 2, rel=1e-6)
        assert enclosed_area(cw) == pytest.approx(-side ** 2, rel=1e-6)
        assert path_length(ccw) == pytest.approx(4.0 * side, rel=1e-6)


def test_reciprocal_gait_encloses_nothing():
    path = shape_path(GaitProgram(alpha_max=90.0, direction=Direction.RECIPROCAL))
    assert enclosed_area(path) == pytest.approx(0.0, abs=1e-9)
    assert path_length(path) == pytest.approx(4.0 * math.pi, rel=1e-6)


def test_phase_offset_shifts_clock():
    program = GaitProgram(period=2.0, phase0=0.25)
    assert program.phase(0.0) == pytest.approx(0.25)
    assert program.cycle(1.4) == 0
    assert program.cycle(1.6) == 1


def test_invalid_programs_rejected():
    with pytest.raises(ValueError):
        GaitProgram(alpha_max=120.0)
    with pytest.raises(ValueError):
        GaitProgram(mode=GaitMode.FEEDBACK)
    with pytest.raises(ValueError):
        GaitProgram(impact_band=BAND)
    with pytest.raises(ValueError):
        target_angles(GaitProgram(), -0.1)


def test_arm_face_loads_sum_only_the_sensing_robot():
    events = [
        _event(Face.ARM_INNER_L, 1e-3),
        _event(Face.ARM_INNER_L, 5e-4),
        _event(Face.BODY_BACK, 9e-3),
        _event(Face.ARM_OUTER_R, 2e-3, robots=(1, 0)),
    ]
    loads = arm_face_loads(events, robot=0)
    assert loads[Face.ARM_INNER_L] == pytest.approx(1.5e-3)
    assert loads[Face.ARM_OUTER_R] == 0.0
    assert set(loads) == {Face.ARM_INNER_L, Face.ARM_OUTER_L, Face.ARM_INNER_R, Face.ARM_OUTER_R}


def test_feedback_gate_continues_without_contacts():
    program = GaitProgram(mode=GaitMode.FEEDBACK, impact_band=BAND)
    assert feedback_gate(program, arm_face_loads([], 0), 0.5) == (Actuation.CONTINUE, None)


def test_feedback_gate_holds_until_next_period():
    program = GaitProgram(period=1.0, mode=GaitMode.FEEDBACK, impact_band=BAND)
    loads = arm_face_loads([_event(Face.ARM_INNER_R, 2e-3)], 0)
    command, hold = feedback_gate(program, loads, 0.6)
    assert command is Actuation.HOLD_BOTH_ARMS and hold == 0

    quiet = arm_face_loads([], 0)
    assert feedback_gate(program, quiet, 0.99, hold) == (Actuation.HOLD_BOTH_ARMS, 0)
    assert feedback_gate(program, quiet, 1.0, hold) == (Actuation.CONTINUE, None)


def test_feedback_gate_ignores_body_faces_and_out_of_band_impulses():
    program = GaitProgram(mode=GaitMode.FEEDBACK, impact_band=BAND)
    body_only = {Face.BODY_FRONT: 2e-3}
    assert feedback_gate(program, body_only, 0.3)[0] is Actuation.CONTINUE
    too_hard = arm_face_loads([_event(Face.ARM_OUTER_L, 1e-2)], 0)
    assert feedback_gate(program, too_hard, 0.3)[0] is Actuation.CONTINUE


def test_feedback_gate_refuses_open_loop_programs():
    with pytest.raises(ContractViolation):
        feedback_gate(GaitProgram(), {}, 0.0)


def test_calibrated_band_scales_median():
    assert calibrated_band(2e-3) == pytest.approx((1e-3, 3e-3))
    with pytest.raises(ValueError):
        calibrated_band(0.0)
