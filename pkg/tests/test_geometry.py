import math

import numpy as np
import pytest

from dynamics import SmarticleState
from geometry import (
    Face, Link, OrientedRect, RejectedInputError, SmarticleGeometry, check_self_clearance, hinge_points,
    link_poses, rect_contact, smarticle_contacts,
)


def _inside(rect: OrientedRect, points: np.ndarray) -> np.ndarray:
    (ux, uy), (vx, vy) = rect.axes
    d = points - np.array(rect.center)
    return ((np.abs(d @ np.array([ux, uy])) < rect.half_extents[0])
            & (np.abs(d @ np.array([vx, vy])) < rect.half_extents[1]))


def _sample(rect: OrientedRect, n: int = 100) -> np.ndarray:
    s = np.linspace(-1.0, 1.0, n)
    a, b = np.meshgrid(s * rect.half_extents[0], s * rect.half_extents[1])
    (ux, uy), (vx, vy) = rect.axes
    return np.column_stack([rect.center[0] + a.ravel() * ux + b.ravel() * vx,
                            rect.center[1] + a.ravel() * uy + b.ravel() * vy])


def _clearance(a: OrientedRect, b: OrientedRect) -> float:
    """Smallest |separation or overlap| over the four SAT axes."""
    dx, dy = b.center[0] - a.center[0], b.center[1] - a.center[1]
    gaps = []
    for axis in a.axes + b.axes:
        gaps.append(abs(a.radius_along(axis) + b.radius_along(axis) - abs(dx * axis[0] + dy * axis[1])))
    return min(gaps)


def test_zero_angles_give_collinear_links(geometry):
    left, body, right = link_poses(SmarticleState(), geometry)
    # Heading 0: normal +x, long axis -y. Every centre lies on x = 0.
    for rect in (left, body, right):
        assert rect.center[0] == pytest.approx(0.0, abs=1e-15)
    assert left.center[1] == pytest.approx(geometry.hinge_offset + 0.5 * geometry.arm_length)
    assert right.center[1] == pytest.approx(-(geometry.hinge_offset + 0.5 * geometry.arm_length))
    assert body.half_extents == (0.5 * geometry.body_width, 0.5 * geometry.body_depth)


def test_right_angle_arms_form_u_shape(geometry):
    alpha = math.radians(90.0)
    left, _, right = link_poses(SmarticleState(alpha1=alpha, alpha2=alpha), geometry)
    # Both arms curl to the arm side (-x), parallel to the normal.
    tip_l = np.array(left.center) + geometry.arm_length * 0.5 * np.array(left.axes[0])
    tip_r = np.array(right.center) + geometry.arm_length * 0.5 * np.array(right.axes[0])
    assert tip_l[0] == pytest.approx(-geometry.arm_length)
    assert tip_r[0] == pytest.approx(-geometry.arm_length)
    assert left.axes[0][1] == pytest.approx(0.0, abs=1e-12)
    # The facing inner surfaces of the two tips are exactly one body width apart.
    inner_gap = abs(tip_l[1] - tip_r[1]) - geometry.arm_thickness
    assert inner_gap == pytest.approx(geometry.body_width)


def test_hinges_match_homogeneous_transform(geometry):
    heading = math.radians(45.0)
    state = SmarticleState(position=(0.1, 0.2), heading=heading,
                           alpha1=math.radians(30.0), alpha2=math.radians(-60.0))
    body_to_world = np.array([[math.cos(heading), -math.sin(heading), 0.1],
                              [math.sin(heading), math.cos(heading), 0.2],
                              [0.0, 0.0, 1.0]])
    # Body frame: x along the normal, y = normal rotated +90 deg (the left end).
    left_local = np.array([0.0, geometry.hinge_offset, 1.0])
    right_local = np.array([0.0, -geometry.hinge_offset, 1.0])
    left, right = hinge_points(state, geometry)
    np.testing.assert_allclose(left, (body_to_world @ left_local)[:2], atol=1e-12)
    np.testing.assert_allclose(right, (body_to_world @ right_local)[:2], atol=1e-12)

    rects = link_poses(state, geometry)
    for rect, hinge in ((rects[Link.LEFT_ARM], left), (rects[Link.RIGHT_ARM], right)):
        base = np.array(rect.center) - 0.5 * geometry.arm_length * np.array(rect.axes[0])
        np.testing.assert_allclose(base, hinge, atol=1e-12)


def test_hinge_to_body_corner_distances_are_rigid(geometry):
    rng = np.random.default_rng(3)
    reference = None
    for a1, a2 in rng.uniform(-math.pi / 2, math.pi / 2, size=(2000, 2)):
        state = SmarticleState(position=(0.3, -0.1), heading=1.1, alpha1=a1, alpha2=a2)
        _, body, _ = link_poses(state, geometry)
        hinges = hinge_points(state, geometry)
        distances = [math.dist(h, c) for h in hinges for c in body.corners()]
        if reference is None:
            reference = distances
        np.testing.assert_allclose(distances, reference, atol=1e-9)


def test_non_finite_state_rejected(geometry):
    with pytest.raises(RejectedInputError):
        link_poses(SmarticleState(alpha1=math.nan), geometry)


def test_disjoint_squares_do_not_touch():
    a = OrientedRect((0.0, 0.0), (0.5, 0.5), 0.0)
    b = OrientedRect((3.0, 0.0), (0.5, 0.5), 0.0)
    assert rect_contact(a, b) is None


def test_coincident_squares_penetrate_fully():
    a = OrientedRect((0.0, 0.0), (0.5, 0.5), 0.0)
    manifold = rect_contact(a, OrientedRect((0.0, 0.0), (0.5, 0.5), 0.0))
    assert manifold is not None
    assert manifold.penetration == pytest.approx(1.0)


def test_contact_normal_points_from_a_to_b():
    a = OrientedRect((0.0, 0.0), (0.5, 0.5), 0.0)
    b = OrientedRect((0.9, 0.0), (0.5, 0.5), 0.0)
    forward, backward = rect_contact(a, b), rect_contact(b, a)
    assert forward.normal == pytest.approx((1.0, 0.0))
    assert forward.penetration == pytest.approx(0.1)
    assert backward.normal == pytest.approx((-1.0, 0.0))


def test_sat_agrees_with_point_sampling():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(1000):
        a = OrientedRect(tuple(rng.uniform(-1, 1, 2)), tuple(rng.uniform(0.1, 0.8, 2)), float(rng.uniform(0, 6.3)))
        b = OrientedRect(tuple(rng.uniform(-1, 1, 2)), tuple(rng.uniform(0.1, 0.8, 2)), float(rng.uniform(0, 6.3)))
        if _clearance(a, b) < 0.05:
            continue
        sampled = bool(_inside(b, _sample(a)).any() or _inside(a, _sample(b)).any())
        assert (rect_contact(a, b) is not None) == sampled
        assert (rect_contact(b, a) is not None) == sampled
        checked += 1
    assert checked > 300


def test_distant_robots_have_no_contacts(geometry):
    far = SmarticleState(position=(10 * geometry.body_length_unit, 0.0))
    assert smarticle_contacts(SmarticleState(), far, geometry) == []


def test_side_by_side_straight_robots_at_1_3_bl_do_not_touch(geometry):
    for theta in (0.0, math.pi):
        r = 1.3 * geometry.body_length_unit
        b = SmarticleState(position=(r * math.cos(theta), r * math.sin(theta)))
        assert smarticle_contacts(SmarticleState(), b, geometry) == []


def test_body_overlap_tags_faces(geometry):
    b = SmarticleState(position=(geometry.body_depth - 0.001, 0.0))
    manifolds = smarticle_contacts(SmarticleState(), b, geometry)
    assert len(manifolds) == 1
    manifold = manifolds[0]
    assert manifold.links == (Link.BODY, Link.BODY)
    assert manifold.face_id is Face.BODY_FRONT
    assert manifold.other_face_id is Face.BODY_BACK
    assert manifold.penetration == pytest.approx(0.001)


def test_body_between_arms_touches_inner_faces(geometry):
    alpha = math.radians(90.0)
    a = SmarticleState(alpha1=alpha, alpha2=alpha)
    # Robot B sits inside A's U with its body ends pressing both arms.
    b = SmarticleState(position=(-0.5 * geometry.arm_length, 0.0))
    wide = SmarticleGeometry.from_preset("main", body_width=2.0 * geometry.hinge_offset - geometry.arm_thickness + 0.002)
    manifolds = smarticle_contacts(a, b, geometry, geom_b=wide)
    arm_faces = [m.face_id for m in manifolds if m.links[0] != Link.BODY and m.links[1] == Link.BODY]
    assert len(arm_faces) >= 2
    assert set(arm_faces) == {Face.ARM_INNER_L, Face.ARM_INNER_R}


def test_self_clearance_holds_up_to_right_angle(geometry):
    check_self_clearance(geometry, math.radians(90.0))
    check_self_clearance(SmarticleGeometry.from_preset("feedback"), math.radians(90.0))


def test_self_clearance_rejects_overfolded_arms(geometry):
    with pytest.raises(ValueError):
        check_self_clearance(geometry, math.radians(120.0))


def test_geometry_rejects_non_positive_sizes():
    with pytest.raises(ValueError):
        SmarticleGeometry.from_preset("main", arm_length=-0.01)
    with pytest.raises(ValueError):
        SmarticleGeometry.from_preset("nope")
