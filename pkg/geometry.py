#!/usr/bin/env python3
"""
Rigid-link placement and narrow-phase collision detection for smarticles.

A smarticle is three oriented rectangles: a left arm, the central body and a
right arm. The body pose is given by its centre and its heading, the direction
of the body normal vector. The arms hang off the two body end faces and curl
toward the arm side (the side opposite the normal) as their angles grow.

Collisions between rectangles are detected with the separating-axis test over
the four face normals and reduced to a single deepest contact point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from typing import TYPE_CHECKING, Optional

from constants import GEOMETRY_PRESETS, DEFAULT_GEOMETRY_PRESET, ARM_MASS_FRACTION
from logging_config import get_logger

if TYPE_CHECKING:
    from dynamics import SmarticleState

logger = get_logger(__name__)

TWO_PI = 2.0 * math.pi
# Overlaps at or below this depth (m) count as touching, not penetrating.
CONTACT_EPSILON = 1e-12


class RejectedInputError(ValueError):
    """Raised when a state or rectangle carries non-finite or non-positive values."""


class Face(str, Enum):
    ARM_OUTER_L = "ArmOuterL"
    ARM_INNER_L = "ArmInnerL"
    ARM_OUTER_R = "ArmOuterR"
    ARM_INNER_R = "ArmInnerR"
    BODY_FRONT = "BodyFront"
    BODY_BACK = "BodyBack"
    BODY_END_L = "BodyEndL"
    BODY_END_R = "BodyEndR"

    @property
    def is_arm(self) -> bool:
        return self in ARM_FACES


ARM_FACES = frozenset({Face.ARM_OUTER_L, Face.ARM_INNER_L, Face.ARM_OUTER_R, Face.ARM_INNER_R})


class Link(IntEnum):
    LEFT_ARM = 0
    BODY = 1
    RIGHT_ARM = 2


def normalize_angle(angle: float) -> float:
    """Wraps an angle in radians onto [0, 2*pi)."""
    wrapped = angle % TWO_PI
    if wrapped >= TWO_PI:
        return 0.0
    return wrapped


@dataclass(frozen=True)
class SmarticleGeometry:
    """
    Link dimensions and mass of one robot.

    ``body_length_unit`` is the BL used to normalize separations; it defaults
    to the body width, the unit the travel distances are quoted in.
    """
    arm_length: float
    arm_thickness: float
    body_width: float
    body_depth: float
    mass: float
    body_length_unit: Optional[float] = None

    def __post_init__(self) -> None:
        if self.body_length_unit is None:
            object.__setattr__(self, "body_length_unit", self.body_width)
        for name in ("arm_length", "arm_thickness", "body_width", "body_depth", "mass", "body_length_unit"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0.0:
                raise ValueError(f"SmarticleGeometry.{name} must be strictly positive, got {value!r}")

    @classmethod
    def from_preset(cls, preset: str = DEFAULT_GEOMETRY_PRESET, **overrides: float) -> "SmarticleGeometry":
        """Builds a geometry from a named preset ('main' or 'feedback') plus overrides."""
        if preset not in GEOMETRY_PRESETS:
            raise ValueError(f"Unknown geometry preset '{preset}'. Known presets: {sorted(GEOMETRY_PRESETS)}")
        fields = dict(GEOMETRY_PRESETS[preset])
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**fields)

    @property
    def hinge_offset(self) -> float:
        """Distance from the body centre to each arm hinge along the long axis."""
        return 0.5 * self.body_width + 0.5 * self.arm_thickness

    @property
    def reach(self) -> float:
        """Radius of a circle about the body centre enclosing every link for any arm angles."""
        body_corner = math.hypot(0.5 * self.body_width, 0.5 * self.body_depth)
        arm_tip = self.hinge_offset + math.hypot(self.arm_length, 0.5 * self.arm_thickness)
        return max(body_corner, arm_tip)

    @property
    def arm_mass(self) -> float:
        return 0.5 * ARM_MASS_FRACTION * self.mass

    @property
    def body_mass(self) -> float:
        return (1.0 - ARM_MASS_FRACTION) * self.mass


@dataclass(frozen=True)
class OrientedRect:
    """A rectangle with centre, half extents along its own axes, and heading of its first axis."""
    center: tuple[float, float]
    half_extents: tuple[float, float]
    heading: float

    def __post_init__(self) -> None:
        if self.half_extents[0] <= 0.0 or self.half_extents[1] <= 0.0:
            raise RejectedInputError(f"OrientedRect half extents must be positive, got {self.half_extents}")
        if not (math.isfinite(self.center[0]) and math.isfinite(self.center[1]) and math.isfinite(self.heading)):
            raise RejectedInputError(f"OrientedRect has non-finite pose: center={self.center}, heading={self.heading}")
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    @property
    def axes(self) -> tuple[tuple[float, float], tuple[float, float]]:
        c, s = math.cos(self.heading), math.sin(self.heading)
        return (c, s), (-s, c)

    def corners(self) -> list[tuple[float, float]]:
        (ux, uy), (vx, vy) = self.axes
        hx, hy = self.half_extents
        cx, cy = self.center
        return [
            (cx + sx * hx * ux + sy * hy * vx, cy + sx * hx * uy + sy * hy * vy)
            for sx, sy in ((1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0))
        ]

    def radius_along(self, axis: tuple[float, float]) -> float:
        """Half-width of the rectangle's projection onto a unit axis."""
        (ux, uy), (vx, vy) = self.axes
        return (self.half_extents[0] * abs(ux * axis[0] + uy * axis[1])
                + self.half_extents[1] * abs(vx * axis[0] + vy * axis[1]))


@dataclass(frozen=True)
class ContactManifold:
    """
    A single deepest contact between two rectangles.

    ``normal`` points from the first rectangle toward the second. When the
    manifold comes from two smarticles, ``face_id`` is the face of the first
    robot's link, ``other_face_id`` the face of the second robot's link and
    ``links`` the (first, second) link indices.
    """
    point: tuple[float, float]
    normal: tuple[float, float]
    penetration: float
    face_id: Optional[Face] = None
    other_face_id: Optional[Face] = None
    links: Optional[tuple[int, int]] = None


def _check_state(state: "SmarticleState") -> None:
    values = (state.position[0], state.position[1], state.heading, state.alpha1, state.alpha2)
    if not all(math.isfinite(v) for v in values):
        raise RejectedInputError(f"Non-finite smarticle state: position={state.position}, heading={state.heading}, "
                                 f"alpha1={state.alpha1}, alpha2={state.alpha2}")


def body_axes(heading: float) -> tuple[tuple[float, float], tuple[float, float]]:
    """Returns (u, n): the body long axis and the body normal for a heading."""
    n = (math.cos(heading), math.sin(heading))
    u = (n[1], -n[0])
    return u, n


def arm_directions(heading: float, alpha1: float, alpha2: float) -> tuple[tuple[float, float], tuple[float, float]]:
    """Unit vectors from each hinge toward the arm tip, for the left (alpha1) and right (alpha2) arm."""
    (ux, uy), (nx, ny) = body_axes(heading)
    c1, s1 = math.cos(alpha1), math.sin(alpha1)
    c2, s2 = math.cos(alpha2), math.sin(alpha2)
    left = (-c1 * ux - s1 * nx, -c1 * uy - s1 * ny)
    right = (c2 * ux - s2 * nx, c2 * uy - s2 * ny)
    return left, right


def hinge_points(state: "SmarticleState", geom: SmarticleGeometry) -> tuple[tuple[float, float], tuple[float, float]]:
    """World positions of the left and right arm hinges."""
    (ux, uy), _ = body_axes(state.heading)
    h = geom.hinge_offset
    x, y = state.position
    return (x - h * ux, y - h * uy), (x + h * ux, y + h * uy)


def link_poses(state: "SmarticleState", geom: SmarticleGeometry) -> tuple[OrientedRect, OrientedRect, OrientedRect]:
    """
    Places the three links of a smarticle.

    Args:
        state: Pose and arm angles of the robot.
        geom: Link dimensions.

    Returns:
        (left arm, body, right arm) rectangles. Each arm's first axis points
        from its hinge toward its tip.

    Raises:
        RejectedInputError: If any pose or angle is non-finite.
    """
    _check_state(state)
    half_arm = 0.5 * geom.arm_length
    arm_extents = (half_arm, 0.5 * geom.arm_thickness)
    left_hinge, right_hinge = hinge_points(state, geom)
    left_dir, right_dir = arm_directions(state.heading, state.alpha1, state.alpha2)

    left = OrientedRect(
        (left_hinge[0] + half_arm * left_dir[0], left_hinge[1] + half_arm * left_dir[1]),
        arm_extents,
        math.atan2(left_dir[1], left_dir[0]),
    )
    body = OrientedRect(
        (state.position[0], state.position[1]),
        (0.5 * geom.body_width, 0.5 * geom.body_depth),
        state.heading - 0.5 * math.pi,
    )
    right = OrientedRect(
        (right_hinge[0] + half_arm * right_dir[0], right_hinge[1] + half_arm * right_dir[1]),
        arm_extents,
        math.atan2(right_dir[1], right_dir[0]),
    )
    return left, body, right


def rect_contact(a: OrientedRect, b: OrientedRect) -> Optional[ContactManifold]:
    """
    Separating-axis test between two oriented rectangles.

    Returns:
        A manifold whose normal points from ``a`` toward ``b`` and whose
        penetration is the smallest overlap over the four face normals, or
        None when some axis separates them (touching counts as separated).
    """
    dx = b.center[0] - a.center[0]
    dy = b.center[1] - a.center[1]
    a_axes = a.axes
    b_axes = b.axes

    best_overlap = math.inf
    best_normal = (1.0, 0.0)
    reference_is_a = True
    for index, axis in enumerate(a_axes + b_axes):
        dist = dx * axis[0] + dy * axis[1]
        overlap = a.radius_along(axis) + b.radius_along(axis) - abs(dist)
        if overlap <= CONTACT_EPSILON:
            return None
        if overlap < best_overlap:
            best_overlap = overlap
            best_normal = axis if dist >= 0.0 else (-axis[0], -axis[1])
            reference_is_a = index < 2

    point = _deepest_point(a, b, best_normal, reference_is_a)
    return ContactManifold(point=point, normal=best_normal, penetration=best_overlap)


def _deepest_point(a: OrientedRect, b: OrientedRect, normal: tuple[float, float],
                   reference_is_a: bool) -> tuple[float, float]:
    """Midpoint between the incident rectangle's deepest feature and the reference face."""
    nx, ny = normal
    if reference_is_a:
        reference, incident, toward = a, b, (-nx, -ny)
        face_level = a.center[0] * nx + a.center[1] * ny + a.radius_along(normal)
    else:
        reference, incident, toward = b, a, (nx, ny)
        face_level = b.center[0] * nx + b.center[1] * ny - b.radius_along(normal)

    corners = incident.corners()
    depths = [cx * toward[0] + cy * toward[1] for cx, cy in corners]
    deepest = max(depths)
    tolerance = 1e-6 * min(incident.half_extents)
    candidates = [c for c, d in zip(corners, depths) if d >= deepest - tolerance]

    tangent = (-ny, nx)
    ts = [cx * tangent[0] + cy * tangent[1] for cx, cy in candidates]
    ref_t = reference.center[0] * tangent[0] + reference.center[1] * tangent[1]
    ref_r = reference.radius_along(tangent)
    lo, hi = max(min(ts), ref_t - ref_r), min(max(ts), ref_t + ref_r)
    t_mid = 0.5 * (lo + hi) if lo <= hi else 0.5 * (min(ts) + max(ts))

    incident_level = sum(cx * nx + cy * ny for cx, cy in candidates) / len(candidates)
    n_mid = 0.5 * (incident_level + face_level)
    return (n_mid * nx + t_mid * tangent[0], n_mid * ny + t_mid * tangent[1])


def classify_face(link: int, rect: OrientedRect, heading: float, outward: tuple[float, float]) -> Face:
    """
    Names the face of a link that carries a contact.

    Args:
        link: Link index (Link.LEFT_ARM, Link.BODY, Link.RIGHT_ARM).
        rect: The link rectangle.
        heading: Body heading of the robot owning the link.
        outward: Contact normal pointing out of this link.
    """
    ox, oy = outward
    if link == Link.BODY:
        (ux, uy), (nx, ny) = body_axes(heading)
        scores = {
            Face.BODY_FRONT: ox * nx + oy * ny,
            Face.BODY_BACK: -(ox * nx + oy * ny),
            Face.BODY_END_L: -(ox * ux + oy * uy),
            Face.BODY_END_R: ox * ux + oy * uy,
        }
        return max(scores, key=scores.get)

    (dx, dy), _ = rect.axes
    if link == Link.RIGHT_ARM:
        inner = (dy, -dx)
        return Face.ARM_INNER_R if ox * inner[0] + oy * inner[1] > 0.0 else Face.ARM_OUTER_R
    inner = (-dy, dx)
    return Face.ARM_INNER_L if ox * inner[0] + oy * inner[1] > 0.0 else Face.ARM_OUTER_L


def smarticle_contacts(sA: "SmarticleState", sB: "SmarticleState", geom: SmarticleGeometry,
                       geom_b: Optional[SmarticleGeometry] = None,
                       links_a: Optional[tuple[OrientedRect, ...]] = None,
                       links_b: Optional[tuple[OrientedRect, ...]] = None) -> list[ContactManifold]:
    """
    All link-link contacts between two different robots.

    Self-contacts are never produced: an arm cannot reach its own body for
    |alpha| <= 90 degrees (see check_self_clearance).

    Args:
        sA, sB: Robot states.
        geom: Geometry of robot A (and of B unless ``geom_b`` is given).
        geom_b: Optional distinct geometry for robot B.
        links_a, links_b: Precomputed link rectangles, reused by the stepper.

    Returns:
        Up to nine manifolds with normals pointing from A toward B, each
        tagged with the face on A (``face_id``) and on B (``other_face_id``).
    """
    geom_b = geom_b or geom
    gap = math.hypot(sB.position[0] - sA.position[0], sB.position[1] - sA.position[1])
    if gap >= geom.reach + geom_b.reach:
        return []

    rects_a = links_a or link_poses(sA, geom)
    rects_b = links_b or link_poses(sB, geom_b)
    manifolds: list[ContactManifold] = []
    for i, ra in enumerate(rects_a):
        for j, rb in enumerate(rects_b):
            manifold = rect_contact(ra, rb)
            if manifold is None:
                continue
            nx, ny = manifold.normal
            manifolds.append(replace(
                manifold,
                face_id=classify_face(i, ra, sA.heading, (nx, ny)),
                other_face_id=classify_face(j, rb, sB.heading, (-nx, -ny)),
                links=(i, j),
            ))
    return manifolds


def check_self_clearance(geom: SmarticleGeometry, alpha_max: float, samples: int = 181) -> None:
    """
    Asserts that neither arm overlaps its own body anywhere in [-alpha_max, alpha_max].

    Args:
        geom: Link dimensions.
        alpha_max: Gait amplitude in radians.
        samples: Number of arm angles checked.

    Raises:
        ValueError: If some admissible arm angle makes an arm overlap the body.
    """
    # Local import keeps geometry free of a hard dependency on the stepper.
    from dynamics import SmarticleState

    for k in range(samples):
        alpha = -alpha_max + 2.0 * alpha_max * k / (samples - 1)
        left, body, right = link_poses(SmarticleState(alpha1=alpha, alpha2=alpha), geom)
        if rect_contact(left, body) is not None or rect_contact(right, body) is not None:
            raise ValueError(
                f"Arm overlaps its own body at alpha = {math.degrees(alpha):.1f} deg; "
                f"self-contact is not simulated, so alpha_max must stay within the clearance range."
            )
    logger.debug(f"Self-clearance verified for alpha_max = {math.degrees(alpha_max):.1f} deg.")
