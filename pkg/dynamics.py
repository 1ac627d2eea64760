#!/usr/bin/env python3
"""
Time-stepping of a world of smarticles.

Each smarticle is one rigid composite body whose shape is a kinematic input:
the arm angles follow the gait at the motor-speed limit and the body only
moves through contact impulses from other robots and Coulomb friction with
the ground. A step runs, in order:

  1. arm actuation toward the gait targets,
  2. link placement,
  3. robot-robot contact detection,
  4. sequential-impulse solve (zero restitution, Coulomb friction),
  5. regularized ground friction on each body (two-point support),
  6. semi-implicit Euler integration of the body pose,
  7. positional penetration correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from tqdm.auto import tqdm

from constants import (
    DEFAULT_DT, DEFAULT_MU_GROUND, DEFAULT_MU_ROBOT, DEFAULT_RESTITUTION, DEFAULT_GROUND_DAMPING,
    DEFAULT_ARENA_HALF_WIDTH, DEFAULT_WALLS, DEFAULT_HEADING_NOISE, DEFAULT_SAMPLES_PER_PERIOD,
    SOLVER_ITERATIONS, POSITION_CORRECTION_FACTOR, POSITION_SLOP, FRICTION_SLIP_SCALE,
    GROUND_FRICTION_ITERATIONS, NONCONVERGENCE_TOLERANCE, GRAVITY, PENETRATION_CAP_FRACTION,
)
from gait import GaitMode, GaitProgram, Actuation, arm_face_loads, feedback_gate, target_angles
from geometry import (
    ContactManifold, Link, OrientedRect, SmarticleGeometry, hinge_points, link_poses,
    normalize_angle, smarticle_contacts,
)
from logging_config import get_logger
from trajectory_log import ContactEvent, TrajectoryLog

logger = get_logger(__name__)

# Solver keeps sweeping past the configured count, up to this multiple, while
# some contact still approaches.
MAX_ITERATION_FACTOR = 8


class SimulationError(RuntimeError):
    """Fatal simulation failure; ``dump`` holds the diagnostic state at the failing step."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass(slots=True)
class SmarticleState:
    """Planar pose and velocity of the body plus the two arm angles (radians)."""
    position: tuple[float, float] = (0.0, 0.0)
    heading: float = 0.0
    lin_velocity: tuple[float, float] = (0.0, 0.0)
    ang_velocity: float = 0.0
    alpha1: float = 0.0
    alpha2: float = 0.0

    def copy(self) -> "SmarticleState":
        return SmarticleState(self.position, self.heading, self.lin_velocity, self.ang_velocity,
                              self.alpha1, self.alpha2)


@dataclass(frozen=True)
class WorldConfig:
    dt: float = DEFAULT_DT
    mu_ground: float = DEFAULT_MU_GROUND
    mu_robot: float = DEFAULT_MU_ROBOT
    restitution: float = DEFAULT_RESTITUTION
    ground_damping: float = DEFAULT_GROUND_DAMPING
    arena_half_width: float = DEFAULT_ARENA_HALF_WIDTH
    seed: int = 0
    walls: bool = DEFAULT_WALLS
    heading_noise: float = DEFAULT_HEADING_NOISE
    solver_iterations: int = SOLVER_ITERATIONS
    correction_factor: float = POSITION_CORRECTION_FACTOR
    slop: float = POSITION_SLOP

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.mu_ground < 0.0 or self.mu_robot < 0.0:
            raise ValueError(f"Friction coefficients must be >= 0, got mu_ground={self.mu_ground}, mu_robot={self.mu_robot}")
        if self.restitution != 0.0:
            raise ValueError(f"Contacts are perfectly inelastic; restitution must be 0, got {self.restitution}")
        if self.ground_damping < 0.0 or self.heading_noise < 0.0:
            raise ValueError("ground_damping and heading_noise must be >= 0")
        if self.arena_half_width <= 0.0:
            raise ValueError(f"arena_half_width must be positive, got {self.arena_half_width}")
        if self.solver_iterations < 1:
            raise ValueError(f"solver_iterations must be >= 1, got {self.solver_iterations}")


@dataclass
class StepDiagnostics:
    max_penetration: float = 0.0
    min_normal_velocity: float = math.inf
    nonconverged_steps: int = 0
    contacts_solved: int = 0

    def as_dict(self) -> dict:
        return {
            "max_penetration": self.max_penetration,
            "min_normal_velocity": self.min_normal_velocity if math.isfinite(self.min_normal_velocity) else 0.0,
            "nonconverged_steps": self.nonconverged_steps,
            "contacts_solved": self.contacts_solved,
        }


@dataclass
class _Contact:
    """Solver-side view of one manifold."""
    i: int
    j: int
    manifold: ContactManifold
    ra: tuple[float, float]
    rb: tuple[float, float]
    kin_a: tuple[float, float]
    kin_b: tuple[float, float]
    k_normal: float
    k_tangent: float
    p_normal: float = 0.0
    p_tangent: float = 0.0


@dataclass
class World:
    """
    A set of smarticles sharing one geometry, one ground and one clock.

    ``holds`` stores, per robot, the gait cycle in which a feedback hold is
    active (None when the arms are free).
    """
    states: list[SmarticleState]
    geometry: SmarticleGeometry
    config: WorldConfig = field(default_factory=WorldConfig)
    step_index: int = 0
    holds: list[Optional[int]] = field(default_factory=list)
    diagnostics: StepDiagnostics = field(default_factory=StepDiagnostics)
    rng: np.random.Generator = field(init=False)
    _tick: dict = field(default_factory=dict, init=False, repr=False)
    _arm_rates: list = field(default_factory=list, init=False, repr=False)

    def __post_init__(self) -> None:
        self.rng = np.random.default_rng(self.config.seed)
        if not self.holds:
            self.holds = [None] * len(self.states)
        self._arm_rates = [(0.0, 0.0)] * len(self.states)

    @property
    def time(self) -> float:
        return self.step_index * self.config.dt

    @property
    def n_robots(self) -> int:
        return len(self.states)

    def mass(self) -> float:
        return self.geometry.mass

    def inertia(self, state: SmarticleState, links: Sequence[OrientedRect]) -> float:
        """Moment of inertia of the composite about the body centre for the current shape."""
        g = self.geometry
        inertia = g.body_mass * (g.body_width ** 2 + g.body_depth ** 2) / 12.0
        x, y = state.position
        for link in (links[Link.LEFT_ARM], links[Link.RIGHT_ARM]):
            cx, cy = link.center
            inertia += g.arm_mass * ((g.arm_length ** 2 + g.arm_thickness ** 2) / 12.0
                                     + (cx - x) ** 2 + (cy - y) ** 2)
        return inertia

    def kinetic_energy(self) -> float:
        total = 0.0
        for state in self.states:
            links = link_poses(state, self.geometry)
            vx, vy = state.lin_velocity
            total += 0.5 * self.mass() * (vx * vx + vy * vy)
            total += 0.5 * self.inertia(state, links) * state.ang_velocity ** 2
        return total

    def take_tick_events(self, tick_start: float) -> list[ContactEvent]:
        """Returns the contact events accumulated since the last call and resets the accumulator."""
        events = []
        for key in sorted(self._tick, key=lambda k: (k[0], k[1], k[2].value, k[3].value)):
            i, j, face_i, face_j = key
            impulse, nx, ny = self._tick[key]
            norm = math.hypot(nx, ny)
            normal = (nx / norm, ny / norm) if norm > 0.0 else (0.0, 0.0)
            events.append(ContactEvent(tick_start, (i, j), (face_i, face_j), impulse, normal))
        self._tick = {}
        return events


def _cross(r: tuple[float, float], v: tuple[float, float]) -> float:
    return r[0] * v[1] - r[1] * v[0]


def _advance_arms(world: World, programs: Optional[Sequence[GaitProgram]], t_next: float) -> None:
    dt = world.config.dt
    rates = []
    for index, state in enumerate(world.states):
        program = programs[index] if programs is not None else None
        if program is None:
            rates.append((0.0, 0.0))
            continue
        hold = world.holds[index]
        if hold is not None and program.cycle(t_next) == hold:
            target = (state.alpha1, state.alpha2)
        else:
            target = target_angles(program, t_next)
        limit = program.motor_speed_rad * dt
        d1 = max(-limit, min(limit, target[0] - state.alpha1))
        d2 = max(-limit, min(limit, target[1] - state.alpha2))
        state.alpha1 += d1
        state.alpha2 += d2
        rates.append((d1 / dt, d2 / dt))
    world._arm_rates = rates


def _kinematic_velocity(world: World, index: int, link: int, point: tuple[float, float],
                        hinges: tuple[tuple[float, float], tuple[float, float]]) -> tuple[float, float]:
    """Velocity of a point on an arm due to the arm's own rotation relative to the body."""
    if link == Link.BODY:
        return 0.0, 0.0
    rate1, rate2 = world._arm_rates[index]
    if link == Link.LEFT_ARM:
        rate, hinge = rate1, hinges[0]
    else:
        rate, hinge = -rate2, hinges[1]
    return -rate * (point[1] - hinge[1]), rate * (point[0] - hinge[0])


def _collect_contacts(world: World, links: list) -> list[tuple[int, int, ContactManifold]]:
    found = []
    reach = 2.0 * world.geometry.reach
    states = world.states
    for i in range(world.n_robots):
        xi, yi = states[i].position
        for j in range(i + 1, world.n_robots):
            xj, yj = states[j].position
            if (xj - xi) ** 2 + (yj - yi) ** 2 >= reach * reach:
                continue
            for manifold in smarticle_contacts(states[i], states[j], world.geometry,
                                               links_a=links[i], links_b=links[j]):
                found.append((i, j, manifold))
    return found


def _solve_contacts(world: World, found: list, links: list) -> None:
    if not found:
        return
    cfg = world.config
    states = world.states
    mass = world.mass()
    inv_mass = 1.0 / mass
    inv_inertia = {}
    hinges = {}
    for i, j, _ in found:
        for r in (i, j):
            if r not in inv_inertia:
                inv_inertia[r] = 1.0 / world.inertia(states[r], links[r])
                hinges[r] = hinge_points(states[r], world.geometry)

    velocities = {r: [states[r].lin_velocity[0], states[r].lin_velocity[1], states[r].ang_velocity]
                  for r in inv_inertia}

    contacts = []
    for i, j, manifold in found:
        px, py = manifold.point
        ra = (px - states[i].position[0], py - states[i].position[1])
        rb = (px - states[j].position[0], py - states[j].position[1])
        n = manifold.normal
        tangent = (-n[1], n[0])
        k_normal = 2.0 * inv_mass + _cross(ra, n) ** 2 * inv_inertia[i] + _cross(rb, n) ** 2 * inv_inertia[j]
        k_tangent = 2.0 * inv_mass + _cross(ra, tangent) ** 2 * inv_inertia[i] + _cross(rb, tangent) ** 2 * inv_inertia[j]
        contacts.append(_Contact(
            i, j, manifold, ra, rb,
            _kinematic_velocity(world, i, manifold.links[0], manifold.point, hinges[i]),
            _kinematic_velocity(world, j, manifold.links[1], manifold.point, hinges[j]),
            k_normal, k_tangent,
        ))

    def relative_velocity(c: _Contact) -> tuple[float, float]:
        va, vb = velocities[c.i], velocities[c.j]
        ax = va[0] - va[2] * c.ra[1] + c.kin_a[0]
        ay = va[1] + va[2] * c.ra[0] + c.kin_a[1]
        bx = vb[0] - vb[2] * c.rb[1] + c.kin_b[0]
        by = vb[1] + vb[2] * c.rb[0] + c.kin_b[1]
        return bx - ax, by - ay

    def apply(c: _Contact, px: float, py: float) -> None:
        va, vb = velocities[c.i], velocities[c.j]
        va[0] -= px * inv_mass
        va[1] -= py * inv_mass
        va[2] -= _cross(c.ra, (px, py)) * inv_inertia[c.i]
        vb[0] += px * inv_mass
        vb[1] += py * inv_mass
        vb[2] += _cross(c.rb, (px, py)) * inv_inertia[c.j]

    def min_normal_velocity() -> float:
        lowest = math.inf
        for c in contacts:
            rx, ry = relative_velocity(c)
            lowest = min(lowest, rx * c.manifold.normal[0] + ry * c.manifold.normal[1])
        return lowest

    max_sweeps = cfg.solver_iterations * MAX_ITERATION_FACTOR
    sweeps = 0
    residual = -math.inf
    while sweeps < max_sweeps:
        for c in contacts:
            nx, ny = c.manifold.normal
            rx, ry = relative_velocity(c)
            vn = rx * nx + ry * ny
            new_normal = max(c.p_normal - vn / c.k_normal, 0.0)
            d_normal = new_normal - c.p_normal
            c.p_normal = new_normal
            apply(c, d_normal * nx, d_normal * ny)

            tx, ty = -ny, nx
            rx, ry = relative_velocity(c)
            vt = rx * tx + ry * ty
            bound = cfg.mu_robot * c.p_normal
            new_tangent = max(-bound, min(bound, c.p_tangent - vt / c.k_tangent))
            d_tangent = new_tangent - c.p_tangent
            c.p_tangent = new_tangent
            apply(c, d_tangent * tx, d_tangent * ty)
        sweeps += 1
        if sweeps >= cfg.solver_iterations:
            residual = min_normal_velocity()
            if residual >= -NONCONVERGENCE_TOLERANCE:
                break

    if residual < -NONCONVERGENCE_TOLERANCE:
        world.diagnostics.nonconverged_steps += 1
        logger.debug(f"Contact solver did not converge at step {world.step_index}: "
                     f"residual approach speed {-residual:.2e} m/s over {len(contacts)} contacts.")
    world.diagnostics.min_normal_velocity = min(world.diagnostics.min_normal_velocity, residual)
    world.diagnostics.contacts_solved += len(contacts)

    for r, (vx, vy, w) in velocities.items():
        states[r].lin_velocity = (vx, vy)
        states[r].ang_velocity = w

    for c in contacts:
        if c.p_normal <= 0.0:
            continue
        key = (c.i, c.j, c.manifold.face_id, c.manifold.other_face_id)
        impulse, nx, ny = world._tick.get(key, (0.0, 0.0, 0.0))
        world._tick[key] = (impulse + c.p_normal,
                            nx + c.p_normal * c.manifold.normal[0],
                            ny + c.p_normal * c.manifold.normal[1])


def _ground_friction(world: World, links: list) -> None:
    """Regularized Coulomb friction at two body support points, never reversing a slip."""
    cfg = world.config
    g = world.geometry
    mass = world.mass()
    dt = cfg.dt
    point_load = 0.5 * mass * GRAVITY
    for index, state in enumerate(world.states):
        vx, vy = state.lin_velocity
        w = state.ang_velocity
        if vx == 0.0 and vy == 0.0 and w == 0.0:
            continue
        inertia = world.inertia(state, links[index])
        (ux, uy) = (math.sin(state.heading), -math.cos(state.heading))
        supports = [(0.25 * g.body_width * ux, 0.25 * g.body_width * uy),
                    (-0.25 * g.body_width * ux, -0.25 * g.body_width * uy)]

        limits = []
        for rx, ry in supports:
            slip = math.hypot(vx - w * ry, vy + w * rx)
            limits.append(cfg.mu_ground * point_load * dt * math.tanh(slip / FRICTION_SLIP_SCALE))
        accumulated = [[0.0, 0.0], [0.0, 0.0]]

        for _ in range(GROUND_FRICTION_ITERATIONS):
            for k, (rx, ry) in enumerate(supports):
                sx, sy = vx - w * ry, vy + w * rx
                slip = math.hypot(sx, sy)
                if slip == 0.0:
                    continue
                dx, dy = sx / slip, sy / slip
                k_eff = 1.0 / mass + _cross((rx, ry), (dx, dy)) ** 2 / inertia
                px = accumulated[k][0] - dx * slip / k_eff
                py = accumulated[k][1] - dy * slip / k_eff
                magnitude = math.hypot(px, py)
                if magnitude > limits[k]:
                    px, py = px * limits[k] / magnitude, py * limits[k] / magnitude
                jx, jy = px - accumulated[k][0], py - accumulated[k][1]
                accumulated[k] = [px, py]
                vx += jx / mass
                vy += jy / mass
                w += _cross((rx, ry), (jx, jy)) / inertia

        if cfg.ground_damping > 0.0:
            scale = 1.0 / (1.0 + dt * cfg.ground_damping)
            vx, vy, w = vx * scale, vy * scale, w * scale
        state.lin_velocity = (vx, vy)
        state.ang_velocity = w


def _integrate(world: World) -> None:
    cfg = world.config
    dt = cfg.dt
    for state in world.states:
        vx, vy = state.lin_velocity
        x, y = state.position[0] + vx * dt, state.position[1] + vy * dt
        heading = state.heading + state.ang_velocity * dt
        if cfg.heading_noise > 0.0:
            heading += cfg.heading_noise * math.sqrt(dt) * float(world.rng.standard_normal())
        if cfg.walls:
            bound = cfg.arena_half_width
            if abs(x) > bound:
                x = math.copysign(2.0 * bound, x) - x
                vx = -vx
            if abs(y) > bound:
                y = math.copysign(2.0 * bound, y) - y
                vy = -vy
        state.position = (x, y)
        state.lin_velocity = (vx, vy)
        state.heading = normalize_angle(heading)


def _correct_positions(world: World) -> None:
    cfg = world.config
    links = [link_poses(s, world.geometry) for s in world.states]
    cap = PENETRATION_CAP_FRACTION * world.geometry.arm_thickness
    worst = 0.0
    for i, j, manifold in _collect_contacts(world, links):
        # Baumgarte split below the cap, full removal of anything deeper.
        correction = max(max(manifold.penetration - cfg.slop, 0.0) * cfg.correction_factor,
                         manifold.penetration - cap)
        worst = max(worst, manifold.penetration - correction)
        if correction == 0.0:
            continue
        nx, ny = manifold.normal
        # Equal masses: each robot takes half of the correction.
        half = 0.5 * correction
        xi, yi = world.states[i].position
        xj, yj = world.states[j].position
        world.states[i].position = (xi - half * nx, yi - half * ny)
        world.states[j].position = (xj + half * nx, yj + half * ny)
    world.diagnostics.max_penetration = max(world.diagnostics.max_penetration, worst)


def _check_finite(world: World) -> None:
    for index, state in enumerate(world.states):
        values = (*state.position, state.heading, *state.lin_velocity, state.ang_velocity, state.alpha1, state.alpha2)
        if not all(math.isfinite(v) for v in values):
            dump = {
                "step": world.step_index,
                "time": world.time,
                "robot": index,
                "states": [
                    {"position": s.position, "heading": s.heading, "lin_velocity": s.lin_velocity,
                     "ang_velocity": s.ang_velocity, "alpha1": s.alpha1, "alpha2": s.alpha2}
                    for s in world.states
                ],
                "diagnostics": world.diagnostics.as_dict(),
            }
            logger.error(f"Non-finite state for robot {index} at step {world.step_index}: {dump['states'][index]}")
            raise SimulationError(f"NaN state for robot {index} at t={world.time:.4f}s", dump)


def step(world: World, programs: Optional[Sequence[GaitProgram]] = None, t: Optional[float] = None) -> World:
    """
    Advances the world by one time step.

    Args:
        world: The world to advance (mutated in place and returned).
        programs: One gait program per robot; None (or a None entry) keeps
            that robot's arms frozen.
        t: Current time; defaults to the world clock.

    Returns:
        The advanced world.

    Raises:
        SimulationError: If any state becomes non-finite.
    """
    t = world.time if t is None else t
    _advance_arms(world, programs, t + world.config.dt)
    links = [link_poses(s, world.geometry) for s in world.states]
    found = _collect_contacts(world, links)
    _solve_contacts(world, found, links)
    _ground_friction(world, links)
    _integrate(world)
    if found:
        _correct_positions(world)
    _check_finite(world)
    world.step_index += 1
    return world


def _snapshot(world: World) -> list[list[float]]:
    return [[s.position[0], s.position[1], s.heading, s.alpha1, s.alpha2] for s in world.states]


def run_trial(world: World, programs: Sequence[Optional[GaitProgram]], duration_periods: int,
              samples_per_period: int = DEFAULT_SAMPLES_PER_PERIOD, config_hash: str = "",
              progress: bool = False) -> TrajectoryLog:
    """
    Runs a world for a whole number of gait periods and records it.

    States are sampled ``samples_per_period`` times per period starting at
    t = 0; contact impulses are summed per sample interval (the control tick)
    and stamped with the tick's start time. Feedback programs are gated at
    the end of every tick.

    Args:
        world: Initial world (advanced in place).
        programs: One gait program per robot; all share one period.
        duration_periods: Number of gait periods, >= 1.
        samples_per_period: Log decimation.
        config_hash: Hash of the run configuration, embedded in the log header.
        progress: Show a tqdm progress bar over periods.

    Returns:
        The TrajectoryLog of the trial.
    """
    if duration_periods < 1:
        raise ValueError(f"duration_periods must be >= 1, got {duration_periods}")
    active = [p for p in programs if p is not None]
    if not active:
        raise ValueError("run_trial needs at least one gait program to define the period.")
    period = active[0].period
    if any(abs(p.period - period) > 1e-12 for p in active):
        raise ValueError("All gait programs in one world must share the same period.")

    steps_per_period = round(period / world.config.dt)
    if abs(steps_per_period * world.config.dt - period) > 1e-9 or steps_per_period % samples_per_period:
        raise ValueError(f"Period {period}s must be a whole number of dt={world.config.dt}s steps, "
                         f"divisible into {samples_per_period} samples.")
    steps_per_sample = steps_per_period // samples_per_period
    n_samples = duration_periods * samples_per_period

    times = np.zeros(n_samples)
    states = np.zeros((n_samples, world.n_robots, 5))
    events: list[ContactEvent] = []
    feedback = [i for i, p in enumerate(programs) if p is not None and p.mode is GaitMode.FEEDBACK]
    interval = period / samples_per_period

    ticks = range(n_samples)
    bar = tqdm(total=duration_periods, desc="Simulating", unit="period", leave=False) if progress else None
    for k in ticks:
        tick_start = k * interval
        times[k] = tick_start
        states[k] = _snapshot(world)
        for _ in range(steps_per_sample):
            step(world, programs)
        tick_events = world.take_tick_events(tick_start)
        events.extend(tick_events)
        for index in feedback:
            loads = arm_face_loads(tick_events, index)
            command, world.holds[index] = feedback_gate(programs[index], loads, tick_start, world.holds[index])
            if command is Actuation.HOLD_BOTH_ARMS and world.holds[index] is not None:
                logger.debug(f"Robot {index} holding arms in cycle {world.holds[index]}.")
        if bar is not None and (k + 1) % samples_per_period == 0:
            bar.update(1)
    if bar is not None:
        bar.close()

    diagnostics = world.diagnostics.as_dict()
    if diagnostics["nonconverged_steps"]:
        logger.debug(f"{diagnostics['nonconverged_steps']} steps ended with unconverged contacts.")
    return TrajectoryLog(
        config_hash=config_hash,
        seed=world.config.seed,
        period=period,
        samples_per_period=samples_per_period,
        dt=world.config.dt,
        body_length_unit=world.geometry.body_length_unit,
        masses=tuple(world.mass() for _ in world.states),
        times=times,
        states=states,
        events=events,
        diagnostics=diagnostics,
    )


def initial_state(x: float, y: float, heading: float, program: Optional[GaitProgram] = None) -> SmarticleState:
    """A resting robot at a pose, with arms at its gait's t = 0 shape (straight if no program)."""
    alpha1, alpha2 = target_angles(program, 0.0) if program is not None else (0.0, 0.0)
    return SmarticleState(position=(x, y), heading=normalize_angle(heading), alpha1=alpha1, alpha2=alpha2)
