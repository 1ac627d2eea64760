#!/usr/bin/env python3
"""
Scenario runners for the smarticle glider experiments.

Every scenario maps (config, seed or scan cell) to a small result record in
a worker function, so trials can run on a multiprocessing pool; aggregation
happens afterwards in the parent and never depends on completion order.

Scenario kinds:
  Cloud7               dense in-phase cluster, glider emergence
  PolarScanConstantR   basin of attraction on a constant-r (theta, phi) grid
  AmplitudeSweep       binding probability, MSD exponent and COM speed per amplitude
  BoundPairRelaxation  steady-state separation of a pair started on a template
  FeedbackCalibration  compression-impulse distribution for the feedback band
  FeedbackComparison   lifetimes of open-loop vs impact-gated C2 pairs
"""

from __future__ import annotations

import json
import math
import platform
from dataclasses import dataclass, replace
from enum import Enum
from multiprocessing import Pool
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
import yaml
from scipy.stats import spearmanr
from tqdm.auto import tqdm

from config import RunConfig, config_hash, config_to_dict
from constants import (
    BASIN_CONTRAST_BAND_DEG, DEFAULT_SAMPLES_PER_PERIOD, DIR_LOGS, EMERGENCE_LIFETIME_PERIODS,
    GLIDER_THRESHOLD_PERIODS, LOG_BYTES_PER_RECORD, LOG_SCHEMA_VERSION, MANIFEST_FILENAME, PACKAGE_NAME,
    PACKAGE_VERSION, REFINED_TEMPLATES_FILENAME, SEPARATION_ATTEMPTS, SEPARATION_STEP_BL, SETTLE_PERIODS,
    TEMPLATE_JITTER_HEADING_DEG, TEMPLATE_JITTER_POSITION, TEMPLATE_REFINE_OFFSETS_DEG, TEMPLATE_REFINE_PERIODS,
    TEMPLATE_SNUG_R_BL,
)
from dynamics import SmarticleState, World, WorldConfig, initial_state, run_trial
from gait import GaitMode, GaitProgram, calibrated_band
from geometry import Face, SmarticleGeometry, link_poses, smarticle_contacts
from logging_config import get_logger, progress_logging, setup_worker_logging
from observables import (
    DyadClass, all_pairs, binding_probability, com_speed, contact_counts, longest_bound_run,
    bound_mask, pair_observables, transport_stats, wrap_degrees,
)
from trajectory_log import TrajectoryLog, write_log

logger = get_logger(__name__)

BODY_FACES = frozenset({Face.BODY_FRONT, Face.BODY_BACK, Face.BODY_END_L, Face.BODY_END_R})
INNER_ARM_FACES = frozenset({Face.ARM_INNER_L, Face.ARM_INNER_R})


class PackingError(RuntimeError):
    """Raised when robots cannot be placed without overlapping links."""


class BasinLabel(str, Enum):
    ATTRACTED = "Attracted"
    REPELLED = "Repelled"
    INVALID = "Invalid"


@dataclass(frozen=True)
class AttractorTemplate:
    """Relative configuration of robot B in robot A's frame that leads into a glider."""
    name: str
    r_bl: float
    theta: float
    phi: float
    phase: float = 0.0
    alpha_max: float = 90.0
    source: str = "hand-picked"
    config_hash: str = ""


@dataclass
class BasinMap:
    phase: float
    radius_bl: float
    cells: pd.DataFrame  # theta, phi, label, lifetime, run_start

    def counts(self) -> dict[str, int]:
        counts = self.cells["label"].value_counts()
        return {label.value: int(counts.get(label.value, 0)) for label in BasinLabel}


@dataclass
class TrialJob:
    """Everything a worker needs to simulate one trial."""
    tag: str
    geometry: SmarticleGeometry
    world: WorldConfig
    states: list[SmarticleState]
    programs: list[Optional[GaitProgram]]
    horizon: int
    samples_per_period: int
    config_hash: str
    log_path: Optional[Path] = None
    max_log_mb: float = 0.0
    extra: Optional[dict] = None


# --- Placement ---

def pose_from_relative(r_bl: float, theta: float, phi: float, body_length_unit: float,
                       origin: tuple[float, float] = (0.0, 0.0), heading_a: float = 0.0) -> tuple[float, float, float]:
    """World pose (x, y, heading) of robot B given (r, theta, phi) relative to robot A."""
    angle = heading_a + math.radians(theta)
    distance = r_bl * body_length_unit
    return (origin[0] + distance * math.cos(angle),
            origin[1] + distance * math.sin(angle),
            heading_a + math.radians(phi))


def has_overlap(states: Sequence[SmarticleState], geometry: SmarticleGeometry) -> bool:
    links = [link_poses(s, geometry) for s in states]
    for i, j in all_pairs(len(states)):
        if smarticle_contacts(states[i], states[j], geometry, links_a=links[i], links_b=links[j]):
            return True
    return False


def footprint(geometry: SmarticleGeometry, program: GaitProgram) -> tuple[float, float, float]:
    """
    Bounding box of a robot at heading +y with its gait's t = 0 shape.

    Returns:
        (width along x, depth along y, y offset of the box centre from the body centre).
    """
    state = initial_state(0.0, 0.0, math.pi / 2.0, program)
    corners = np.array([c for rect in link_poses(state, geometry) for c in rect.corners()])
    (x0, y0), (x1, y1) = corners.min(axis=0), corners.max(axis=0)
    return float(x1 - x0), float(y1 - y0), float(0.5 * (y0 + y1))


def pack_cluster(geometry: SmarticleGeometry, program: GaitProgram, n_robots: int, rows: int, gap: float,
                 position_jitter: float, heading_jitter_deg: float, attempts: int,
                 rng: np.random.Generator) -> list[SmarticleState]:
    """
    Dense lattice of in-phase robots with seeded jitter.

    Robots are placed one at a time. A draw that overlaps an already placed
    robot is redrawn with the jitter scaled down, reaching the bare lattice
    position on the last attempt.

    Raises:
        PackingError: If some robot cannot be placed clear of the others.
    """
    width, depth, _ = footprint(geometry, program)
    per_row = math.ceil(n_robots / rows)
    used_rows = math.ceil(n_robots / per_row)
    placed: list[SmarticleState] = []
    for index in range(n_robots):
        row, col = divmod(index, per_row)
        x0 = (col - 0.5 * (per_row - 1)) * (width + gap)
        y0 = (row - 0.5 * (used_rows - 1)) * (depth + gap)
        for attempt in range(attempts):
            scale = 1.0 - attempt / max(attempts - 1, 1)
            dx, dy = rng.normal(0.0, position_jitter, size=2) * scale
            dh = math.radians(float(rng.normal(0.0, heading_jitter_deg))) * scale
            candidate = initial_state(x0 + dx, y0 + dy, math.pi / 2.0 + dh, program)
            if not has_overlap(placed + [candidate], geometry):
                placed.append(candidate)
                break
        else:
            raise PackingError(f"Could not place robot {index} of {n_robots} clear of its neighbours "
                               f"after {attempts} attempts; increase the lattice gap.")
    return placed


def _place(template: AttractorTemplate, geometry: SmarticleGeometry, program_a: GaitProgram,
           program_b: GaitProgram, jitter: np.ndarray) -> tuple[list[SmarticleState], float]:
    bl = geometry.body_length_unit
    a = initial_state(0.0, 0.0, 0.0, program_a)
    for attempt in range(SEPARATION_ATTEMPTS):
        r = template.r_bl + attempt * SEPARATION_STEP_BL
        x, y, heading = pose_from_relative(r, template.theta, template.phi, bl)
        b = initial_state(x + jitter[0], y + jitter[1], heading + jitter[2], program_b)
        if not has_overlap([a, b], geometry):
            if attempt:
                logger.debug(f"{template.name} template pushed out to r = {r:.3f} BL to clear initial overlap.")
            return [a, b], r
    raise PackingError(f"{template.name} template cannot be placed without overlap.")


def place_pair(template: AttractorTemplate, geometry: SmarticleGeometry, program_a: GaitProgram,
               program_b: GaitProgram, rng: Optional[np.random.Generator] = None) -> list[SmarticleState]:
    """
    Two robots in a template configuration, optionally jittered.

    An overlapping start is pushed apart along the line of centres in small
    steps until the links clear.

    Raises:
        PackingError: If no clear placement is found.
    """
    jitter = (np.zeros(3) if rng is None else
              np.array([*rng.normal(0.0, TEMPLATE_JITTER_POSITION, size=2),
                        math.radians(float(rng.normal(0.0, TEMPLATE_JITTER_HEADING_DEG)))]))
    return _place(template, geometry, program_a, program_b, jitter)[0]


def clear_radius(template: AttractorTemplate, geometry: SmarticleGeometry, program_a: GaitProgram,
                 program_b: GaitProgram) -> float:
    """Separation (BL) at which the unjittered template pair first clears; placing it there needs no push."""
    return _place(template, geometry, program_a, program_b, np.zeros(3))[1]


# --- Templates ---

def load_templates(path: Path) -> dict[str, AttractorTemplate]:
    """
    Reads the attractor template fixture file.

    Raises:
        RuntimeError: If the file is missing or malformed.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
        return {name: AttractorTemplate(name=name, **fields) for name, fields in data["templates"].items()}
    except (OSError, yaml.YAMLError, KeyError, TypeError) as e:
        raise RuntimeError(f"Error: Could not load attractor templates from '{path}'. Reason: {e}")


def save_templates(templates: dict[str, AttractorTemplate], path: Path) -> None:
    data = {
        "schema": LOG_SCHEMA_VERSION,
        "templates": {
            name: {"r_bl": t.r_bl, "theta": t.theta, "phi": t.phi, "phase": t.phase,
                   "alpha_max": t.alpha_max, "source": t.source, "config_hash": t.config_hash}
            for name, t in sorted(templates.items())
        },
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write("# Relative configuration of robot B in robot A's body frame (degrees, BL).\n")
        yaml.safe_dump(data, f, sort_keys=False)
    logger.info(f"Wrote {len(templates)} attractor templates to {path}")


def extract_attractor_templates(gliders: pd.DataFrame, cfg_hash: str = "") -> dict[str, AttractorTemplate]:
    """
    Picks, per class, the longest-lived glider and its relative configuration at bind time.

    Args:
        gliders: Cloud7 glider records (columns class, lifetime, r0, theta0, phi0, alpha_max, seed, robot_a, robot_b).
        cfg_hash: Hash of the Cloud7 config the gliders came from, kept as provenance.

    Returns:
        Templates keyed by class name; classes without gliders are absent.
    """
    templates = {}
    for name in (DyadClass.C1.value, DyadClass.C2.value):
        subset = gliders[gliders["class"] == name]
        if subset.empty:
            logger.warning(f"No {name} gliders to extract a template from.")
            continue
        best = subset.sort_values(["lifetime", "seed"], ascending=[False, True]).iloc[0]
        templates[name] = AttractorTemplate(
            name=name,
            r_bl=float(best["r0"]),
            theta=float(best["theta0"]),
            phi=float(best["phi0"]),
            phase=0.0,
            alpha_max=float(best["alpha_max"]),
            source=f"Cloud7 seed {int(best['seed'])} pair {int(best['robot_a'])}-{int(best['robot_b'])}",
            config_hash=cfg_hash,
        )
    return templates


def default_templates_path() -> Path:
    return Path(__file__).resolve().parent / "templates" / "attractors.yaml"


def _templates_for(config: RunConfig) -> dict[str, AttractorTemplate]:
    path = Path(config.scenario.templates) if config.scenario.templates else default_templates_path()
    return load_templates(path)


# --- Trial execution ---

def simulate(job: TrialJob, seed: int) -> TrajectoryLog:
    """Runs one trial and writes its log when logging is enabled and under the size gate."""
    world = World([s.copy() for s in job.states], job.geometry, replace(job.world, seed=seed))
    log = run_trial(world, job.programs, job.horizon, job.samples_per_period, job.config_hash)
    if job.log_path is not None:
        size_mb = log.n_samples * log.n_robots * LOG_BYTES_PER_RECORD / 1e6
        if size_mb <= job.max_log_mb:
            write_log(log, job.log_path)
        else:
            logger.debug(f"Skipping log for {job.tag}: about {size_mb:.1f} MB exceeds {job.max_log_mb} MB.")
    return log


def run_jobs(worker: Callable, jobs: Sequence, n_jobs: int = 1, desc: str = "Trials") -> list:
    """Maps a worker over jobs, in order, on a process pool when n_jobs > 1."""
    with progress_logging():
        if n_jobs > 1 and len(jobs) > 1:
            with Pool(processes=min(n_jobs, len(jobs)), initializer=setup_worker_logging) as pool:
                return list(tqdm(pool.imap(worker, jobs), total=len(jobs), desc=desc, unit="trial"))
        return [worker(job) for job in tqdm(jobs, desc=desc, unit="trial")]


def _log_path(config: RunConfig, out_dir: Optional[Path], tag: str) -> Optional[Path]:
    if out_dir is None or not config.output.write_logs:
        return None
    return out_dir / DIR_LOGS / f"{tag}.log"


def _program(base: GaitProgram, **changes) -> GaitProgram:
    return replace(base, **changes)


# --- Template refinement ---

@dataclass(frozen=True)
class TemplateRefinement:
    template: AttractorTemplate
    lifetime: int
    displacement_w: float
    dyad_class: str
    candidates: int


def template_candidates(template: AttractorTemplate) -> list[AttractorTemplate]:
    """The template itself first, then theta/phi offsets at its radius and at a touching radius."""
    radii = [template.r_bl] + ([TEMPLATE_SNUG_R_BL] if TEMPLATE_SNUG_R_BL < template.r_bl else [])
    candidates = [template]
    for r_bl in radii:
        for d_theta in TEMPLATE_REFINE_OFFSETS_DEG:
            for d_phi in TEMPLATE_REFINE_OFFSETS_DEG:
                if r_bl == template.r_bl and d_theta == 0.0 and d_phi == 0.0:
                    continue
                candidates.append(replace(template, r_bl=r_bl, theta=template.theta + d_theta,
                                          phi=template.phi + d_phi))
    return candidates


def _refine_worker(job: TrialJob) -> dict:
    log = simulate(job, job.extra["seed"])
    obs = pair_observables(log, (0, 1), job.horizon)
    lifetime = obs.lifetime if obs.run_start <= SETTLE_PERIODS else 0
    displacement = 0.0
    if lifetime:
        _, displacement = com_speed(log, (0, 1), obs.run_start, obs.run_start + lifetime, job.geometry.body_width)
    return {"index": job.extra["index"], "lifetime": lifetime, "displacement_w": displacement,
            "class": obs.dyad_class.value}


def refine_template(template: AttractorTemplate, geometry: SmarticleGeometry, program: GaitProgram,
                    world: WorldConfig, periods: int = TEMPLATE_REFINE_PERIODS,
                    samples_per_period: int = DEFAULT_SAMPLES_PER_PERIOD, n_jobs: int = 1,
                    seed: int = 0) -> TemplateRefinement:
    """
    Picks the template neighbour that stays bound longest from the start.

    Each candidate pair is placed without jitter and simulated for ``periods``
    gait periods. Only bound runs starting within the settle window count.
    Ties go to the candidate of the template's own class, then to the larger
    COM displacement, then to the earlier candidate, so an unbeatable
    template comes back unchanged apart from its resolved radius.

    Returns:
        TemplateRefinement whose template places exactly the winning pair.
    """
    jobs = []
    placed = []
    for candidate in template_candidates(template):
        try:
            r_bl = clear_radius(candidate, geometry, program, program)
        except PackingError:
            logger.debug(f"{template.name} candidate theta={candidate.theta:g} phi={candidate.phi:g} cannot be placed.")
            continue
        resolved = replace(candidate, r_bl=r_bl, alpha_max=program.alpha_max)
        jobs.append(TrialJob(
            tag=f"refine_{template.name}_{len(placed)}", geometry=geometry, world=world,
            states=place_pair(resolved, geometry, program, program), programs=[program, program],
            horizon=periods, samples_per_period=samples_per_period, config_hash="",
            extra={"seed": seed, "index": len(placed)},
        ))
        placed.append(resolved)
    if not jobs:
        raise PackingError(f"No candidate around the {template.name} template can be placed without overlap.")

    results = run_jobs(_refine_worker, jobs, n_jobs, desc=f"Refining {template.name}")
    best = max(results, key=lambda r: (r["lifetime"], r["class"] == template.name, r["displacement_w"], -r["index"]))
    chosen = placed[best["index"]]
    chosen = replace(chosen, source=(f"{template.source}; refined to bound {best['lifetime']}/{periods} periods "
                                     f"at alpha_max {program.alpha_max:g}"))
    logger.info(f"{template.name} template: r={chosen.r_bl:.3f} BL, theta={chosen.theta:g}, phi={chosen.phi:g} "
                f"stays bound {best['lifetime']} of {periods} periods ({best['class']}, "
                f"{best['displacement_w']:.3f} W) out of {len(placed)} candidates.")
    if best["lifetime"] == 0:
        logger.warning(f"No candidate around the {template.name} template binds within {SETTLE_PERIODS} periods "
                       f"at alpha_max {program.alpha_max:g}; keeping its own placement.")
    return TemplateRefinement(template=chosen, lifetime=best["lifetime"], displacement_w=best["displacement_w"],
                              dyad_class=best["class"], candidates=len(placed))


def scenario_template(config: RunConfig, geometry: SmarticleGeometry, program: Optional[GaitProgram] = None,
                      n_jobs: int = 1, out_dir: Optional[Path] = None) -> AttractorTemplate:
    """
    The scenario's named template, refined for its geometry and gait when refine_periods > 0.

    Without a program the refinement runs the open-loop gait at the template's own amplitude.

    The refined template is appended to the run's refined-template file so a
    later run can start from it through ``scenario.templates``.
    """
    params = config.scenario.parameters
    template = _templates_for(config)[params["template"]]
    if params.get("refine_periods", 0) <= 0:
        return template
    if program is None:
        program = _program(config.gait, alpha_max=template.alpha_max, mode=GaitMode.OPEN_LOOP, impact_band=None)
    refinement = refine_template(template, geometry, program, config.world, params["refine_periods"],
                                 config.output.samples_per_period, n_jobs, config.scenario.seeds[0])
    refined = replace(refinement.template, config_hash=config_hash(config))
    if out_dir is not None:
        path = out_dir / REFINED_TEMPLATES_FILENAME
        existing = load_templates(path) if path.is_file() else {}
        save_templates({**existing, refined.name: refined}, path)
    return refined


# --- Cloud7 ---

def _cloud_worker(job: TrialJob) -> dict:
    seed = job.extra["seed"]
    log = simulate(job, seed)
    emergence = job.extra["emergence_periods"]
    gliders = []
    spp = log.samples_per_period
    for pair in all_pairs(log.n_robots):
        obs = pair_observables(log, pair, job.horizon)
        if obs.lifetime < GLIDER_THRESHOLD_PERIODS:
            continue
        end = obs.run_start + obs.lifetime
        v_com, displacement = com_speed(log, pair, obs.run_start, end, job.geometry.body_width)
        k0 = obs.run_start * spp
        gliders.append({
            "seed": seed, "robot_a": pair[0], "robot_b": pair[1],
            "class": obs.dyad_class.value, "lifetime": obs.lifetime, "run_start": obs.run_start,
            "censored": end >= job.horizon, "mean_phi": obs.mean_phi,
            "displacement_w": displacement, "v_com": v_com,
            "r0": float(obs.r[k0]), "theta0": float(obs.theta[k0]), "phi0": float(obs.phi[k0]),
            "alpha_max": job.programs[0].alpha_max,
        })
        if end >= job.horizon:
            logger.debug(f"Seed {seed} pair {pair}: lifetime {obs.lifetime} censored at the horizon.")
    lifetimes = [g["lifetime"] for g in gliders]
    trial = {
        "seed": seed,
        "n_robots": log.n_robots,
        "n_gliders": len(gliders),
        "max_lifetime": max(lifetimes, default=0),
        "emerged": max(lifetimes, default=0) >= emergence,
        "max_penetration": log.diagnostics.get("max_penetration", 0.0),
        "nonconverged_steps": log.diagnostics.get("nonconverged_steps", 0),
    }
    return {"trial": trial, "gliders": gliders}


def run_cloud7(config: RunConfig, seeds: Optional[Sequence[int]] = None, n_jobs: int = 1,
               out_dir: Optional[Path] = None) -> tuple[pd.DataFrame, pd.DataFrame]:
    """
    Runs the dense-cluster emergence experiment.

    Args:
        config: Run config of kind Cloud7.
        seeds: Trial seeds (default: the config's).
        n_jobs: Worker processes.
        out_dir: Output directory for optional logs.

    Returns:
        (per-trial summary, glider records) DataFrames sorted by seed.

    Raises:
        PackingError: If the initial cluster cannot be packed.
    """
    params = config.scenario.parameters
    seeds = list(config.scenario.seeds if seeds is None else seeds)
    program = config.gait
    cfg_hash = config_hash(config)
    jobs = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        states = pack_cluster(config.geometry, program, params["n_robots"], params["rows"], params["gap"],
                              params["position_jitter"], params["heading_jitter"], params["packing_attempts"], rng)
        jobs.append(TrialJob(
            tag=f"cloud7_seed{seed}", geometry=config.geometry, world=config.world, states=states,
            programs=[program] * len(states), horizon=config.scenario.horizon,
            samples_per_period=config.output.samples_per_period, config_hash=cfg_hash,
            log_path=_log_path(config, out_dir, f"cloud7_seed{seed}"), max_log_mb=config.output.max_log_mb,
            extra={"seed": seed, "emergence_periods": params["emergence_periods"]},
        ))
    results = run_jobs(_cloud_worker, jobs, n_jobs, desc="Cloud7 trials")
    trials = pd.DataFrame([r["trial"] for r in results]).sort_values("seed", ignore_index=True)
    gliders = pd.DataFrame([g for r in results for g in r["gliders"]],
                           columns=["seed", "robot_a", "robot_b", "class", "lifetime", "run_start", "censored",
                                    "mean_phi", "displacement_w", "v_com", "r0", "theta0", "phi0", "alpha_max"])
    gliders = gliders.sort_values(["seed", "robot_a", "robot_b"], ignore_index=True)
    logger.info(f"Cloud7: {int(trials['emerged'].sum())} of {len(trials)} trials produced a glider lasting "
                f">= {params['emergence_periods']} periods; {len(gliders)} glider records.")
    return trials, gliders


# --- Polar scan ---

def _scan_cell_worker(job: TrialJob) -> dict:
    cell = dict(job.extra)
    log = simulate(job, cell.pop("seed"))
    mask = bound_mask(log, (0, 1), job.horizon)
    start, length = longest_bound_run(mask)
    settle = cell.pop("settle_periods")
    attracted = length > 0 and start <= settle and start + length == job.horizon
    label = BasinLabel.ATTRACTED if attracted else BasinLabel.REPELLED
    return {**cell, "label": label.value, "lifetime": length, "run_start": start}


def run_polar_scan(config: RunConfig, n_jobs: int = 1, out_dir: Optional[Path] = None) -> list[BasinMap]:
    """
    Constant-radius basin scan, one BasinMap per gait phase.

    Robot A sits at the origin with heading 0; robot B is placed at each
    (theta, phi) grid cell. Cells whose initial links overlap are Invalid and
    not simulated. A simulated cell is Attracted when the pair's longest bound
    run starts within the settle window and lasts to the horizon.
    """
    params = config.scenario.parameters
    geometry = config.geometry
    thetas = np.arange(0.0, 360.0, params["theta_step"])
    phis = np.arange(0.0, 360.0, params["phi_step"])
    cfg_hash = config_hash(config)
    seed = config.scenario.seeds[0]

    maps = []
    for phase in params["phases"]:
        program = _program(config.gait, phase0=phase)
        invalid, jobs = [], []
        for theta in thetas:
            for phi in phis:
                heading_b = phi + theta if params["heading_mode"] == "relative" else phi
                template = AttractorTemplate("scan", params["radius_bl"], float(theta), float(heading_b), phase)
                a = initial_state(0.0, 0.0, 0.0, program)
                x, y, heading = pose_from_relative(template.r_bl, template.theta, template.phi,
                                                   geometry.body_length_unit)
                b = initial_state(x, y, heading, program)
                cell = {"phase": phase, "theta": float(theta), "phi": float(phi)}
                if has_overlap([a, b], geometry):
                    logger.debug(f"Scan cell theta={theta:g} phi={phi:g} phase={phase:g} is invalid (initial overlap).")
                    invalid.append({**cell, "label": BasinLabel.INVALID.value, "lifetime": 0, "run_start": 0})
                    continue
                tag = f"scan_p{phase:g}_t{theta:g}_f{phi:g}"
                jobs.append(TrialJob(
                    tag=tag, geometry=geometry, world=config.world, states=[a, b], programs=[program, program],
                    horizon=config.scenario.horizon, samples_per_period=config.output.samples_per_period,
                    config_hash=cfg_hash, log_path=_log_path(config, out_dir, tag),
                    max_log_mb=config.output.max_log_mb,
                    extra={**cell, "seed": seed, "settle_periods": params["settle_periods"]},
                ))
        results = run_jobs(_scan_cell_worker, jobs, n_jobs, desc=f"Polar scan phase {phase:g}")
        cells = pd.DataFrame(invalid + results).sort_values(["theta", "phi"], ignore_index=True)
        basin = BasinMap(phase=phase, radius_bl=params["radius_bl"], cells=cells)
        logger.info(f"Phase {phase:g}: {basin.counts()}")
        maps.append(basin)
    return maps


# --- Amplitude sweep ---

def _sweep_worker(job: TrialJob) -> dict:
    info = dict(job.extra)
    survival = info.pop("survival_periods")
    log = simulate(job, info["seed"])
    mask = bound_mask(log, (0, 1), job.horizon)
    start, length = longest_bound_run(mask)
    row = {**info, "lifetime": length, "run_start": start,
           "bound_at_end": bool(mask[-1]), "bound_throughout": bool(mask.all()),
           "beta": math.nan, "v_com": math.nan, "displacement_w": math.nan}
    msd_rows = []
    if length > survival:
        stats = transport_stats(log, (0, 1), start, start + length, job.geometry.body_width)
        row.update(beta=stats.beta, v_com=stats.v_com, displacement_w=stats.displacement)
        if stats.msd is not None:
            msd_rows = [{"alpha_max": info["alpha_max"], "seed": info["seed"], "theta": info["theta"],
                         "lag": float(lag), "msd": float(value)} for lag, value in zip(stats.msd.lags, stats.msd.msd)]
    return {"trial": row, "msd": msd_rows}


def run_amplitude_sweep(config: RunConfig, n_jobs: int = 1,
                        out_dir: Optional[Path] = None) -> tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    """
    Pair trials on a ring of grid points for every amplitude.

    Returns:
        (per-trial rows, per-amplitude summary, per-trial MSD curves).
        Only trials whose bound run exceeds ``survival_periods`` enter the
        MSD and speed statistics.
    """
    params = config.scenario.parameters
    geometry = config.geometry
    cfg_hash = config_hash(config)
    n = params["grid_points"]
    jobs = []
    skipped = 0
    for alpha in params["amplitudes"]:
        program = _program(config.gait, alpha_max=alpha)
        for seed in config.scenario.seeds:
            for k in range(n):
                theta = 360.0 * k / n
                template = AttractorTemplate("sweep", params["radius_bl"], theta, params["heading_offset"])
                a = initial_state(0.0, 0.0, 0.0, program)
                x, y, heading = pose_from_relative(template.r_bl, theta, template.phi, geometry.body_length_unit)
                b = initial_state(x, y, heading, program)
                if has_overlap([a, b], geometry):
                    skipped += 1
                    logger.debug(f"Sweep point alpha={alpha:g} theta={theta:g} skipped: initial overlap.")
                    continue
                tag = f"sweep_a{alpha:g}_s{seed}_t{theta:g}"
                jobs.append(TrialJob(
                    tag=tag, geometry=geometry, world=config.world, states=[a, b], programs=[program, program],
                    horizon=config.scenario.horizon, samples_per_period=config.output.samples_per_period,
                    config_hash=cfg_hash, log_path=_log_path(config, out_dir, tag),
                    max_log_mb=config.output.max_log_mb,
                    extra={"alpha_max": alpha, "seed": seed, "theta": theta,
                           "direction": program.direction.value, "survival_periods": params["survival_periods"]},
                ))
    if skipped:
        logger.info(f"Skipped {skipped} sweep points with overlapping initial links.")
    if not jobs:
        raise ValueError("Amplitude sweep has no valid trials: every grid point overlaps initially.")
    results = run_jobs(_sweep_worker, jobs, n_jobs, desc="Amplitude sweep")
    trials = pd.DataFrame([r["trial"] for r in results]).sort_values(["alpha_max", "seed", "theta"], ignore_index=True)
    msd = pd.DataFrame([m for r in results for m in r["msd"]], columns=["alpha_max", "seed", "theta", "lag", "msd"])
    return trials, summarize_sweep(trials), msd


def summarize_sweep(trials: pd.DataFrame) -> pd.DataFrame:
    """Binding probabilities, and mean/std of beta and V_com over surviving trials, per amplitude."""
    summary = binding_probability(trials)
    transport = trials.dropna(subset=["beta"]).groupby("alpha_max").agg(
        beta_mean=("beta", "mean"), beta_std=("beta", "std"),
        v_com_mean=("v_com", "mean"), v_com_std=("v_com", "std"), n_msd=("beta", "size"),
    )
    summary = summary.join(transport, how="left")
    summary["n_msd"] = summary["n_msd"].fillna(0).astype(int)
    return summary.reset_index()


# --- Bound-pair relaxation ---

def _relaxation_worker(job: TrialJob) -> dict:
    info = dict(job.extra)
    log = simulate(job, info["seed"])
    obs = pair_observables(log, (0, 1), job.horizon)
    spp = log.samples_per_period
    steady_periods = max(1, int(round(info.pop("steady_fraction") * job.horizon)))
    steady_start = (job.horizon - steady_periods) * spp
    counts = contact_counts(log, (0, 1))[job.horizon - steady_periods:]
    unbound = not obs.bound_mask[-steady_periods:].all()
    return {
        **info,
        "r_steady": float(np.mean(obs.r[steady_start:])),
        "lifetime": obs.lifetime,
        "unbound": unbound,
        "arms_in_contact": float(np.median([c.arms_in_contact for c in counts])),
        "arm_body_fraction": float(np.mean([c.arm_body for c in counts])),
    }


def run_bound_pair_relaxation(config: RunConfig, n_jobs: int = 1,
                              out_dir: Optional[Path] = None) -> tuple[pd.DataFrame, pd.DataFrame]:
    """
    Pairs started on an attractor template, relaxed at each amplitude.

    Returns:
        (per-trial rows, per-amplitude summary with mean steady r and contact counts).
    """
    params = config.scenario.parameters
    template = scenario_template(config, config.geometry, n_jobs=n_jobs, out_dir=out_dir)
    cfg_hash = config_hash(config)
    jobs = []
    for alpha in params["amplitudes"]:
        program = _program(config.gait, alpha_max=alpha)
        for seed in config.scenario.seeds:
            states = place_pair(template, config.geometry, program, program, np.random.default_rng(seed))
            tag = f"relax_a{alpha:g}_s{seed}"
            jobs.append(TrialJob(
                tag=tag, geometry=config.geometry, world=config.world, states=states, programs=[program, program],
                horizon=config.scenario.horizon, samples_per_period=config.output.samples_per_period,
                config_hash=cfg_hash, log_path=_log_path(config, out_dir, tag), max_log_mb=config.output.max_log_mb,
                extra={"alpha_max": alpha, "seed": seed, "steady_fraction": params["steady_fraction"]},
            ))
    results = run_jobs(_relaxation_worker, jobs, n_jobs, desc="Relaxation")
    trials = pd.DataFrame(results).sort_values(["alpha_max", "seed"], ignore_index=True)
    summary = trials.groupby("alpha_max").agg(
        r_mean=("r_steady", "mean"), r_std=("r_steady", "std"), n_unbound=("unbound", "sum"),
        arms_in_contact=("arms_in_contact", "median"), arm_body_fraction=("arm_body_fraction", "mean"),
    ).reset_index()
    for alpha in summary.loc[summary["n_unbound"] > 0, "alpha_max"]:
        logger.warning(f"Pair unbound before steady state at alpha_max = {alpha:g} deg; flagged in the summary.")
    return trials, summary


def contact_transition(summary: pd.DataFrame) -> Optional[float]:
    """Smallest amplitude where a second arm and an arm-body contact appear in most steady cycles."""
    hits = summary[(summary["arms_in_contact"] >= 2) & (summary["arm_body_fraction"] >= 0.5)]
    return None if hits.empty else float(hits["alpha_max"].min())


# --- Feedback ---

def _feedback_setup(config: RunConfig, refine_amplitude: float, n_jobs: int = 1,
                    out_dir: Optional[Path] = None) -> tuple[SmarticleGeometry, AttractorTemplate]:
    params = config.scenario.parameters
    geometry = SmarticleGeometry.from_preset(params["geometry_preset"])
    program = _program(config.gait, alpha_max=refine_amplitude, mode=GaitMode.OPEN_LOOP, impact_band=None)
    return geometry, scenario_template(config, geometry, program, n_jobs, out_dir)


def compression_impulses(log: TrajectoryLog) -> list[float]:
    """Impulses of arm-inner-face against body contacts (the compression collisions of a C2 pair)."""
    impulses = []
    for event in log.events:
        faces = set(event.face_ids)
        if faces & INNER_ARM_FACES and faces & BODY_FACES:
            impulses.append(event.impulse_magnitude)
    return impulses


def _calibration_worker(job: TrialJob) -> dict:
    log = simulate(job, job.extra["seed"])
    return {"seed": job.extra["seed"], "impulses": compression_impulses(log)}


def run_feedback_calibration(config: RunConfig, n_jobs: int = 1,
                             out_dir: Optional[Path] = None) -> tuple[pd.DataFrame, tuple[float, float]]:
    """
    Measures compression-collision impulses of open-loop C2 pairs on the feedback robot.

    Returns:
        (impulse table, calibrated impact band).

    Raises:
        RuntimeError: If no compression collision was observed.
    """
    params = config.scenario.parameters
    geometry, template = _feedback_setup(config, params["amplitude"], n_jobs, out_dir)
    program = replace(config.gait, alpha_max=params["amplitude"], mode=GaitMode.OPEN_LOOP, impact_band=None)
    cfg_hash = config_hash(config)
    jobs = [TrialJob(
        tag=f"calibration_s{seed}", geometry=geometry, world=config.world,
        states=place_pair(template, geometry, program, program, np.random.default_rng(seed)),
        programs=[program, program], horizon=config.scenario.horizon,
        samples_per_period=config.output.samples_per_period, config_hash=cfg_hash,
        log_path=_log_path(config, out_dir, f"calibration_s{seed}"), max_log_mb=config.output.max_log_mb,
        extra={"seed": seed},
    ) for seed in config.scenario.seeds]
    results = run_jobs(_calibration_worker, jobs, n_jobs, desc="Feedback calibration")
    impulses = pd.DataFrame([{"seed": r["seed"], "impulse": i} for r in results for i in r["impulses"]],
                            columns=["seed", "impulse"])
    if impulses.empty:
        raise RuntimeError("Error: No compression collisions observed during calibration. "
                           "Reason: the C2 template pair never pressed an inner arm face against a body.")
    median = float(impulses["impulse"].median())
    band = calibrated_band(median)
    logger.info(f"Median compression impulse {median:.3e} N*s -> impact band [{band[0]:.3e}, {band[1]:.3e}] N*s")
    return impulses, band


def save_calibration(band: tuple[float, float], median: float, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump({"median_impulse": median, "impact_band": [band[0], band[1]]}, f, sort_keys=False)


def load_impact_band(path: Path) -> tuple[float, float]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            low, high = yaml.safe_load(f)["impact_band"]
        return float(low), float(high)
    except (OSError, yaml.YAMLError, KeyError, TypeError, ValueError) as e:
        raise RuntimeError(f"Error: Could not read impact band from '{path}'. Reason: {e}")


def _feedback_worker(job: TrialJob) -> dict:
    info = dict(job.extra)
    log = simulate(job, info["seed"])
    obs = pair_observables(log, (0, 1), job.horizon)
    spp = log.samples_per_period
    trace = obs.r[::spp][:job.horizon]
    return {"trial": {**info, "lifetime": obs.lifetime, "run_start": obs.run_start,
                      "censored": obs.lifetime > 0 and obs.run_start + obs.lifetime >= job.horizon},
            "trace": [{**info, "period": p, "r": float(r)} for p, r in enumerate(trace)]}


def run_feedback_comparison(config: RunConfig, n_jobs: int = 1,
                            out_dir: Optional[Path] = None) -> tuple[pd.DataFrame, pd.DataFrame]:
    """
    Lifetimes and r(t) of C2 pairs, open-loop at each amplitude up to the cutoff and with feedback.

    Returns:
        (lifetime rows, per-period r traces).

    Raises:
        ValueError: If no impact band is available (run FeedbackCalibration first).
    """
    params = config.scenario.parameters
    if params["calibration_file"]:
        band = load_impact_band(Path(params["calibration_file"]))
    elif config.gait.impact_band is not None:
        band = config.gait.impact_band
    else:
        raise ValueError("FeedbackComparison needs an impact band: run the FeedbackCalibration scenario and "
                         "set scenario.parameters.calibration_file, or set gait.impact_band.")
    geometry, template = _feedback_setup(config, min(params["cutoff"], params["feedback_amplitude"]), n_jobs, out_dir)

    conditions = []
    for alpha in params["open_loop_amplitudes"]:
        if alpha > params["cutoff"]:
            logger.warning(f"Open-loop amplitude {alpha:g} deg exceeds the {params['cutoff']:g} deg C2 cutoff; skipped.")
            continue
        conditions.append(("open_loop", replace(config.gait, alpha_max=alpha, mode=GaitMode.OPEN_LOOP, impact_band=None)))
    conditions.append(("feedback", replace(config.gait, alpha_max=params["feedback_amplitude"],
                                           mode=GaitMode.FEEDBACK, impact_band=band)))

    cfg_hash = config_hash(config)
    jobs = []
    for condition, program in conditions:
        for seed in config.scenario.seeds:
            tag = f"feedback_{condition}_a{program.alpha_max:g}_s{seed}"
            jobs.append(TrialJob(
                tag=tag, geometry=geometry, world=config.world,
                states=place_pair(template, geometry, program, program, np.random.default_rng(seed)),
                programs=[program, program], horizon=config.scenario.horizon,
                samples_per_period=config.output.samples_per_period, config_hash=cfg_hash,
                log_path=_log_path(config, out_dir, tag), max_log_mb=config.output.max_log_mb,
                extra={"condition": condition, "alpha_max": program.alpha_max, "seed": seed},
            ))
    results = run_jobs(_feedback_worker, jobs, n_jobs, desc="Feedback comparison")
    lifetimes = pd.DataFrame([r["trial"] for r in results]).sort_values(
        ["condition", "alpha_max", "seed"], ignore_index=True)
    traces = pd.DataFrame([row for r in results for row in r["trace"]])
    return lifetimes, traces


# --- Acceptance metrics ---

def emergence_rate(trials: pd.DataFrame, periods: int = EMERGENCE_LIFETIME_PERIODS) -> float:
    """Fraction of Cloud7 trials whose longest-lived pair reached ``periods``."""
    if trials.empty:
        return math.nan
    return float((trials["max_lifetime"] >= periods).mean())


def glider_travel(gliders: pd.DataFrame, periods: int = EMERGENCE_LIFETIME_PERIODS) -> tuple[float, float, int]:
    """Mean and standard error of travel (W) of gliders lasting at least ``periods``."""
    long_lived = gliders.loc[gliders["lifetime"] >= periods, "displacement_w"]
    n = len(long_lived)
    if n == 0:
        return math.nan, math.nan, 0
    se = float(long_lived.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return float(long_lived.mean()), se, n


def lifetime_ordering(gliders: pd.DataFrame) -> dict:
    """Median lifetimes per class and the number of censored C1 gliders."""
    c1 = gliders[gliders["class"] == DyadClass.C1.value]
    c2 = gliders[gliders["class"] == DyadClass.C2.value]
    return {
        "median_c1": float(c1["lifetime"].median()) if not c1.empty else math.nan,
        "median_c2": float(c2["lifetime"].median()) if not c2.empty else math.nan,
        "c1_censored": int(c1["censored"].sum()) if not c1.empty else 0,
    }


def basin_contrast(cells: pd.DataFrame, band: float = BASIN_CONTRAST_BAND_DEG) -> dict:
    """
    Compares attraction of antiparallel vs parallel headings in the front quadrants.

    Returns:
        Attracted fractions of antiparallel and parallel cells with theta in
        the first or fourth quadrant, their ratio, and the Repelled-or-Invalid
        fraction of the second and third quadrants.
    """
    theta = cells["theta"].to_numpy()
    phi = cells["phi"].to_numpy()
    front = (theta < 90.0) | (theta >= 270.0)
    anti = np.abs(wrap_degrees(phi) - 180.0) < band
    parallel = np.abs(wrap_degrees(phi + 180.0) - 180.0) < band
    attracted = (cells["label"] == BasinLabel.ATTRACTED.value).to_numpy()

    def fraction(mask: np.ndarray) -> float:
        return float(attracted[mask].mean()) if mask.any() else math.nan

    anti_fraction = fraction(front & anti)
    parallel_fraction = fraction(front & parallel)
    if parallel_fraction > 0:
        ratio = anti_fraction / parallel_fraction
    else:
        ratio = math.inf if anti_fraction > 0 else math.nan
    back = ~front
    return {
        "attracted_antiparallel": anti_fraction,
        "attracted_parallel": parallel_fraction,
        "contrast": ratio,
        "back_repelled_or_invalid": float((~attracted[back]).mean()) if back.any() else math.nan,
    }


def relaxation_trend(summary: pd.DataFrame) -> float:
    """Spearman rank correlation of steady-state r against amplitude."""
    if len(summary) < 2:
        return math.nan
    result = spearmanr(summary["alpha_max"], summary["r_mean"])
    return float(result.statistic if hasattr(result, "statistic") else result[0])


def transport_ordering(summary: pd.DataFrame, high: float = 90.0, low: float = 60.0) -> dict:
    """beta and V_com at two amplitudes of a sweep summary."""
    by_alpha = summary.set_index("alpha_max")

    def value(alpha: float, column: str) -> float:
        return float(by_alpha.at[alpha, column]) if alpha in by_alpha.index else math.nan

    return {
        "beta_high": value(high, "beta_mean"), "beta_low": value(low, "beta_mean"),
        "v_com_high": value(high, "v_com_mean"), "v_com_low": value(low, "v_com_mean"),
    }


def feedback_ratio(lifetimes: pd.DataFrame) -> float:
    """
    Median feedback lifetime over the matched open-loop median.

    The open-loop condition matched is the one at the feedback amplitude, or
    the largest open-loop amplitude when that one was not run.
    """
    feedback = lifetimes[lifetimes["condition"] == "feedback"]
    open_loop = lifetimes[lifetimes["condition"] == "open_loop"]
    if feedback.empty or open_loop.empty:
        return math.nan
    alpha = float(feedback["alpha_max"].iloc[0])
    matched = open_loop[open_loop["alpha_max"] == alpha]
    if matched.empty:
        matched = open_loop[open_loop["alpha_max"] == open_loop["alpha_max"].max()]
    base = float(matched["lifetime"].median())
    if base == 0:
        return math.inf
    return float(feedback["lifetime"].median()) / base


# --- Manifest ---

def write_manifest(config: RunConfig, out_dir: Path, outputs: Sequence[Path], metrics: Optional[dict] = None) -> Path:
    """Writes the run manifest (config hash, seeds, versions, outputs, headline metrics)."""
    manifest = {
        "package": PACKAGE_NAME,
        "package_version": PACKAGE_VERSION,
        "log_schema": LOG_SCHEMA_VERSION,
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
        "config_hash": config_hash(config),
        "scenario": config.scenario.kind,
        "seeds": list(config.scenario.seeds),
        "horizon": config.scenario.horizon,
        "config": config_to_dict(config),
        "outputs": sorted(str(p.relative_to(out_dir)) if p.is_relative_to(out_dir) else str(p) for p in outputs),
        "metrics": metrics or {},
    }
    path = out_dir / MANIFEST_FILENAME
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True, default=float)
    except OSError as e:
        raise RuntimeError(f"Error: Could not write manifest '{path}'. Reason: {e}")
    return path
