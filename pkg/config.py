#!/usr/bin/env python3
"""
Run configuration: YAML parsing, validation, serialization and hashing.

A config file has up to five sections (``geometry``, ``world``, ``gait``,
``scenario``, ``output``); only ``scenario.kind`` is required. Every problem
found is reported together, each with the line it occurs on. Angles are in
degrees throughout the file.
"""

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import yaml

from constants import (
    ALPHA_MAX_LIMIT_DEG, C2_CUTOFF_DEG, CLOUD_GAP, CLOUD_HEADING_JITTER_DEG, CLOUD_PACKING_ATTEMPTS,
    CLOUD_POSITION_JITTER, CLOUD_ROBOTS, CLOUD_ROWS, CONFIG_HASH_LENGTH, DEFAULT_ALPHA_MAX_DEG,
    DEFAULT_ARENA_HALF_WIDTH, DEFAULT_DIRECTION, DEFAULT_DT, DEFAULT_GEOMETRY_PRESET, DEFAULT_GROUND_DAMPING,
    DEFAULT_HEADING_NOISE, DEFAULT_HORIZONS, DEFAULT_MAX_LOG_MB, DEFAULT_MOTOR_SPEED_DEG, DEFAULT_MU_GROUND,
    DEFAULT_MU_ROBOT, DEFAULT_OUTPUT_ROOT, DEFAULT_PERIOD, DEFAULT_PHASE0, DEFAULT_RESTITUTION,
    DEFAULT_SAMPLES_PER_PERIOD, DEFAULT_WALLS, EMERGENCE_LIFETIME_PERIODS, FEEDBACK_AMPLITUDE_DEG,
    FEEDBACK_OPEN_LOOP_AMPLITUDES_DEG, GEOMETRY_PRESETS, GLIDER_THRESHOLD_PERIODS, HEADING_MODES,
    OUTPUT_ROOT_ENV, POLAR_SCAN_PHASES, POLAR_SCAN_RADIUS_BL, POLAR_SCAN_STEP_DEG, POSITION_CORRECTION_FACTOR,
    POSITION_SLOP, RELAXATION_AMPLITUDES_DEG, SCENARIO_KINDS, SETTLE_PERIODS, SOLVER_ITERATIONS,
    STEADY_STATE_FRACTION, SWEEP_AMPLITUDES_DEG, SWEEP_GRID_POINTS, SWEEP_HEADING_OFFSET_DEG, SWEEP_RADIUS_BL,
    TEMPLATE_CLASSES, TEMPLATE_REFINE_PERIODS,
)
from dynamics import WorldConfig
from gait import Direction, GaitMode, GaitProgram
from geometry import SmarticleGeometry, check_self_clearance
from logging_config import get_logger, setup_logging

logger = get_logger(__name__)


@dataclass(frozen=True)
class ConfigIssue:
    line: Optional[int]
    key: str
    message: str

    def as_dict(self) -> dict:
        return {"line": self.line, "key": self.key, "message": self.message}


class ConfigError(ValueError):
    """Every problem found in one config text."""

    def __init__(self, issues: list[ConfigIssue]):
        self.issues = issues
        summary = "; ".join(f"line {i.line}: {i.key}: {i.message}" if i.line else f"{i.key}: {i.message}"
                            for i in issues)
        super().__init__(f"{len(issues)} config error(s): {summary}")


@dataclass
class ScenarioSpec:
    kind: str
    seeds: list[int] = field(default_factory=lambda: [0])
    horizon: int = 0
    parameters: dict = field(default_factory=dict)
    templates: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.horizon:
            self.horizon = DEFAULT_HORIZONS.get(self.kind, 1)


@dataclass
class OutputConfig:
    directory: Optional[str] = None
    write_logs: bool = False
    max_log_mb: float = DEFAULT_MAX_LOG_MB
    samples_per_period: int = DEFAULT_SAMPLES_PER_PERIOD
    plots: bool = True


@dataclass
class RunConfig:
    geometry_preset: str
    geometry: SmarticleGeometry
    world: WorldConfig
    gait: GaitProgram
    scenario: ScenarioSpec
    output: OutputConfig


# --- Schema ---
# Each entry: key -> (type name, default, constraint). A constraint returns an
# error message for a bad value or None.

def _positive(v) -> Optional[str]:
    return None if v > 0 else "must be > 0"


def _non_negative(v) -> Optional[str]:
    return None if v >= 0 else "must be >= 0"


def _amplitude(v) -> Optional[str]:
    return None if 0 < v <= ALPHA_MAX_LIMIT_DEG else f"must lie in (0, {ALPHA_MAX_LIMIT_DEG:g}] degrees"


def _amplitudes(values) -> Optional[str]:
    bad = [v for v in values if _amplitude(v)]
    if not values:
        return "must not be empty"
    return f"values {bad} must lie in (0, {ALPHA_MAX_LIMIT_DEG:g}] degrees" if bad else None


def _unit_interval(v) -> Optional[str]:
    return None if 0 <= v < 1 else "must lie in [0, 1)"


def _one_of(options) -> Callable[[Any], Optional[str]]:
    return lambda v: None if v in options else f"must be one of {list(options)}"


_GEOMETRY_KEYS = ("arm_length", "arm_thickness", "body_width", "body_depth", "mass", "body_length_unit")
AMPLITUDE_PARAMETERS = ("amplitudes", "open_loop_amplitudes", "feedback_amplitude", "amplitude")

SCHEMA: dict[str, dict[str, tuple]] = {
    "geometry": {
        "preset": ("str", DEFAULT_GEOMETRY_PRESET, _one_of(GEOMETRY_PRESETS)),
        **{key: ("optional_float", None, _positive) for key in _GEOMETRY_KEYS},
    },
    "world": {
        "dt": ("float", DEFAULT_DT, _positive),
        "mu_ground": ("float", DEFAULT_MU_GROUND, _non_negative),
        "mu_robot": ("float", DEFAULT_MU_ROBOT, _non_negative),
        "restitution": ("float", DEFAULT_RESTITUTION, lambda v: None if v == 0 else "must be 0 (inelastic contacts)"),
        "ground_damping": ("float", DEFAULT_GROUND_DAMPING, _non_negative),
        "arena_half_width": ("float", DEFAULT_ARENA_HALF_WIDTH, _positive),
        "walls": ("bool", DEFAULT_WALLS, None),
        "heading_noise": ("float", DEFAULT_HEADING_NOISE, _non_negative),
        "solver_iterations": ("int", SOLVER_ITERATIONS, _positive),
        "correction_factor": ("float", POSITION_CORRECTION_FACTOR, lambda v: None if 0 <= v <= 1 else "must lie in [0, 1]"),
        "slop": ("float", POSITION_SLOP, _non_negative),
    },
    "gait": {
        "alpha_max": ("float", DEFAULT_ALPHA_MAX_DEG, _amplitude),
        "period": ("float", DEFAULT_PERIOD, _positive),
        "motor_speed": ("float", DEFAULT_MOTOR_SPEED_DEG, _positive),
        "direction": ("str", DEFAULT_DIRECTION, _one_of([d.value for d in Direction])),
        "phase0": ("float", DEFAULT_PHASE0, _unit_interval),
        "mode": ("str", GaitMode.OPEN_LOOP.value, _one_of([m.value for m in GaitMode])),
        "impact_band": ("optional_float_pair", None, None),
    },
    "scenario": {
        "kind": ("str", None, _one_of(SCENARIO_KINDS)),
        "seeds": ("int_list", [0], lambda v: None if v else "must list at least one seed"),
        "horizon": ("int", None, _positive),
        "templates": ("optional_str", None, None),
        "parameters": ("mapping", {}, None),
    },
    "output": {
        "directory": ("optional_str", None, None),
        "write_logs": ("bool", False, None),
        "max_log_mb": ("float", DEFAULT_MAX_LOG_MB, _positive),
        "samples_per_period": ("int", DEFAULT_SAMPLES_PER_PERIOD, _positive),
        "plots": ("bool", True, None),
    },
}

_TEMPLATE = ("str", None, _one_of(TEMPLATE_CLASSES))

PARAMETER_SCHEMA: dict[str, dict[str, tuple]] = {
    "Cloud7": {
        "n_robots": ("int", CLOUD_ROBOTS, _positive),
        "rows": ("int", CLOUD_ROWS, _positive),
        "gap": ("float", CLOUD_GAP, _positive),
        "position_jitter": ("float", CLOUD_POSITION_JITTER, _non_negative),
        "heading_jitter": ("float", CLOUD_HEADING_JITTER_DEG, _non_negative),
        "packing_attempts": ("int", CLOUD_PACKING_ATTEMPTS, _positive),
        "emergence_periods": ("int", EMERGENCE_LIFETIME_PERIODS, _positive),
    },
    "PolarScanConstantR": {
        "radius_bl": ("float", POLAR_SCAN_RADIUS_BL, _positive),
        "phases": ("float_list", list(POLAR_SCAN_PHASES), lambda v: None if v and all(0 <= p < 1 for p in v) else "phases must lie in [0, 1)"),
        "theta_step": ("float", POLAR_SCAN_STEP_DEG, lambda v: None if 0 < v <= 360 else "must lie in (0, 360]"),
        "phi_step": ("float", POLAR_SCAN_STEP_DEG, lambda v: None if 0 < v <= 360 else "must lie in (0, 360]"),
        "heading_mode": ("str", "absolute", _one_of(HEADING_MODES)),
        "settle_periods": ("int", SETTLE_PERIODS, _non_negative),
    },
    "AmplitudeSweep": {
        "amplitudes": ("float_list", list(SWEEP_AMPLITUDES_DEG), _amplitudes),
        "radius_bl": ("float", SWEEP_RADIUS_BL, _positive),
        "grid_points": ("int", SWEEP_GRID_POINTS, _positive),
        "heading_offset": ("float", SWEEP_HEADING_OFFSET_DEG, None),
        "survival_periods": ("int", GLIDER_THRESHOLD_PERIODS, _non_negative),
    },
    "BoundPairRelaxation": {
        "amplitudes": ("float_list", list(RELAXATION_AMPLITUDES_DEG), _amplitudes),
        "template": ("str", "C1", _one_of(TEMPLATE_CLASSES)),
        "steady_fraction": ("float", STEADY_STATE_FRACTION, lambda v: None if 0 < v <= 1 else "must lie in (0, 1]"),
        "refine_periods": ("int", TEMPLATE_REFINE_PERIODS, _non_negative),
    },
    "FeedbackComparison": {
        "open_loop_amplitudes": ("float_list", list(FEEDBACK_OPEN_LOOP_AMPLITUDES_DEG), _amplitudes),
        "feedback_amplitude": ("float", FEEDBACK_AMPLITUDE_DEG, _amplitude),
        "cutoff": ("float", C2_CUTOFF_DEG, _amplitude),
        "geometry_preset": ("str", "feedback", _one_of(GEOMETRY_PRESETS)),
        "template": ("str", "C2", _one_of(TEMPLATE_CLASSES)),
        "calibration_file": ("optional_str", None, None),
        "refine_periods": ("int", TEMPLATE_REFINE_PERIODS, _non_negative),
    },
    "FeedbackCalibration": {
        "amplitude": ("float", FEEDBACK_AMPLITUDE_DEG, _amplitude),
        "geometry_preset": ("str", "feedback", _one_of(GEOMETRY_PRESETS)),
        "template": ("str", "C2", _one_of(TEMPLATE_CLASSES)),
        "refine_periods": ("int", TEMPLATE_REFINE_PERIODS, _non_negative),
    },
}


def _coerce(type_name: str, value: Any) -> tuple[Any, Optional[str]]:
    """Converts a YAML value to the schema type; returns (value, error)."""
    is_number = isinstance(value, (int, float)) and not isinstance(value, bool)
    if type_name == "float":
        return (float(value), None) if is_number else (value, "must be a number")
    if type_name == "optional_float":
        if value is None:
            return None, None
        return (float(value), None) if is_number else (value, "must be a number or null")
    if type_name == "int":
        return (value, None) if isinstance(value, int) and not isinstance(value, bool) else (value, "must be an integer")
    if type_name == "bool":
        return (value, None) if isinstance(value, bool) else (value, "must be true or false")
    if type_name == "str":
        return (value, None) if isinstance(value, str) else (value, "must be a string")
    if type_name == "optional_str":
        return (value, None) if value is None or isinstance(value, str) else (value, "must be a string or null")
    if type_name in ("float_list", "int_list"):
        if not isinstance(value, list):
            return value, "must be a list"
        wanted = int if type_name == "int_list" else (int, float)
        if not all(isinstance(v, wanted) and not isinstance(v, bool) for v in value):
            return value, f"must be a list of {'integers' if type_name == 'int_list' else 'numbers'}"
        return ([int(v) for v in value] if type_name == "int_list" else [float(v) for v in value]), None
    if type_name == "optional_float_pair":
        if value is None:
            return None, None
        if (isinstance(value, list) and len(value) == 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
            return (float(value[0]), float(value[1])), None
        return value, "must be a [low, high] pair of numbers or null"
    if type_name == "mapping":
        return (value, None) if isinstance(value, dict) else (value, "must be a mapping")
    raise ValueError(f"Unknown schema type '{type_name}'")


def _line_map(node: yaml.Node, prefix: tuple = ()) -> dict[tuple, int]:
    """Maps each key path of a composed YAML document to its 1-based line."""
    lines: dict[tuple, int] = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = prefix + (str(key_node.value),)
            lines[path] = key_node.start_mark.line + 1
            lines.update(_line_map(value_node, path))
    return lines


def _validate_section(name: str, data: Any, schema: dict, lines: dict, path: tuple,
                      issues: list[ConfigIssue]) -> dict:
    section_line = lines.get(path)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        issues.append(ConfigIssue(section_line, name, "must be a mapping"))
        return {}
    resolved = {}
    for key in data:
        if key not in schema:
            issues.append(ConfigIssue(lines.get(path + (str(key),), section_line), f"{name}.{key}",
                                      f"unknown key (allowed: {', '.join(schema)})"))
    for key, (type_name, default, constraint) in schema.items():
        if key not in data:
            resolved[key] = list(default) if isinstance(default, (list, tuple)) else (dict(default) if isinstance(default, dict) else default)
            continue
        line = lines.get(path + (key,), section_line)
        value, error = _coerce(type_name, data[key])
        if error is None and constraint is not None and value is not None:
            error = constraint(value)
        if error:
            issues.append(ConfigIssue(line, f"{name}.{key}", f"{error}, got {data[key]!r}"))
            continue
        resolved[key] = value
    return resolved


def parse_config(text: str) -> RunConfig:
    """
    Parses and validates a YAML run config.

    Args:
        text: Config file contents.

    Returns:
        The fully defaulted RunConfig.

    Raises:
        ConfigError: Listing every issue found, each with its line number.
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError([ConfigIssue(mark.line + 1 if mark else None, "<yaml>", f"invalid YAML: {e}")])
    lines = _line_map(root) if root is not None else {}
    issues: list[ConfigIssue] = []

    if not isinstance(data, dict):
        raise ConfigError([ConfigIssue(1, "<root>", "config must be a mapping of sections")])
    for key in data:
        if key not in SCHEMA:
            issues.append(ConfigIssue(lines.get((str(key),)), str(key), f"unknown section (allowed: {', '.join(SCHEMA)})"))
    if "scenario" not in data:
        issues.append(ConfigIssue(None, "scenario", "missing required section"))

    sections = {name: _validate_section(name, data.get(name), schema, lines, (name,), issues)
                for name, schema in SCHEMA.items()}

    scenario = sections["scenario"]
    if "scenario" in data and scenario.get("kind") is None and not any(i.key == "scenario.kind" for i in issues):
        issues.append(ConfigIssue(lines.get(("scenario",)), "scenario.kind", "missing required key"))
    kind = scenario.get("kind")
    parameters = {}
    if kind in PARAMETER_SCHEMA and isinstance(scenario.get("parameters"), dict):
        parameters = _validate_section("scenario.parameters", scenario["parameters"], PARAMETER_SCHEMA[kind],
                                       lines, ("scenario", "parameters"), issues)

    config = None
    if not issues:
        config = _build(sections, parameters, lines, issues)
    if issues:
        raise ConfigError(issues)
    logger.debug(f"Parsed {kind} config with hash {config_hash(config)}")
    return config


def _check_scenario_clearance(geometry: SmarticleGeometry, parameters: dict, lines: dict,
                              issues: list[ConfigIssue]) -> None:
    """Checks the scenario's own amplitudes against the geometry that scenario actually simulates."""
    source = "configured geometry"
    preset = parameters.get("geometry_preset")
    if preset is not None:
        source = f"geometry preset '{preset}'"
        geometry = SmarticleGeometry.from_preset(preset)
    for key in AMPLITUDE_PARAMETERS:
        if key not in parameters:
            continue
        value = parameters[key]
        largest = max(value) if isinstance(value, list) else value
        try:
            check_self_clearance(geometry, math.radians(largest))
        except ValueError as e:
            issues.append(ConfigIssue(lines.get(("scenario", "parameters", key)),
                                      f"scenario.parameters.{key}", f"{e} ({source})"))


def _build(sections: dict, parameters: dict, lines: dict, issues: list[ConfigIssue]) -> Optional[RunConfig]:
    geo = sections["geometry"]
    preset = geo["preset"]
    geometry = world = gait = None
    try:
        geometry = SmarticleGeometry.from_preset(preset, **{k: geo[k] for k in _GEOMETRY_KEYS})
    except ValueError as e:
        issues.append(ConfigIssue(lines.get(("geometry",)), "geometry", str(e)))
    try:
        world = WorldConfig(**sections["world"])
    except ValueError as e:
        issues.append(ConfigIssue(lines.get(("world",)), "world", str(e)))
    try:
        gait = GaitProgram(**sections["gait"])
    except ValueError as e:
        issues.append(ConfigIssue(lines.get(("gait",)), "gait", str(e)))
    if geometry is not None and gait is not None:
        try:
            check_self_clearance(geometry, gait.alpha_max_rad)
        except ValueError as e:
            issues.append(ConfigIssue(lines.get(("gait", "alpha_max")), "gait.alpha_max", str(e)))
    if geometry is not None:
        _check_scenario_clearance(geometry, parameters, lines, issues)
    if issues:
        return None

    sc = sections["scenario"]
    scenario = ScenarioSpec(kind=sc["kind"], seeds=sc["seeds"], horizon=sc["horizon"] or 0,
                            parameters=parameters, templates=sc["templates"])
    return RunConfig(preset, geometry, world, gait, scenario, OutputConfig(**sections["output"]))


def config_to_dict(config: RunConfig) -> dict:
    """Fully defaulted, plain-data view of a config (lists, not tuples; enum values)."""
    g = config.geometry
    gait = config.gait
    return {
        "geometry": {"preset": config.geometry_preset, **{k: getattr(g, k) for k in _GEOMETRY_KEYS}},
        "world": {key: getattr(config.world, key) for key in SCHEMA["world"]},
        "gait": {
            "alpha_max": gait.alpha_max,
            "period": gait.period,
            "motor_speed": gait.motor_speed,
            "direction": gait.direction.value,
            "phase0": gait.phase0,
            "mode": gait.mode.value,
            "impact_band": list(gait.impact_band) if gait.impact_band is not None else None,
        },
        "scenario": {
            "kind": config.scenario.kind,
            "seeds": list(config.scenario.seeds),
            "horizon": config.scenario.horizon,
            "templates": config.scenario.templates,
            "parameters": {k: list(v) if isinstance(v, (list, tuple)) else v
                           for k, v in config.scenario.parameters.items()},
        },
        "output": {key: getattr(config.output, key) for key in SCHEMA["output"]},
    }


def serialize_config(config: RunConfig) -> str:
    """YAML text that parses back to an equal RunConfig."""
    return yaml.safe_dump(config_to_dict(config), sort_keys=False, default_flow_style=None)


def config_hash(config: RunConfig) -> str:
    """
    Short SHA-256 of the config's semantic content.

    Key order and whitespace of the source file do not matter; the output
    directory and plotting switches are not part of the content.
    """
    content = config_to_dict(config)
    content["output"] = {"samples_per_period": config.output.samples_per_period}
    canonical = json.dumps(content, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:CONFIG_HASH_LENGTH]


def load_config(path: Path) -> RunConfig:
    """
    Reads and parses a config file.

    Raises:
        RuntimeError: If the file cannot be read.
        ConfigError: If the content is invalid.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise RuntimeError(f"Error: Could not read config '{path}'. Reason: {e}")
    return parse_config(text)


def resolve_output_dir(config: RunConfig, override: Optional[Path] = None) -> Path:
    """Output directory of a run: CLI override, then the config, then the environment root."""
    if override is not None:
        return override
    if config.output.directory:
        return Path(config.output.directory)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))
    return root / f"{config.scenario.kind.lower()}_{config_hash(config)}"


def main() -> None:
    """Validates config files and prints their hashes."""
    parser = argparse.ArgumentParser(description="Validates smarticle run configs.")
    parser.add_argument("configs", nargs="+", type=Path, help="YAML config files.")
    parser.add_argument("--show", action="store_true", help="Print the fully defaulted config.")
    args = parser.parse_args()
    setup_logging()

    failed = False
    for path in args.configs:
        try:
            config = load_config(path)
        except (RuntimeError, ConfigError) as e:
            logger.error(f"{path}: {e}")
            failed = True
            continue
        logger.info(f"{path}: {config.scenario.kind}, hash {config_hash(config)}")
        if args.show:
            print(serialize_config(config))
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
