"""
Constants and configuration values for the smarticle glider simulator.

This module centralizes all hardcoded values used throughout the simulator,
the analysis layer and the scenario runners, making it easier to maintain and
modify configuration. Lengths are metres, masses kilograms, times seconds.
Angles are radians internally; every value whose name ends in ``_DEG`` is in
degrees, matching config files and CSV exports.
"""

# --- Schema / Build Identifiers ---
PACKAGE_NAME = "smarticle-gliders"
PACKAGE_VERSION = "0.3.0"
LOG_SCHEMA_VERSION = "1.0"
LOG_MAGIC = "#SMARTICLE-LOG"
CONFIG_HASH_LENGTH = 16  # hex digits of the sha256 kept in headers

# --- Geometry Presets ---
# Main robot: l = 5.0 cm arms, 0.3 cm thick, body 5.4 x 2.2 cm, 34.8 g.
GEOMETRY_PRESETS = {
    "main": {
        "arm_length": 0.050,
        "arm_thickness": 0.003,
        "body_width": 0.054,
        "body_depth": 0.022,
        "mass": 0.0348,
    },
    # Scaled-up robot carrying force sensors on its arm faces.
    "feedback": {
        "arm_length": 0.060,
        "arm_thickness": 0.007,
        "body_width": 0.065,
        "body_depth": 0.035,
        "mass": 0.175,
    },
}
DEFAULT_GEOMETRY_PRESET = "main"

# --- World / Solver Defaults ---
GRAVITY = 9.81  # m/s^2, only enters the ground normal load
DEFAULT_DT = 1e-3
DEFAULT_MU_GROUND = 0.30
DEFAULT_MU_ROBOT = 0.40
DEFAULT_RESTITUTION = 0.0
DEFAULT_GROUND_DAMPING = 0.0  # 1/s
DEFAULT_ARENA_HALF_WIDTH = 0.30  # 60 x 60 cm plate
DEFAULT_WALLS = False
DEFAULT_HEADING_NOISE = 0.0  # rad / sqrt(s)
SOLVER_ITERATIONS = 16
POSITION_CORRECTION_FACTOR = 0.2
POSITION_SLOP = 1e-4  # 0.1 mm
PENETRATION_CAP_FRACTION = 0.045  # of arm thickness; deeper overlap is removed in one correction pass
FRICTION_SLIP_SCALE = 1e-3  # tanh regularization, 1 mm/s
GROUND_FRICTION_ITERATIONS = 4
NONCONVERGENCE_TOLERANCE = 1e-6  # m/s of residual approach speed
# Fraction of the body mass carried by the two arms (split evenly).
ARM_MASS_FRACTION = 0.2

# --- Gait Defaults ---
DEFAULT_ALPHA_MAX_DEG = 90.0
DEFAULT_PERIOD = 1.6
DEFAULT_MOTOR_SPEED_DEG = 600.0
DEFAULT_DIRECTION = "CCW"
DEFAULT_PHASE0 = 0.0
ALPHA_MAX_LIMIT_DEG = 90.0

# --- Logging / Sampling ---
DEFAULT_SAMPLES_PER_PERIOD = 100

# --- Observables ---
GLIDER_THRESHOLD_PERIODS = 30
EMERGENCE_LIFETIME_PERIODS = 100
PHI_BAND_HALF_WIDTH_DEG = 60.0
BOUND_GRACE_PERIODS = 0
DELTA_R_MAD_K = 5.0
MSD_SKIP_LEADING_LAGS = 2
MSD_TAIL_FRACTION = 0.10
MIN_MSD_CYCLES = 30
MIN_CLASSIFY_PERIODS = 3
MIN_BINDING_TRIALS = 20
STEADY_STATE_FRACTION = 0.20
SETTLE_PERIODS = 2

# --- Scenario Defaults ---
SCENARIO_KINDS = (
    "Cloud7",
    "PolarScanConstantR",
    "AmplitudeSweep",
    "BoundPairRelaxation",
    "FeedbackComparison",
    "FeedbackCalibration",
)
SCAN_KINDS = ("PolarScanConstantR", "AmplitudeSweep")
CLOUD_ROBOTS = 7
CLOUD_ROWS = 2
CLOUD_GAP = 1e-3
CLOUD_POSITION_JITTER = 2e-3
CLOUD_HEADING_JITTER_DEG = 3.0
CLOUD_PACKING_ATTEMPTS = 50
DEFAULT_HORIZON = 300
POLAR_SCAN_RADIUS_BL = 1.3
POLAR_SCAN_PHASES = (0.0, 0.25)
POLAR_SCAN_STEP_DEG = 15.0
POLAR_SCAN_HORIZON = 75
SWEEP_AMPLITUDES_DEG = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0)
SWEEP_RADIUS_BL = 1.0
SWEEP_GRID_POINTS = 21
SWEEP_HEADING_OFFSET_DEG = 180.0
SWEEP_HORIZON = 150
RELAXATION_AMPLITUDES_DEG = (45.0, 55.0, 65.0, 75.0, 80.0, 85.0, 88.0, 90.0)
RELAXATION_HORIZON = 100
FEEDBACK_OPEN_LOOP_AMPLITUDES_DEG = (50.0, 60.0, 70.0)
FEEDBACK_AMPLITUDE_DEG = 70.0
FEEDBACK_HORIZON = 300
C2_CUTOFF_DEG = 70.0
IMPACT_BAND_FRACTIONS = (0.5, 1.5)
TEMPLATE_JITTER_POSITION = 1e-3
TEMPLATE_JITTER_HEADING_DEG = 2.0
TEMPLATE_REFINE_PERIODS = 10  # short bound-run check before a template seeds a scenario
TEMPLATE_REFINE_OFFSETS_DEG = (-15.0, 0.0, 15.0)  # theta and phi perturbations tried
TEMPLATE_SNUG_R_BL = 0.5  # start radius of the pushed-out, touching candidates

# --- File Names ---
TEMPLATES_FILENAME = "attractors.yaml"
REFINED_TEMPLATES_FILENAME = "attractors_refined.yaml"
MANIFEST_FILENAME = "manifest.json"
PERIOD_CSV_FILENAME = "pair_periods.csv"
TRIAL_SUMMARY_CSV_FILENAME = "trial_summary.csv"
GLIDERS_CSV_FILENAME = "gliders.csv"
BASIN_CSV_FILENAME = "basin_map.csv"
SWEEP_TRIALS_CSV_FILENAME = "sweep_trials.csv"
SWEEP_SUMMARY_CSV_FILENAME = "sweep_summary.csv"
SWEEP_MSD_CSV_FILENAME = "sweep_msd.csv"
RELAXATION_CSV_FILENAME = "relaxation.csv"
FEEDBACK_LIFETIMES_CSV_FILENAME = "feedback_lifetimes.csv"
FEEDBACK_TRACES_CSV_FILENAME = "feedback_traces.csv"
CALIBRATION_CSV_FILENAME = "calibration_impulses.csv"
CYCLE_CSV_FILENAME = "cycle_projection.csv"

# --- Directory Names ---
DIR_CONFIGS = "configs"
DIR_TEMPLATES = "templates"
DIR_LOGS = "logs"
DIR_TABLES = "pair_tables"
DIR_PLOTS = "plots"
DEFAULT_OUTPUT_ROOT = "runs"
OUTPUT_ROOT_ENV = "SMARTICLE_OUTPUT_ROOT"
DEFAULT_MAX_LOG_MB = 50.0

# --- Plot Colours (basin labels) ---
LABEL_COLOURS = {
    "Attracted": "#f4a6c8",  # pink
    "Repelled": "#5b8fd9",  # blue
    "Invalid": "#000000",  # black
}

# --- Scenario Horizons (gait periods) ---
CALIBRATION_HORIZON = 20
DEFAULT_HORIZONS = {
    "Cloud7": DEFAULT_HORIZON,
    "PolarScanConstantR": POLAR_SCAN_HORIZON,
    "AmplitudeSweep": SWEEP_HORIZON,
    "BoundPairRelaxation": RELAXATION_HORIZON,
    "FeedbackComparison": FEEDBACK_HORIZON,
    "FeedbackCalibration": CALIBRATION_HORIZON,
}
HEADING_MODES = ("absolute", "relative")
TEMPLATE_CLASSES = ("C1", "C2")

# --- Placement ---
SEPARATION_STEP_BL = 0.02  # outward nudge when a template pose overlaps
SEPARATION_ATTEMPTS = 50
BASIN_CONTRAST_BAND_DEG = 45.0
CALIBRATION_FILENAME = "calibration.yaml"
LOG_BYTES_PER_RECORD = 110  # rough size of one state line, for the log size gate
