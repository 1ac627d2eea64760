import json
import math

import numpy as np
import pandas as pd
import pytest

import experiments
from config import config_hash, parse_config
from conftest import build_log, contact_in_period
from experiments import (
    AttractorTemplate, BasinLabel, BasinMap, PackingError, basin_contrast, clear_radius, compression_impulses,
    contact_transition, default_templates_path, emergence_rate, extract_attractor_templates, feedback_ratio,
    glider_travel, has_overlap, lifetime_ordering, load_impact_band, load_templates, pack_cluster, place_pair,
    pose_from_relative, refine_template, relaxation_trend, run_amplitude_sweep, run_bound_pair_relaxation,
    run_cloud7, run_feedback_calibration, run_feedback_comparison, run_jobs, run_polar_scan, save_calibration,
    save_templates, scenario_template, summarize_sweep, template_candidates, transport_ordering, write_manifest,
)
from constants import SETTLE_PERIODS
from dynamics import World, WorldConfig, run_trial
from gait import GaitProgram, calibrated_band
from geometry import Face
from observables import pair_observables, relative_coords


def test_pose_from_relative_places_b_in_a_frame():
    x, y, heading = pose_from_relative(1.0, 90.0, 180.0, 0.054)
    assert (x, y) == pytest.approx((0.0, 0.054), abs=1e-15)
    assert heading == pytest.approx(math.pi)
    r, theta, phi = relative_coords((0.0, 0.0, 0.0), (x, y, heading), 0.054)
    assert (r, theta, phi) == pytest.approx((1.0, 90.0, 180.0))


def test_packed_cluster_is_clear_and_seeded(geometry):
    program = GaitProgram()
    first = pack_cluster(geometry, program, 7, 2, 1e-3, 2e-3, 3.0, 50, np.random.default_rng(4))
    second = pack_cluster(geometry, program, 7, 2, 1e-3, 2e-3, 3.0, 50, np.random.default_rng(4))
    assert len(first) == 7
    assert not has_overlap(first, geometry)
    assert [s.position for s in first] == [s.position for s in second]
    assert all(s.alpha1 == pytest.approx(program.alpha_max_rad) for s in first)


def test_packing_without_room_fails(geometry):
    with pytest.raises(PackingError):
        pack_cluster(geometry, GaitProgram(), 2, 1, -0.05, 0.0, 0.0, 3, np.random.default_rng(0))


def test_place_pair_matches_template(geometry):
    template = load_templates(default_templates_path())["C1"]
    program = GaitProgram(alpha_max=template.alpha_max)
    a, b = place_pair(template, geometry, program, program)
    assert not has_overlap([a, b], geometry)
    r, theta, phi = relative_coords(a, b, geometry.body_length_unit)
    assert r >= template.r_bl - 1e-12
    assert theta == pytest.approx(template.theta)
    assert phi == pytest.approx(template.phi)


def test_place_pair_pushes_overlapping_templates_out(geometry):
    program = GaitProgram()
    a, b = place_pair(AttractorTemplate("tight", 0.2, 0.0, 180.0), geometry, program, program)
    assert not has_overlap([a, b], geometry)
    assert relative_coords(a, b, geometry.body_length_unit)[0] > 0.2


def test_templates_save_and_load(tmp_path):
    templates = {
        "C1": AttractorTemplate("C1", 1.2, 20.0, 180.0),
        "C2": AttractorTemplate("C2", 1.1, 90.0, 0.0, alpha_max=70.0, source="Cloud7 seed 3 pair 0-4",
                                config_hash="0123456789abcdef"),
    }
    path = tmp_path / "nested" / "attractors.yaml"
    save_templates(templates, path)
    assert load_templates(path) == templates
    with pytest.raises(RuntimeError):
        load_templates(tmp_path / "missing.yaml")


def test_extract_templates_picks_longest_glider_per_class():
    gliders = pd.DataFrame([
        {"class": "C1", "lifetime": 40, "r0": 1.3, "theta0": 10.0, "phi0": 170.0, "alpha_max": 90.0,
         "seed": 1, "robot_a": 0, "robot_b": 2},
        {"class": "C1", "lifetime": 120, "r0": 1.2, "theta0": 25.0, "phi0": 185.0, "alpha_max": 90.0,
         "seed": 4, "robot_a": 3, "robot_b": 5},
        {"class": "Unbound", "lifetime": 300, "r0": 2.0, "theta0": 0.0, "phi0": 90.0, "alpha_max": 90.0,
         "seed": 0, "robot_a": 0, "robot_b": 1},
    ])
    templates = extract_attractor_templates(gliders, "0123456789abcdef")
    assert set(templates) == {"C1"}
    assert templates["C1"].theta == 25.0
    assert templates["C1"].source == "Cloud7 seed 4 pair 3-5"
    assert templates["C1"].config_hash == "0123456789abcdef"


def test_compression_impulses_select_inner_arm_on_body():
    events = [
        contact_in_period(0, faces=(Face.ARM_INNER_L, Face.BODY_FRONT), impulse=2e-3),
        contact_in_period(1, faces=(Face.BODY_BACK, Face.ARM_INNER_R), impulse=4e-3),
        contact_in_period(2, faces=(Face.ARM_OUTER_L, Face.BODY_FRONT), impulse=9e-3),
        contact_in_period(3, faces=(Face.ARM_INNER_L, Face.ARM_INNER_R), impulse=9e-3),
    ]
    log = build_log(np.zeros((40, 2, 5)), events=events)
    assert compression_impulses(log) == [2e-3, 4e-3]


def test_calibration_file_round_trip(tmp_path):
    path = tmp_path / "calibration.yaml"
    save_calibration((1e-3, 3e-3), 2e-3, path)
    assert load_impact_band(path) == (1e-3, 3e-3)
    path.write_text("median_impulse: 1\n", encoding="utf-8")
    with pytest.raises(RuntimeError):
        load_impact_band(path)


def test_run_jobs_keeps_job_order():
    assert run_jobs(abs, [-3, 1, -2]) == [3, 1, 2]


# --- acceptance metrics ---

def test_emergence_rate_and_travel():
    trials = pd.DataFrame({"max_lifetime": [150, 20, 100, 0]})
    assert emergence_rate(trials) == 0.5
    assert math.isnan(emergence_rate(trials.iloc[0:0]))
    gliders = pd.DataFrame({"lifetime": [100, 200, 50], "displacement_w": [2.0, 4.0, 100.0]})
    mean, se, n = glider_travel(gliders)
    assert (mean, n) == (3.0, 2)
    assert se == pytest.approx(1.0)


def test_lifetime_ordering_counts_censored_c1():
    gliders = pd.DataFrame({
        "class": ["C1", "C1", "C1", "C2", "C2"],
        "lifetime": [300, 250, 300, 40, 60],
        "censored": [True, False, True, False, False],
    })
    ordering = lifetime_ordering(gliders)
    assert ordering == {"median_c1": 300.0, "median_c2": 50.0, "c1_censored": 2}


def test_basin_contrast_quadrants():
    cells = pd.DataFrame({
        "theta": [0.0, 0.0, 300.0, 180.0, 120.0],
        "phi": [180.0, 0.0, 350.0, 180.0, 0.0],
        "label": ["Attracted", "Repelled", "Repelled", "Invalid", "Repelled"],
    })
    contrast = basin_contrast(cells)
    assert contrast["attracted_antiparallel"] == 1.0
    assert contrast["attracted_parallel"] == 0.0
    assert contrast["contrast"] == math.inf
    assert contrast["back_repelled_or_invalid"] == 1.0


def test_basin_map_counts_every_label():
    cells = pd.DataFrame({"theta": [0.0, 15.0], "phi": [0.0, 0.0], "label": ["Attracted", "Attracted"]})
    assert BasinMap(0.0, 1.3, cells).counts() == {"Attracted": 2, "Repelled": 0, "Invalid": 0}


def test_relaxation_trend_and_contact_transition():
    summary = pd.DataFrame({
        "alpha_max": [45.0, 65.0, 80.0, 90.0],
        "r_mean": [1.05, 1.10, 1.20, 1.25],
        "arms_in_contact": [1.0, 1.0, 2.0, 2.0],
        "arm_body_fraction": [0.0, 0.6, 0.7, 0.9],
    })
    assert relaxation_trend(summary) == pytest.approx(1.0)
    assert contact_transition(summary) == 80.0
    assert contact_transition(summary.iloc[:2]) is None


def test_sweep_summary_and_transport_ordering():
    rows = []
    for alpha, bound, beta in ((60.0, True, 1.2), (90.0, False, 1.8)):
        for seed in range(20):
            rows.append({"alpha_max": alpha, "seed": seed, "bound_at_end": bound, "bound_throughout": bound,
                         "beta": beta if seed < 5 else math.nan, "v_com": 0.01 * alpha / 60.0})
    summary = summarize_sweep(pd.DataFrame(rows))
    assert list(summary["alpha_max"]) == [60.0, 90.0]
    assert list(summary["n_msd"]) == [5, 5]
    assert list(summary["p_bound_at_end"]) == [1.0, 0.0]
    ordering = transport_ordering(summary)
    assert ordering["beta_high"] == pytest.approx(1.8)
    assert ordering["beta_low"] == pytest.approx(1.2)
    assert ordering["v_com_high"] > ordering["v_com_low"]


def test_feedback_ratio_uses_matching_amplitude():
    lifetimes = pd.DataFrame({
        "condition": ["open_loop"] * 4 + ["feedback"] * 2,
        "alpha_max": [50.0, 50.0, 70.0, 70.0, 70.0, 70.0],
        "lifetime": [5, 5, 10, 30, 60, 80],
    })
    assert feedback_ratio(lifetimes) == pytest.approx(3.5)
    assert math.isnan(feedback_ratio(lifetimes[lifetimes["condition"] == "feedback"]))


def test_manifest_records_hash_and_outputs(tmp_path):
    config = parse_config("scenario:\n  kind: Cloud7\n  seeds: [3, 4]\n")
    out = tmp_path / "run"
    path = write_manifest(config, out, [out / "trial_summary.csv"], {"emergence_rate": 0.5})
    manifest = json.loads(path.read_text(encoding="utf-8"))
    assert manifest["seeds"] == [3, 4]
    assert manifest["outputs"] == ["trial_summary.csv"]
    assert manifest["metrics"] == {"emergence_rate": 0.5}
    assert manifest["log_schema"] == "1.0"
    assert len(manifest["config_hash"]) == 16


# --- scenario runners ---

@pytest.mark.slow
def test_lonely_robot_never_forms_a_glider(tmp_path):
    config = parse_config(
        "scenario:\n  kind: Cloud7\n  seeds: [0]\n  horizon: 2\n"
        "  parameters:\n    n_robots: 1\n    rows: 1\n"
        "output:\n  samples_per_period: 10\n  write_logs: true\n"
    )
    trials, gliders = run_cloud7(config, out_dir=tmp_path)
    assert gliders.empty
    assert trials.loc[0, "max_lifetime"] == 0
    assert not trials.loc[0, "emerged"]
    assert (tmp_path / "logs" / "cloud7_seed0.log").is_file()


@pytest.mark.slow
def test_polar_scan_labels_every_cell():
    config = parse_config(
        "scenario:\n  kind: PolarScanConstantR\n  horizon: 1\n"
        "  parameters:\n    phases: [0.0]\n    theta_step: 180\n    phi_step: 180\n    settle_periods: 0\n"
        "output:\n  samples_per_period: 10\n"
    )
    (basin,) = run_polar_scan(config)
    assert len(basin.cells) == 4
    assert set(basin.cells["label"]) <= {label.value for label in BasinLabel}
    assert sum(basin.counts().values()) == 4


# --- template refinement ---

def test_template_candidates_start_with_the_template():
    template = AttractorTemplate("C1", 1.2, 20.0, 180.0)
    candidates = template_candidates(template)
    assert candidates[0] == template
    assert len(candidates) == 18
    assert len(set(candidates)) == 18
    assert {c.r_bl for c in candidates} == {1.2, 0.5}
    assert {c.theta for c in candidates} == {5.0, 20.0, 35.0}


def _scripted_refinement(monkeypatch, lifetimes: dict[int, int]):
    def fake_run_jobs(worker, jobs, n_jobs=1, desc=""):
        results = []
        for job in jobs:
            index = job.extra["index"]
            lifetime = lifetimes.get(index, 0)
            results.append({"index": index, "lifetime": lifetime, "displacement_w": 0.1 * index if lifetime else 0.0,
                            "class": "C1"})
        return results

    monkeypatch.setattr(experiments, "run_jobs", fake_run_jobs)


def test_refinement_keeps_the_longest_bound_candidate(monkeypatch, geometry):
    _scripted_refinement(monkeypatch, {3: 6, 5: 6, 7: 2})
    template = AttractorTemplate("C1", 1.2, 20.0, 180.0, alpha_max=80.0)
    program = GaitProgram(alpha_max=90.0)
    refinement = refine_template(template, geometry, program, WorldConfig(), periods=8)
    assert refinement.lifetime == 6
    # Equal lifetimes and classes: the larger displacement (later index) wins.
    assert refinement.displacement_w == pytest.approx(0.5)
    assert refinement.template.alpha_max == 90.0
    a, b = place_pair(refinement.template, geometry, program, program)
    assert not has_overlap([a, b], geometry)
    assert relative_coords(a, b, geometry.body_length_unit)[0] == pytest.approx(refinement.template.r_bl)


def test_refinement_without_binding_returns_the_placed_template(monkeypatch, geometry):
    _scripted_refinement(monkeypatch, {})
    template = AttractorTemplate("C1", 0.2, 0.0, 180.0)
    program = GaitProgram()
    refinement = refine_template(template, geometry, program, WorldConfig(), periods=4)
    assert refinement.lifetime == 0
    assert (refinement.template.theta, refinement.template.phi) == (0.0, 180.0)
    assert refinement.template.r_bl == clear_radius(template, geometry, program, program)
    assert refinement.template.r_bl > 0.2


def test_refinement_can_be_switched_off(tmp_path):
    config = parse_config("scenario:\n  kind: BoundPairRelaxation\n  parameters:\n    refine_periods: 0\n")
    assert scenario_template(config, config.geometry, out_dir=tmp_path) == load_templates(default_templates_path())["C1"]
    assert not (tmp_path / "attractors_refined.yaml").exists()


@pytest.mark.slow
def test_refined_c1_template_stays_bound_and_travels(geometry):
    template = load_templates(default_templates_path())["C1"]
    program = GaitProgram(alpha_max=90.0)
    refinement = refine_template(template, geometry, program, WorldConfig(), periods=5, samples_per_period=10)
    assert refinement.lifetime >= 3
    assert refinement.displacement_w > 0.0

    world = World(place_pair(refinement.template, geometry, program, program), geometry, WorldConfig())
    log = run_trial(world, [program, program], 5, samples_per_period=10)
    obs = pair_observables(log, (0, 1), 5)
    assert obs.run_start <= SETTLE_PERIODS
    assert obs.lifetime == refinement.lifetime


# --- scenario runners at small horizons ---

@pytest.mark.slow
def test_amplitude_sweep_tables():
    config = parse_config(
        "scenario:\n  kind: AmplitudeSweep\n  horizon: 2\n  seeds: [0]\n"
        "  parameters:\n    amplitudes: [60, 90]\n    radius_bl: 3.0\n    grid_points: 2\n"
        "output:\n  samples_per_period: 10\n"
    )
    trials, summary, msd = run_amplitude_sweep(config)
    assert len(trials) == 4
    assert list(trials["alpha_max"]) == [60.0, 60.0, 90.0, 90.0]
    assert list(trials["theta"]) == [0.0, 180.0, 0.0, 180.0]
    assert {"lifetime", "run_start", "bound_at_end", "bound_throughout", "beta", "v_com"} <= set(trials.columns)
    assert list(summary["alpha_max"]) == [60.0, 90.0]
    assert list(summary["n_trials"]) == [2, 2]
    assert ((summary["p_bound_at_end"] >= 0.0) & (summary["p_bound_at_end"] <= 1.0)).all()
    assert list(msd.columns) == ["alpha_max", "seed", "theta", "lag", "msd"]


@pytest.mark.slow
def test_bound_pair_relaxation_tables(tmp_path):
    config = parse_config(
        "scenario:\n  kind: BoundPairRelaxation\n  horizon: 2\n  seeds: [0, 1]\n"
        "  parameters:\n    amplitudes: [60, 90]\n    refine_periods: 1\n"
        "output:\n  samples_per_period: 10\n"
    )
    trials, summary = run_bound_pair_relaxation(config, out_dir=tmp_path)
    assert len(trials) == 4
    assert list(trials["alpha_max"]) == [60.0, 60.0, 90.0, 90.0]
    assert (trials["r_steady"] > 0.0).all()
    assert list(summary.columns) == ["alpha_max", "r_mean", "r_std", "n_unbound", "arms_in_contact",
                                     "arm_body_fraction"]
    assert list(summary["alpha_max"]) == [60.0, 90.0]
    refined = load_templates(tmp_path / "attractors_refined.yaml")["C1"]
    assert refined.config_hash == config_hash(config)
    assert refined.alpha_max == 90.0


@pytest.mark.slow
def test_feedback_calibration_reports_a_band_or_no_compression():
    config = parse_config(
        "scenario:\n  kind: FeedbackCalibration\n  horizon: 2\n  seeds: [0]\n"
        "  parameters:\n    refine_periods: 0\n"
        "output:\n  samples_per_period: 10\n"
    )
    try:
        impulses, band = run_feedback_calibration(config)
    except RuntimeError as e:
        assert "No compression collisions" in str(e)
        return
    assert list(impulses.columns) == ["seed", "impulse"]
    assert (impulses["impulse"] > 0.0).all()
    assert band == pytest.approx(calibrated_band(float(impulses["impulse"].median())))
    assert 0.0 <= band[0] < band[1]


@pytest.mark.slow
def test_feedback_comparison_tables(tmp_path):
    calibration = tmp_path / "calibration.yaml"
    save_calibration((1e-4, 1e-2), 5e-3, calibration)
    config = parse_config(
        "scenario:\n  kind: FeedbackComparison\n  horizon: 2\n  seeds: [0, 1]\n"
        "  parameters:\n    open_loop_amplitudes: [50, 80]\n    cutoff: 70\n    feedback_amplitude: 70\n"
        f"    refine_periods: 0\n    calibration_file: {calibration.as_posix()}\n"
        "output:\n  samples_per_period: 10\n"
    )
    lifetimes, traces = run_feedback_comparison(config)
    # 80 deg is above the cutoff and is skipped.
    assert list(lifetimes["condition"]) == ["feedback", "feedback", "open_loop", "open_loop"]
    assert list(lifetimes["alpha_max"]) == [70.0, 70.0, 50.0, 50.0]
    assert list(lifetimes.columns) == ["condition", "alpha_max", "seed", "lifetime", "run_start", "censored"]
    assert len(traces) == 8
    assert sorted(traces["period"].unique()) == [0, 1]
    assert (traces["r"] > 0.0).all()


def test_feedback_comparison_needs_a_band():
    config = parse_config("scenario:\n  kind: FeedbackComparison\n  parameters:\n    refine_periods: 0\n")
    with pytest.raises(ValueError, match="impact band"):
        run_feedback_comparison(config)
