import dataclasses
import math

import numpy as np
import pandas as pd
import pytest

from conftest import build_log, contact_in_period
from geometry import Face
from observables import (
    DyadClass, analyze_logs, binding_probability, bound_and_lifetime, classify_dyad, classify_phi, com_speed, com_track,
    contact_counts, delta_r_series, longest_bound_run, msd_and_beta, pair_observables, relative_coords,
    stepping_vector, transport_projection,
)
from trajectory_log import write_log

BL = 0.054


def _moving_pair(n_samples: int = 21, spp: int = 10, step=(0.001, 0.0)) -> np.ndarray:
    states = np.zeros((n_samples, 2, 5))
    k = np.arange(n_samples)[:, None]
    states[:, 0, :2] = k * np.array(step)
    states[:, 1, :2] = k * np.array(step) + np.array([BL, 0.0])
    return states


# --- relative coordinates ---

def test_robot_ahead_along_normal_sits_at_theta_zero():
    r, theta, phi = relative_coords((0.0, 0.0, 0.0), (BL, 0.0, 0.0), BL)
    assert r == pytest.approx(1.0)
    assert theta == pytest.approx(0.0)
    assert phi == 0.0


def test_phi_wraps_into_one_turn():
    _, _, phi = relative_coords((0.0, 0.0, 0.0), (BL, 0.0, math.radians(370.0)), BL)
    assert phi == pytest.approx(10.0)
    _, _, phi = relative_coords((0.0, 0.0, math.radians(30.0)), (BL, 0.0, math.radians(20.0)), BL)
    assert phi == pytest.approx(350.0)


def test_coincident_positions_leave_theta_undefined():
    r, theta, _ = relative_coords((0.1, 0.1, 0.0), (0.1, 0.1, 1.0), BL)
    assert r == 0.0
    assert math.isnan(theta)


def test_relative_coords_ignore_rigid_motions():
    rng = np.random.default_rng(8)
    for _ in range(50):
        a = rng.uniform(-0.2, 0.2, 3)
        b = rng.uniform(-0.2, 0.2, 3)
        turn, shift = rng.uniform(0, 2 * math.pi), rng.uniform(-1, 1, 2)
        c, s = math.cos(turn), math.sin(turn)

        def move(p):
            return (c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1], p[2] + turn)

        before = relative_coords(a, b, BL)
        after = relative_coords(move(a), move(b), BL)
        assert after[0] == pytest.approx(before[0], rel=1e-9)
        for x, y in zip(before[1:], after[1:]):
            assert math.cos(math.radians(x - y)) == pytest.approx(1.0, abs=1e-9)


def test_swapping_labels_mirrors_phi():
    a, b = (0.0, 0.0, 0.2), (0.03, 0.01, 1.4)
    _, _, phi_ab = relative_coords(a, b, BL)
    _, _, phi_ba = relative_coords(b, a, BL)
    assert phi_ba == pytest.approx(360.0 - phi_ab)


# --- classification and lifetimes ---

@pytest.mark.parametrize("phi, expected", [
    (178.0, DyadClass.C1), (355.0, DyadClass.C2), (10.0, DyadClass.C2), (90.0, DyadClass.UNBOUND),
    (math.nan, DyadClass.UNBOUND),
])
def test_classify_phi_bands(phi, expected):
    assert classify_phi(phi) is expected


def test_classify_dyad_needs_three_periods():
    with pytest.raises(ValueError):
        classify_dyad(np.zeros(20), np.ones(2, dtype=bool))


def test_classify_dyad_averages_bound_periods_only():
    phi = np.concatenate([np.full(10, 180.0), np.full(10, 0.0), np.full(10, 0.0)])
    assert classify_dyad(phi, np.array([True, False, False])) is DyadClass.C1
    assert classify_dyad(phi, np.zeros(3, dtype=bool)) is DyadClass.UNBOUND


def test_never_contacting_pair_has_zero_lifetime(static_pair_states):
    mask, lifetime = bound_and_lifetime(build_log(static_pair_states), (0, 1))
    assert lifetime == 0
    assert not mask.any()


def test_contact_every_period_gives_full_lifetime(static_pair_states):
    log = build_log(static_pair_states, events=[contact_in_period(p) for p in range(5)])
    _, lifetime = bound_and_lifetime(log, (0, 1))
    assert lifetime == 5


def test_alternating_contacts_give_unit_lifetime(static_pair_states):
    log = build_log(static_pair_states, events=[contact_in_period(p) for p in (0, 2, 4)])
    assert bound_and_lifetime(log, (0, 1))[1] == 1
    assert bound_and_lifetime(log, (0, 1), grace=1)[1] == 5


def test_lifetime_horizon_longer_than_log_rejected(static_pair_states):
    with pytest.raises(ValueError):
        bound_and_lifetime(build_log(static_pair_states), (0, 1), horizon=6)


def test_longest_run_is_not_the_first_run():
    mask = np.array([False, True, True, False, True, True, True])
    assert longest_bound_run(mask) == (4, 3)
    assert longest_bound_run(np.zeros(4, dtype=bool)) == (0, 0)


def test_pair_observables_classify_long_runs(static_pair_states):
    log = build_log(static_pair_states, events=[contact_in_period(p) for p in range(5)])
    obs = pair_observables(log, (0, 1), threshold=3)
    assert obs.lifetime == 5
    assert obs.dyad_class is DyadClass.C2
    assert obs.mean_phi == pytest.approx(0.0, abs=1e-9)
    assert pair_observables(log, (0, 1), threshold=30).dyad_class is DyadClass.UNBOUND


# --- separation changes ---

def test_constant_separation_has_no_collision_events():
    series = delta_r_series(np.full(100, 1.2))
    assert series.attraction_events == []
    assert series.repulsion_events == []


def test_delta_r_telescopes_and_segments_jumps():
    rng = np.random.default_rng(4)
    r = 1.2 + np.cumsum(rng.normal(0.0, 1e-4, 300))
    r[150:] -= 0.05
    r[220:] += 0.08
    series = delta_r_series(r)
    assert series.delta_r.sum() == pytest.approx(r[-1] - r[0], abs=1e-12)
    assert (149, 150) in series.attraction_events
    assert (219, 220) in series.repulsion_events


# --- transport ---

def test_stepping_vector_follows_com_displacement():
    log = build_log(_moving_pair(), body_length_unit=BL)
    np.testing.assert_allclose(stepping_vector(log, (0, 1), 0), [1.0, 0.0], atol=1e-12)


def test_stationary_pair_has_no_stepping_vector(static_pair_states):
    assert stepping_vector(build_log(static_pair_states), (0, 1), 0) is None
    assert transport_projection(build_log(static_pair_states), (0, 1), 0) is None


def test_co_moving_robots_project_identically():
    log = build_log(_moving_pair(step=(0.001, 0.0005)), body_length_unit=BL)
    projection = transport_projection(log, (0, 1), 1)
    np.testing.assert_allclose(projection.projections[0], projection.projections[1], atol=1e-12)
    t_hat = projection.stepping_vector
    start, end = 10, 20
    for row, robot in enumerate((0, 1)):
        along = (log.states[end, robot, :2] - log.states[start, robot, :2]) @ t_hat
        assert projection.displacements[row] == pytest.approx(along, abs=1e-12)


def test_ballistic_track_has_exponent_two():
    track = np.column_stack([np.arange(200) * 0.01, np.zeros(200)])
    assert msd_and_beta(track).beta == pytest.approx(2.0, abs=0.01)


def test_random_walk_ensemble_has_exponent_one():
    rng = np.random.default_rng(2024)
    walks = [np.cumsum(rng.normal(0.0, 1.0, size=(1000, 2)), axis=0) for _ in range(100)]
    assert msd_and_beta(walks).beta == pytest.approx(1.0, abs=0.15)


def test_single_random_walk_has_exponent_one():
    rng = np.random.default_rng(7)
    walk = np.cumsum(rng.normal(0.0, 1.0, size=(10_000, 2)), axis=0)
    assert msd_and_beta(walk).beta == pytest.approx(1.0, abs=0.15)


def test_single_track_msd_is_the_plain_time_average():
    rng = np.random.default_rng(3)
    track = np.cumsum(rng.normal(0.0, 1.0, size=(500, 2)) + np.array([0.5, 0.0]), axis=0)
    result = msd_and_beta(track)
    for lag, value in zip(result.lags.astype(int), result.msd):
        displacements = track[lag:] - track[:-lag]
        assert value == pytest.approx(np.mean(np.sum(displacements ** 2, axis=1)), rel=1e-12)


def test_com_and_projection_are_mass_weighted():
    n, d = 11, 0.002
    states = np.zeros((n, 2, 5))
    states[:, 0, 0] = np.linspace(0.0, d, n)
    states[:, 1, 0] = BL
    log = dataclasses.replace(build_log(states), masses=(0.03, 0.01))

    com = com_track(log, (0, 1))
    assert com[-1, 0] - com[0, 0] == pytest.approx(0.75 * d)
    np.testing.assert_allclose(stepping_vector(log, (0, 1), 0), [1.0, 0.0], atol=1e-12)

    projection = transport_projection(log, (0, 1), 0)
    np.testing.assert_allclose(projection.displacements, [d, 0.0], atol=1e-15)
    weighted = (0.03 * projection.displacements[0] + 0.01 * projection.displacements[1]) / 0.04
    assert weighted == pytest.approx(com[-1, 0] - com[0, 0])


def test_msd_rejects_short_or_frozen_tracks():
    with pytest.raises(ValueError):
        msd_and_beta(np.zeros((10, 2)) + np.arange(10)[:, None])
    with pytest.raises(ValueError):
        msd_and_beta(np.zeros((100, 2)))


def test_com_speed_in_body_lengths_per_period():
    n = 101
    states = np.zeros((n, 2, 5))
    states[:, 0, 0] = np.linspace(0.0, 2.9 * BL, n)
    states[:, 1, 0] = states[:, 0, 0] + BL
    log = build_log(states, samples_per_period=1, body_length_unit=BL)
    speed, displacement = com_speed(log, (0, 1), 0, 100, body_width=BL)
    assert speed == pytest.approx(0.029)
    assert displacement == pytest.approx(2.9)


def test_stationary_pair_has_zero_speed(static_pair_states):
    speed, displacement = com_speed(build_log(static_pair_states), (0, 1))
    assert speed == 0.0
    assert displacement == 0.0


# --- binding probability and contact diagnostics ---

def _outcomes(alpha: float, n: int, bound: bool) -> pd.DataFrame:
    return pd.DataFrame({"alpha_max": [alpha] * n, "bound_at_end": [bound] * n, "bound_throughout": [bound] * n})


def test_binding_probability_limits():
    table = binding_probability(pd.concat([_outcomes(60.0, 20, True), _outcomes(90.0, 20, False)]))
    assert table.loc[60.0, "p_bound_at_end"] == 1.0
    assert table.loc[90.0, "p_bound_throughout"] == 0.0
    assert table.loc[60.0, "p_bound_at_end_high"] == pytest.approx(1.0)
    assert table.loc[90.0, "p_bound_at_end_low"] == pytest.approx(0.0, abs=1e-12)
    assert table.loc[60.0, "n_trials"] == 20


def test_binding_probability_needs_trials():
    with pytest.raises(ValueError):
        binding_probability(_outcomes(60.0, 0, True))


def test_contact_counts_per_cycle(static_pair_states):
    events = [
        contact_in_period(0),
        contact_in_period(1, faces=(Face.ARM_OUTER_R, Face.ARM_INNER_L)),
    ]
    counts = contact_counts(build_log(static_pair_states, events=events), (0, 1))
    assert [c.arms_in_contact for c in counts] == [1, 2, 0, 0, 0]
    assert counts[0].arm_body and not counts[0].arm_arm
    assert counts[1].arm_arm and not counts[1].arm_body


def test_analyze_logs_reports_every_pair(tmp_path, static_pair_states):
    states = np.concatenate([static_pair_states, np.zeros((50, 1, 5))], axis=1)
    states[:, 2, 1] = 0.3
    path = tmp_path / "trial.log"
    write_log(build_log(states, events=[contact_in_period(p) for p in range(5)]), path)
    table = analyze_logs([path])
    assert len(table) == 3
    bound = table[(table.robot_a == 0) & (table.robot_b == 1)].iloc[0]
    assert bound["lifetime"] == 5
    assert bool(bound["censored"])
    assert set(table["class"]) == {"Unbound"}
