import numpy as np
import pandas as pd
import pytest

from conftest import build_log, contact_in_period
from export_csv import PERIOD_COLUMNS, cycle_frame, export_logs, period_frame, read_frame, write_frame
from render_svg import FIGURES, render
from trajectory_log import write_log


def _drifting_pair_log(periods: int = 4, spp: int = 10):
    n = periods * spp + 1
    states = np.zeros((n, 2, 5))
    states[:, 0, 0] = np.linspace(0.0, 0.01, n)
    states[:, 1, 0] = states[:, 0, 0] + 0.06
    states[:, 1, 2] = np.pi
    return build_log(states, samples_per_period=spp, events=[contact_in_period(p) for p in range(periods)])


def test_frames_survive_a_csv_round_trip(tmp_path):
    frame = pd.DataFrame({"seed": [1, 2], "class": ["C1", "Unbound"], "lifetime": [40, 0]})
    path = write_frame(frame, tmp_path / "out" / "gliders.csv")
    pd.testing.assert_frame_equal(read_frame(path), frame)
    with pytest.raises(RuntimeError):
        read_frame(tmp_path / "absent.csv")


def test_period_frame_has_one_row_per_period():
    log = _drifting_pair_log()
    frame = period_frame(log, (0, 1), "trial0")
    assert list(frame.columns) == PERIOD_COLUMNS
    assert list(frame["period"]) == [0, 1, 2, 3]
    assert frame["bound"].all()
    np.testing.assert_allclose(frame["r"], 0.06 / 0.054)
    np.testing.assert_allclose(frame["phi"], 180.0)


def test_cycle_frame_covers_one_cycle():
    log = _drifting_pair_log()
    frame = cycle_frame(log, (0, 1), 1)
    assert len(frame) == 10
    np.testing.assert_allclose(frame["delta_r"], 0.0, atol=1e-12)
    np.testing.assert_allclose(frame["v_proj_a"], frame["v_proj_b"])
    assert frame["phase"].iloc[0] == 0.0


def test_export_logs_writes_both_tables(tmp_path):
    path = tmp_path / "trial0.log"
    write_log(_drifting_pair_log(), path)
    written = export_logs([path], tmp_path / "csv", msd=False, cycle=0)
    assert [p.name for p in written] == ["pair_periods.csv", "trial_summary.csv", "cycle_projection.csv"]
    summary = read_frame(written[1])
    assert summary.loc[0, "lifetime"] == 4


def _basin_csv(tmp_path):
    cells = pd.DataFrame({
        "phase": [0.0, 0.0, 0.25, 0.25],
        "theta": [0.0, 90.0, 0.0, 90.0],
        "phi": [180.0, 0.0, 180.0, 0.0],
        "label": ["Attracted", "Repelled", "Invalid", "Attracted"],
    })
    return write_frame(cells, tmp_path / "basin_map.csv")


def test_basin_figure_is_svg_with_legend(tmp_path):
    svg = render("4b", _basin_csv(tmp_path))
    text = svg.read_text(encoding="utf-8")
    assert svg.suffix == ".svg"
    assert "<svg" in text
    for label in ("Attracted", "Repelled", "Invalid"):
        assert label in text


@pytest.mark.parametrize("figure, frame", [
    ("3c", pd.DataFrame({"mean_phi": [10.0, 175.0, 185.0, 350.0]})),
    ("lifetimes", pd.DataFrame({"class": ["C1", "C2", "C1"], "lifetime": [40, 35, 300],
                                "mean_phi": [180.0, 5.0, 170.0]})),
    ("6c", pd.DataFrame({"condition": ["open_loop"] * 3 + ["feedback"] * 3, "alpha_max": [60.0] * 3 + [70.0] * 3,
                         "seed": [0] * 6, "period": [0, 1, 2] * 2, "r": [1.1, 1.2, 1.5, 1.1, 1.1, 1.1]})),
    ("6d", pd.DataFrame({"condition": ["open_loop", "open_loop", "feedback", "feedback"],
                         "alpha_max": [60.0, 60.0, 70.0, 70.0], "lifetime": [5, 10, 60, 80]})),
    ("7", pd.DataFrame({"alpha_max": [60.0, 60.0, 90.0, 90.0], "lag": [1.0, 10.0, 1.0, 10.0],
                        "msd": [1e-6, 1e-5, 1e-6, 1e-4]})),
    ("7", pd.DataFrame({"alpha_max": [45.0, 90.0], "r_mean": [1.05, 1.25], "r_std": [0.01, 0.02]})),
    ("5", pd.DataFrame({"cycle": [0, 0, 0], "phase": [0.0, 0.1, 0.2], "delta_r": [0.0, -0.01, 0.02],
                        "v_proj_a": [0.0, 0.1, 0.0], "v_proj_b": [0.0, 0.05, 0.0]})),
])
def test_figures_render_from_scenario_tables(tmp_path, figure, frame):
    csv = write_frame(frame, tmp_path / "table.csv")
    svg = render(figure, csv, tmp_path / "plots" / f"{figure}.svg")
    assert svg.is_file()
    assert svg.read_text(encoding="utf-8").lstrip().startswith("<?xml")


def test_sweep_summary_figure(tmp_path):
    summary = pd.DataFrame({
        "alpha_max": [60.0, 90.0], "p_bound_at_end": [0.9, 0.4], "p_bound_at_end_low": [0.7, 0.2],
        "p_bound_at_end_high": [0.97, 0.6], "p_bound_throughout": [0.8, 0.3], "p_bound_throughout_low": [0.6, 0.1],
        "p_bound_throughout_high": [0.9, 0.5], "beta_mean": [1.2, 1.8], "beta_std": [0.1, 0.1],
        "v_com_mean": [0.01, 0.03], "v_com_std": [0.002, 0.004],
    })
    assert render("7", write_frame(summary, tmp_path / "sweep_summary.csv")).is_file()


def test_render_rejects_unknown_figures_and_missing_columns(tmp_path):
    csv = write_frame(pd.DataFrame({"x": [1]}), tmp_path / "x.csv")
    with pytest.raises(RuntimeError):
        render("9z", csv)
    with pytest.raises(RuntimeError):
        render("3c", csv)
    assert "9z" not in FIGURES
