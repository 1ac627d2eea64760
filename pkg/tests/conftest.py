import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from geometry import Face, SmarticleGeometry  # noqa: E402
from trajectory_log import ContactEvent, TrajectoryLog  # noqa: E402


def build_log(states: np.ndarray, samples_per_period: int = 10, period: float = 1.0,
              events=(), body_length_unit: float = 0.054, seed: int = 0) -> TrajectoryLog:
    """A TrajectoryLog around a (n_samples, n_robots, 5) state array."""
    states = np.asarray(states, dtype=float)
    n_samples, n_robots, _ = states.shape
    return TrajectoryLog(
        config_hash="test",
        seed=seed,
        period=period,
        samples_per_period=samples_per_period,
        dt=period / samples_per_period,
        body_length_unit=body_length_unit,
        masses=tuple([0.0348] * n_robots),
        times=np.arange(n_samples) * period / samples_per_period,
        states=states,
        events=list(events),
    )


def contact_in_period(period_index: int, period: float = 1.0, robots=(0, 1),
                      faces=(Face.ARM_INNER_L, Face.BODY_FRONT), impulse: float = 1e-3) -> ContactEvent:
    return ContactEvent(time=period_index * period + 0.1 * period, robots=robots, face_ids=faces,
                        impulse_magnitude=impulse, normal=(1.0, 0.0))


@pytest.fixture
def geometry() -> SmarticleGeometry:
    return SmarticleGeometry.from_preset("main")


@pytest.fixture
def static_pair_states() -> np.ndarray:
    """Two robots one BL apart along x, 5 periods of 10 samples, never moving."""
    states = np.zeros((50, 2, 5))
    states[:, 1, 0] = 0.054
    return states
