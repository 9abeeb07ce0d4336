from __future__ import annotations

import logging
import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from mmloc.config import get_settings
from mmloc.geometry import BSState, UEState, angles_to_unit_vector, global_direction
from mmloc.main import create_app
from mmloc.scenario import generate_paths
from mmloc.schemas import DriveSpec, NoiseModel, ScenarioConfig, SimPath, Surface


@pytest.fixture(autouse=True)
def reset_state():
    """Fresh settings per test; undo the CLI's logging setup."""
    get_settings.cache_clear()  # type: ignore[attr-defined]
    yield
    get_settings.cache_clear()  # type: ignore[attr-defined]
    logger = logging.getLogger("mmloc")
    logger.handlers.clear()
    logger.propagate = True
    logger.setLevel(logging.NOTSET)


@pytest.fixture
def client():
    return TestClient(create_app())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def surveyed_bs() -> BSState:
    """Calibrated BS pose of the outdoor campaign."""
    return BSState(
        position=(0.78, 0.73, 18.66),
        orientation=tuple(math.radians(d) for d in (1.25, 9.92, 73.45)),
    )


@pytest.fixture
def bs_prior() -> BSState:
    """Pre-calibration BS pose of the outdoor campaign."""
    return BSState(
        position=(0.0, 0.0, 21.0),
        orientation=tuple(math.radians(d) for d in (0.0, 12.0, 69.0)),
    )


def random_ue_states(
    bs: BSState,
    n: int,
    rng: np.random.Generator,
    min_range: float = 85.0,
    max_range: float = 130.0,
) -> list[UEState]:
    """UEs in front of the BS array at ground height with random orientations."""
    states = []
    for k in range(n):
        direction = global_direction(bs.rotation, rng.uniform(-1.0, 1.0), 0.0)
        horizontal = direction[:2] / np.linalg.norm(direction[:2])
        distance = rng.uniform(min_range, max_range)
        xy = bs.p[:2] + distance * horizontal
        states.append(
            UEState(
                position=(float(xy[0]), float(xy[1]), 1.5),
                orientation=(0.0, 0.0, float(rng.uniform(-np.pi, np.pi))),
                timestamp=0.1 * k,
            )
        )
    return states


@pytest.fixture
def make_ue_states():
    return random_ue_states


@pytest.fixture
def street_scenario() -> ScenarioConfig:
    """BS between two parallel walls, UE driving away and turning north."""
    return ScenarioConfig(
        bs=BSState(position=(0.0, 0.0, 10.0)),
        surfaces=[
            Surface(anchor=(0.0, 30.0, 0.0), normal=(0.0, -1.0, 0.0), name="north"),
            Surface(anchor=(0.0, -30.0, 0.0), normal=(0.0, 1.0, 0.0), name="south"),
        ],
        drive=DriveSpec(
            waypoints=[(40.0, -10.0, 1.5), (90.0, -10.0, 1.5), (90.0, 15.0, 1.5)],
            speed_mps=10.0,
        ),
        frame_period=0.5,
        rng_seed=7,
    )


@pytest.fixture
def noisy_street_scenario(street_scenario: ScenarioConfig) -> ScenarioConfig:
    noise = NoiseModel(
        toa_std_s=1e-9,
        aoa_az_std_rad=math.radians(0.2),
        aoa_el_std_rad=math.radians(0.2),
        aod_az_std_rad=math.radians(0.2),
        aod_el_std_rad=math.radians(0.2),
    )
    return street_scenario.model_copy(update={"measurement_noise": noise})


def single_los_paths(
    aod_az: float, aod_el: float, aoa_az: float, distance: float = 60.0
) -> list[SimPath]:
    """LOS path seen at the given local angles by an identity-pose BS at 10 m."""
    bs = BSState(position=(0.0, 0.0, 10.0))
    direction = angles_to_unit_vector(aod_az, aod_el)
    back = -direction
    ue = UEState(
        position=tuple(bs.p + distance * direction),
        orientation=(0.0, 0.0, aoa_az - math.atan2(back[1], back[0])),
    )
    return generate_paths(bs, ue, [])


@pytest.fixture
def make_los_paths():
    return single_los_paths
