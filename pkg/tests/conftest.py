"""Shared fixtures: a small fast scenario and the headline one."""

from pathlib import Path

import pytest

from uavnet.scenario import ScenarioConfig, dbm_to_watts, load_scenario

REPO = Path(__file__).resolve().parents[1]
DATA = Path(__file__).resolve().parent / "data"


def make_config(**overrides) -> ScenarioConfig:
    base = dict(
        area_x_bounds=(0.0, 60.0),
        area_y_bounds=(0.0, 60.0),
        altitude_bounds=(20.0, 80.0),
        n_users=6,
        total_flight_time=90.0,
        slot_duration=1.0,
        s_xy_max=30.0,
        s_h_max=15.0,
        p_total_max=dbm_to_watts(10.0),
        p_user_max=dbm_to_watts(10.0),
        b_total_max=20e6,
        carrier_freq=900e6,
        noise_psd=dbm_to_watts(-168.0),
        antennas=4,
        qos_bits=6.0e7,
        tau_slots=3,
        c_max_users=2,
        history_slots=400,
        capacity_mc_samples=256,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


@pytest.fixture
def small_cfg() -> ScenarioConfig:
    return make_config()


@pytest.fixture
def make_cfg():
    return make_config


@pytest.fixture(scope="session")
def paper_cfg() -> ScenarioConfig:
    return load_scenario(REPO / "scenarios" / "paper.cfg")
