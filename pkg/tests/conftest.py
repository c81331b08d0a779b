import numpy as np
import pytest

from copresence.simulate import Device, Room, ScenarioSpec


def make_spec(**overrides) -> ScenarioSpec:
    """Small two-room scenario: one verifier, one copresent and one
    non-copresent prover. Keyword overrides replace any spec field."""
    base = dict(
        rooms=[
            Room("room_a", (0.0, 0.0, 0.0), (5.0, 4.0, 3.0)),
            Room("room_b", (5.0, 0.0, 0.0), (10.0, 4.0, 3.0)),
        ],
        devices=[
            Device("v1", (2.5, 2.0, 1.0), role="verifier"),
            Device("p1", (1.0, 1.0, 0.8), role="prover"),
            Device("n1", (6.5, 2.5, 1.2), role="prover"),
        ],
        preset="2g4",
        path_count_range=(4, 6),
        noise_std=0.01,
        rng_seed=5,
    )
    base.update(overrides)
    return ScenarioSpec(**base)


@pytest.fixture
def tiny_spec():
    return make_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
