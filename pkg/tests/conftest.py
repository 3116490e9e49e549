"""Shared fixtures: tiny systems and a short seeded dataset."""

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=50, deadline=None)
settings.register_profile("dev", max_examples=20, deadline=None)
settings.load_profile("dev")


@pytest.fixture
def one_zone():
    """Factory for a single-zone, single-generator system with an identity exposure."""
    from reservesets.sced import Generator, ZonalSystem, Zone

    def make(load=50.0, g_max=100.0, energy=10.0, reserve=1.0, d=1):
        allocation = np.zeros((1, d))
        allocation[0, 0] = 1.0
        return ZonalSystem((Zone(1, load),), (Generator(1, 0.0, g_max, energy, reserve),), allocation)

    return make


@pytest.fixture
def transfer_toy():
    from reservesets.selftest import transfer_toy

    return transfer_toy()


@pytest.fixture(scope="session")
def small_dataset():
    """480 hours of default-parameter data: 288/96/48/48 across the four splits."""
    from reservesets.data import GeneratorParams, generate

    return generate(GeneratorParams(seed=7), 480)


@pytest.fixture(scope="session")
def default_system():
    from reservesets.data import default_system

    return default_system(42)
