import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dro_planning import Instance, build_confidence_set, build_lattice

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def two_day_instance() -> Instance:
    """Two days, one pull-forward pair, 20 possible intakes per day."""
    return Instance(L=2, K=1, capacity=(30, 10), workstack=(5, 20), rollover_cost=(1.0, 1.0), i_max=(20, 20),
                    name="two-day")


def two_day_theta():
    return build_confidence_set((0.75, 0.75), 10, (20, 20), 0.005, 100)


@pytest.fixture(scope="session")
def two_day():
    return two_day_instance()


@pytest.fixture(scope="session")
def two_day_set():
    return two_day_theta()


@pytest.fixture(scope="session")
def two_day_lattice(two_day):
    return build_lattice(two_day)


def random_instance(rng: np.random.Generator, L=None, max_imax=3, cap=6) -> Instance:
    """Small random instance with a mix of spare and overloaded days."""
    L = L or int(rng.integers(2, 5))
    K = int(rng.integers(1, L))
    capacity = rng.integers(0, cap + 1, size=L)
    workstack = rng.integers(0, cap + 1, size=L)
    a = np.round(rng.uniform(0.5, 2.0, size=L), 3)
    i_max = rng.integers(0, max_imax + 1, size=L)
    return Instance(L, K, capacity, workstack, a, i_max)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
