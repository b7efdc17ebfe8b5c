import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from exactqueue import Exponential, ShiftedExponential, Uniform, build_model

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def mm2():
    return build_model(Exponential(3.0), Exponential(2.0), 2)


@pytest.fixture
def mm1():
    return build_model(Exponential(3.0), Exponential(5.0), 1)


@pytest.fixture
def mm3():
    return build_model(Exponential(4.0), Exponential(2.0), 3)


@pytest.fixture
def never_empty2():
    # every service exceeds every interarrival time; load 1.2 / 0.7 on two servers
    return build_model(Uniform(0.5, 0.9), ShiftedExponential(1.0, 5.0), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    results = {}
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            results.update(getattr(mod, "RESULTS", {}))
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
