import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tfha import TransientConfig, load_fixture, run_to_steady_state

settings.register_profile(
    "tfha", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("tfha")


def rel_l2(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture(scope="session")
def rectifier():
    return load_fixture("rectifier")


@pytest.fixture(scope="session")
def boost():
    return load_fixture("boost")


@pytest.fixture(scope="session")
def rectifier_steady(rectifier):
    cfg = TransientConfig(samples_per_period=1024, steady_tol=1e-11, newton_tol=1e-13)
    return run_to_steady_state(rectifier, cfg)


@pytest.fixture(scope="session")
def boost_steady(boost):
    cfg = TransientConfig(samples_per_period=512, steady_tol=1e-8)
    return run_to_steady_state(boost, cfg)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
