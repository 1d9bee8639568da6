import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from benchmin.matrix import PerformanceMatrix, RtsmInstance

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_instance(*values, costs=None, target=1.0, names=None):
    """Instance from one or more variants x tests arrays sharing a layout."""
    values = [np.asarray(v, dtype=float) for v in values]
    n_v, n_t = values[0].shape
    names = names or [f"m{k}" for k in range(len(values))]
    mats = tuple(PerformanceMatrix([f"v{i}" for i in range(n_v)], [f"t{j}" for j in range(n_t)], v, name)
                 for v, name in zip(values, names))
    return RtsmInstance(mats, np.ones(n_t) if costs is None else np.asarray(costs, dtype=float), target)


def random_instance(rng, n_variants, n_tests, *, metrics=1, integer=False, unit_costs=True, target=1.0):
    if integer:
        vals = [rng.integers(0, 10, size=(n_variants, n_tests)).astype(float) for _ in range(metrics)]
    else:
        vals = [rng.random((n_variants, n_tests)) for _ in range(metrics)]
    costs = None if unit_costs else rng.integers(1, 6, size=n_tests)
    return make_instance(*vals, costs=costs, target=target)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
