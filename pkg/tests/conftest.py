import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wsground.synthcorpus import WorldSpec, generate

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

SMALL_WORLD = WorldSpec(images=80, feature_dim=32)


@pytest.fixture(scope="session")
def small_world():
    dataset, taxonomy = generate(SMALL_WORLD, 5)
    return dataset, taxonomy


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria: dict[int, tuple[str, list[bool]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    n, title = mark.args
    _criteria.setdefault(n, (title, []))[1].append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, results = _criteria[n]
        verdict = "PASS" if results and all(results) else "FAIL"
        terminalreporter.write_line(f"{verdict}  criterion {n:>2}: {title}")
