import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    from diabrisk.corpus import GeneratorConfig, generate_synthetic_corpus
    return generate_synthetic_corpus(5, GeneratorConfig(n_patients=120))


# ---------------------------------------------------------------------------
# Acceptance summary: one PASS/FAIL line per criterion-marked test.

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when == "teardown":
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    _criteria[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status, detail = _criteria[number]
        line = f"criterion {number} {status}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
