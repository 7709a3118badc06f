import numpy as np
import pytest

from peelnet.network import CompletionNetwork, NetworkConfig

_ACCEPTANCE: dict[tuple[int, str], bool] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(number, title): tracked acceptance criterion"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    key = (mark.kwargs["number"], mark.kwargs["title"])
    if rep.when == "call":
        _ACCEPTANCE[key] = rep.passed
    elif rep.when == "setup" and not rep.passed:
        _ACCEPTANCE[key] = False


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in sorted(_ACCEPTANCE):
        verdict = "PASS" if _ACCEPTANCE[(number, title)] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {title}: {verdict}")


@pytest.fixture(scope="session")
def tiny_model() -> CompletionNetwork:
    return CompletionNetwork.fresh(NetworkConfig.tiny(), seed=1)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
