"""Shared fixtures. The two scenario runs are expensive, so each is built once per session."""
import pytest
from hypothesis import HealthCheck, settings

from genflow.cli import run_scenario
from genflow.epsilon import make_epsilon_net

settings.register_profile(
    "genflow", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("genflow")


@pytest.fixture(scope="session")
def default_net():
    return make_epsilon_net(1e-2, 1e-8, 7)


@pytest.fixture(scope="session")
def marsden_run(tmp_path_factory):
    """Default marsden scenario through the CLI entry point; artifacts stay in memory."""
    out = tmp_path_factory.mktemp("marsden")
    return run_scenario("marsden", {"output": {"dir": str(out)}})


@pytest.fixture(scope="session")
def torus_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("torus")
    return run_scenario("torus", {"output": {"dir": str(out)}})


@pytest.fixture(scope="session")
def hierarchy_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("hierarchy")
    return run_scenario("hierarchy", {"output": {"dir": str(out)}})


# acceptance criterion outcomes, printed once at the end of the session
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k[1:].split()[0]), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key:<14} {'PASS' if ok else 'FAIL'}  {detail}")
