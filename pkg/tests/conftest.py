import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", parent=settings.get_profile("default"), max_examples=1000)
settings.load_profile("default")

from ranscope.sim.link import run_trace
from ranscope.sim.scenario import LinkScenario
from ranscope.timing import Rat


@pytest.fixture(scope="session")
def lte_trace():
    sc = LinkScenario(rat=Rat.LTE, seed=7, duration_s=10.0)
    return sc, run_trace(sc)


@pytest.fixture(scope="session")
def ul_trace():
    sc = LinkScenario(rat=Rat.LTE, seed=3, duration_s=10.0, direction="uplink")
    return sc, run_trace(sc)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
