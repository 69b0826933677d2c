import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from satopf import CostConfig, FeasibleSetSpec, FirstStage, load_case  # noqa: E402
from satopf.network import Bus, Generator, GeneratorKind, Line, Load, Network  # noqa: E402

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.fixture
def measured(request):
    """Dict a test fills with measured quantities for the acceptance summary."""
    d = {}
    request.node._measured = d
    return d


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        num, title = mark.args
        detail = "; ".join(f"{k}={v}" for k, v in getattr(item, "_measured", {}).items())
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        if rep.outcome == "skipped" and isinstance(rep.longrepr, tuple):
            detail = detail or str(rep.longrepr[2])
        _ACCEPTANCE[num] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        status, title, detail = _ACCEPTANCE[num]
        terminalreporter.write_line(f"[{status}] {num}. {title}" + (f" ({detail})" if detail else ""))


def make_two_unit_network(p_max=(8.0, 20.0), demand=10.0, p_min=(0.0, 0.0), flow_limit=100.0):
    """Two regular units on bus 0 feeding one load on bus 1."""
    gens = [
        Generator(0, GeneratorKind.REGULAR, lo, hi, 0.0, hi, hi, hi, 1.0 + k)
        for k, (lo, hi) in enumerate(zip(p_min, p_max))
    ]
    return Network(2, [Line(0, 1, 1.0, flow_limit)], gens, [Load(1, demand)])


@pytest.fixture
def two_unit():
    return make_two_unit_network()


@pytest.fixture
def x_half():
    return FirstStage([5.0, 5.0], [0.0, 0.0], [0.0, 0.0], [0.5, 0.5])


@pytest.fixture(scope="session")
def six_bus():
    costs = CostConfig()
    net, model, meta = load_case("six_bus_case1", costs=costs)
    spec = FeasibleSetSpec.from_network(net, costs.epsilon_for(net.n_gens))
    return net, model, spec, costs


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
