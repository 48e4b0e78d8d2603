import numpy as np
import pytest

from edgecrl.configspace import ConfigurationSpace, CostModel
from edgecrl.traces import GeneratorParams, generate_trace


@pytest.fixture
def space():
    return ConfigurationSpace()


@pytest.fixture
def cost_model():
    return CostModel()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_trace():
    return generate_trace(GeneratorParams(n_segments=30, noise=0.02, crossover_prob=0.1), seed=7)


# -- acceptance report -------------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """``acceptance(criterion, title, ok, detail)`` records one sub-check for the summary."""
    table = request.config.stash[_ACCEPTANCE]

    def record(criterion: int, title: str, ok: bool, detail: str = ""):
        table.setdefault(criterion, {"title": title, "checks": []})["checks"].append((bool(ok), detail))
        print(f"criterion {criterion} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(_ACCEPTANCE, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(table):
        entry = table[k]
        ok = all(c[0] for c in entry["checks"])
        detail = "; ".join(d for _, d in entry["checks"] if d)
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:2d}. {entry['title']} -- {detail}")
