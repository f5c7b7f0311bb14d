import numpy as np
import pytest

from lpanet import _backend
from lpanet.network import Dims, init_network


def pytest_report_header(config):
    return f"lpanet kernels: {_backend.NAME} (available: {', '.join(_backend.available())})"


@pytest.fixture(params=_backend.available())
def kernels(request):
    return _backend.get(request.param)


@pytest.fixture
def small_dims():
    return Dims(d_in=2, d=5, hidden=4, d_y=1, n_blocks=3)


@pytest.fixture
def small_net(small_dims):
    return init_network(small_dims, seed=11)


@pytest.fixture
def small_batch():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, size=(16, 2))
    return x, np.sin(3 * x[:, :1]) * x[:, 1:]


_CRITERIA_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Call as ``criterion(n, title, ok, detail)``; prints and collects one PASS/FAIL line."""
    lines = request.config.stash.setdefault(_CRITERIA_KEY, [])

    def report(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f"  ({detail})" if detail else "")
        lines.append((number, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda t: t[0]):
            terminalreporter.write_line(line)
