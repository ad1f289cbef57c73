import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from idtsim import _backend  # noqa: E402
from idtsim.config import SimConfig  # noqa: E402
from idtsim.core_sim import Core  # noqa: E402

CRITERIA: list[str] = []


@pytest.fixture(params=_backend.available())
def kernel(request):
    return _backend.load(request.param)


@pytest.fixture
def quiet_config():
    return SimConfig(noise_p=0.0)


@pytest.fixture
def make_core(kernel):
    def factory(config=None, seed=0):
        return Core(config or SimConfig(noise_p=0.0), seed=seed, kernel=kernel)

    return factory


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
