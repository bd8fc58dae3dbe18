import warnings

import numpy as np
import pytest

from fascl.data import SplitSpec
from fascl.synth import SynthSpec, synth_generate

warnings.filterwarnings("ignore", message=".*TBB.*")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_panel():
    return synth_generate(SynthSpec(m=60, sectors=4, days=900, seed=3))


@pytest.fixture(scope="session")
def small_split(small_panel):
    return SplitSpec.from_tail(small_panel.calendar, 300, 300)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
