import random

import pytest

from ccsim.cca import CongestionControl
from ccsim.core import MSS


class FixedWindow(CongestionControl):
    """Controller stub with a constant cwnd and pacing rate."""

    name = "fixed"

    def __init__(self, cwnd_pkts: int = 10, rate: float = 1e15) -> None:
        super().__init__(MSS, None)
        self.cwnd = cwnd_pkts * MSS
        self.pacing_rate = rate
        self.losses = []

    def on_loss_declared(self, losses, now, flow) -> None:
        self.losses.extend(losses)


@pytest.fixture
def fixed_cc():
    return FixedWindow


@pytest.fixture
def rng():
    return random.Random(1234)


# Acceptance criteria append "criterion N: PASS/FAIL ..." lines here; they
# are printed together at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
