import sys
import random
from pathlib import Path

import pytest

from ftrk.handshake import HandshakeParty, Role, establish_three_party, make_rng

VECTORS = Path(__file__).parent / "vectors"


@pytest.fixture
def vectors_dir():
    return VECTORS


@pytest.fixture
def rnd():
    return random.Random(0xF7)


@pytest.fixture
def three_party():
    """Factory for fresh three-role setups; each call runs new handshakes."""
    counter = iter(range(10_000))

    def make(mode="direct", seed=None):
        rng = make_rng(f"setup-{seed if seed is not None else next(counter)}")
        return establish_three_party(HandshakeParty(Role.USER), HandshakeParty(Role.PROXY),
                                     HandshakeParty(Role.ACCELERATOR), mode, rng)

    return make


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
