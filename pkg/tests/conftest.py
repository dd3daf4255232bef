import numpy as np
import pytest

from bpec.channel import ChannelModel


def random_joint_channel(rng: np.random.Generator, n: int, erase_all: float = 0.3) -> ChannelModel:
    """Dirichlet pattern law with the all-erased pattern scaled down."""
    w = rng.dirichlet(np.ones(1 << n))
    w[-1] *= erase_all
    return ChannelModel.joint(w / w.sum())


def peasant_mul(a: int, b: int, m: int, poly: int) -> int:
    """Shift-and-add product in GF(2^m); written here as an independent oracle."""
    out = 0
    while b:
        if b & 1:
            out ^= a
        b >>= 1
        a <<= 1
        if a >> m:
            a ^= poly
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, keyed by criterion number
VERDICTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo runs")
