import numpy as np
import pytest

from pmp.data import synth_dataset
from pmp.gcn import GcnConfig, init_model
from pmp.bandstop import BandStopConfig

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset():
    return synth_dataset(n_joints=5, classes=3, per_class=8, frames=12, noise_std=0.05, seed=3, chunks=4)


def toy_config(n=4, s_raw=6, classes=2, heads=2, **kw):
    adj = np.full((n, n), 1.0 / n)
    return GcnConfig(n=n, s_raw=s_raw, classes=classes, adjacency_init=adj, s_emb=3, heads=heads,
                     filters=3, dense_dim=4, **kw)


@pytest.fixture
def toy_model():
    return init_model(toy_config(), BandStopConfig(0.3, 1.0), seed=0, init_range=0.9)
