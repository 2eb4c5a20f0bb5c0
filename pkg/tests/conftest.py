"""Shared fixtures: small seeded datasets and models trained once per session."""
import time

import numpy as np
import pytest

from recon.datagen import collect_dataset
from recon.evalharness import train_world
from recon.latentmodel import init_params, train


@pytest.fixture(scope="session")
def small_world():
    return train_world(100)


@pytest.fixture(scope="session")
def small_data(small_world):
    ds, trajs = collect_dataset([small_world], 3000, seed=0)
    return ds, trajs


@pytest.fixture(scope="session")
def trained(small_data):
    """A model fitted on one 20x20 world; good enough for the post-training checks."""
    ds, _ = small_data
    params, trace = train(init_params(ds.n_rays, beta=0.1, seed=0), ds, epochs=8, lr=1e-3, seed=0)
    return params, trace


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class AcceptanceLog(list):
    """(criterion, passed, detail) tuples, printed once the run ends."""

    def __init__(self):
        super().__init__()
        self.t0 = time.perf_counter()


_LOG = AcceptanceLog()


@pytest.fixture(scope="session")
def acceptance_log():
    return _LOG


def pytest_terminal_summary(terminalreporter):
    if not _LOG:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(_LOG, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    minutes = (time.perf_counter() - _LOG.t0) / 60
    terminalreporter.write_line(f"acceptance wall time: {minutes:.1f} min (limit 30)")
