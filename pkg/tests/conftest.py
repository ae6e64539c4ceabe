import numpy as np
import pytest

from ckmfield import channel as C
from ckmfield import dataio
from ckmfield.training import TrainConfig

HALF_LAMBDA = C.SPEED_OF_LIGHT / 2.415e9 / 2


def tiny_spec(n_samples=12, seed=0, **kw):
    grid = C.OfdmGrid(n_subcarriers_used=4, n_fft=16, spacing=1.25e6, uplink_center=2.415e9, duplex_gap=50e6)
    base = dict(tx=C.ArrayGeometry(2, 2, HALF_LAMBDA, center=(0.6, 2.5, 2.0)),
                rx=C.ArrayGeometry(2, 2, HALF_LAMBDA), grid=grid, n_samples=n_samples, seed=seed)
    base.update(kw)
    return C.SceneSpec(**base)


def tiny_dataset(n_samples=12, seed=0, **kw):
    spec = tiny_spec(n_samples, seed, **kw)
    meta = spec.to_dict()
    return dataio.from_samples(C.generate_dataset(spec), spec.grid, meta)


def micro_train_config(**kw):
    base = dict(rays=2, radiators=3, hidden=8, depth=3, shaping_width=8, range=3.0,
                batch=4, lr=3e-3, epochs=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_data():
    return tiny_dataset()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
