import numpy as np
import pytest

from nanfopt import nn
from nanfopt.geometry import enumerate_grid, default_dataset_grid
from nanfopt.oracle import SurrogateOracle, build_dataset, partition, subsample

ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)


FAST_CLS = nn.Hyperparams((12, 8), 1e-2, 150, name="fast_classifier")
FAST_REG = nn.Hyperparams((12, 8), 1e-2, 150, name="fast_regressor")


@pytest.fixture(scope="session")
def master():
    return build_dataset(enumerate_grid(default_dataset_grid()), SurrogateOracle(), 1.0)


@pytest.fixture(scope="session")
def small_master(master):
    return subsample(master, 600, 11)


@pytest.fixture(scope="session")
def small_split(small_master):
    return partition(small_master, 3)


@pytest.fixture(scope="session")
def fast_hp():
    return FAST_CLS, FAST_REG


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fast_model(small_split):
    from nanfopt.pipeline import train_two_stage

    return train_two_stage(small_split, FAST_CLS, FAST_REG).model
