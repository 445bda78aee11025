"""Define fixtures, constants, etc. available for all tests."""
from dataclasses import replace

import numpy as np
import pytest

from glimpse_iqa.config import NetConfig, loads
from glimpse_iqa.data import prepare, synthetic_index
from glimpse_iqa.net import init_params

from .common import TEST_SEED, TEST_SMOKE_CONFIG, load_fixture


def pytest_addoption(parser):
    """Add the switch that enables long-running acceptance tests."""
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow acceptance tests"
    )


def pytest_collection_modifyitems(config, items):
    """Skip slow tests unless --runslow is given."""
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture()
def rng():
    """Define a seeded random generator."""
    return np.random.default_rng(TEST_SEED)


@pytest.fixture()
def reduced_net():
    """Define the narrow three-class model used across tests."""
    return NetConfig.reduced(n_classes=3)


@pytest.fixture()
def reduced_params(reduced_net):
    """Define freshly initialised parameters of the narrow model."""
    return init_params(reduced_net, np.random.default_rng(TEST_SEED))


@pytest.fixture()
def smoke_config():
    """Define the 30-image synthetic configuration."""
    return loads(load_fixture(TEST_SMOKE_CONFIG), source=TEST_SMOKE_CONFIG)


@pytest.fixture()
def smoke_index(smoke_config):
    """Define the in-memory 30-image synthetic dataset."""
    return synthetic_index(smoke_config.data, smoke_config.seed)


@pytest.fixture()
def smoke_samples(smoke_config, smoke_index):
    """Define the 30 synthetic samples, contrast-normalised."""
    return prepare(smoke_index.samples, smoke_config.data)


@pytest.fixture()
def supervised_config(smoke_config):
    """Define a run that trains without the reinforcement term or location updates."""
    return replace(
        smoke_config,
        train=replace(smoke_config.train, alpha_rein=0.0, freeze_location=True),
    )
