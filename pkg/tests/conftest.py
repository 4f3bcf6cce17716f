"""Session fixtures: the default dataset and the model trained on it.

Both are built once per test session with the library defaults, so every
test that needs a trained recognizer sees the same weights.
"""

import time

import pytest

from guiattack.dataset import DatasetConfig, build_dataset
from guiattack.recognizer.training import TrainConfig, train


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    return build_dataset(DatasetConfig(), tmp_path_factory.mktemp("default_dataset"))


@pytest.fixture(scope="session")
def training_run(default_dataset):
    """``(TrainResult, wall seconds)`` for the default config on the default dataset."""
    start = time.perf_counter()
    result = train(default_dataset, TrainConfig())
    return result, time.perf_counter() - start


@pytest.fixture(scope="session")
def trained(training_run):
    return training_run[0]


@pytest.fixture(scope="session")
def model(trained):
    return trained.params


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
