import numpy as np
import pytest
from hypothesis import settings

from focusdepth.data import generate_synthetic_dataset, load_split

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Three training and two test scenes, 16x16, four slices."""
    root = tmp_path_factory.mktemp("tiny")
    train = generate_synthetic_dataset(3, 16, 16, 4, seed=7, out_dir=root, split="train")
    test = generate_synthetic_dataset(2, 16, 16, 4, seed=8, out_dir=root, split="test")
    return root, train, test


@pytest.fixture(scope="session")
def tiny_samples(tiny_dataset):
    _, train, test = tiny_dataset
    return load_split(train), load_split(test)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
