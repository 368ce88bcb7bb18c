"""Shared fixtures: MNIST splits, quickly-trained nets, and the cached
full-protocol zoo used by the end-to-end acceptance gate."""

import sys
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT / "tests"))

import helpers_zoo  # noqa: E402

from nricci import data_io, training  # noqa: E402


@pytest.fixture(scope="session")
def data_dir() -> Path:
    d = REPO_ROOT / "data" / "mnist"
    if not d.exists():
        pytest.skip("bundled MNIST data directory missing")
    return d


@pytest.fixture(scope="session")
def mnist_train(data_dir):
    return data_io.load_mnist(data_dir, "train")


@pytest.fixture(scope="session")
def mnist_test(data_dir):
    return data_io.load_mnist(data_dir, "test")


@pytest.fixture(scope="session")
def quick_net(mnist_train):
    """A [15,20] CE model trained just long enough to behave like a
    classifier (for structural and robustness tests, not accuracy claims)."""
    cfg = training.TrainConfig(arch="15,20", epochs=5, seed=0)
    net, _ = training.train(mnist_train.images[:20000], mnist_train.labels[:20000], cfg)
    return net


@pytest.fixture(scope="session")
def quick_cnn(mnist_train):
    cfg = training.TrainConfig(arch="cnn", epochs=1, seed=0)
    net, _ = training.train(mnist_train.images[:4000], mnist_train.labels[:4000], cfg)
    return net


@pytest.fixture(scope="session")
def zoo_ce():
    return helpers_zoo.get_setup("fc-15-20-ce")


@pytest.fixture(scope="session")
def zoo_at():
    return helpers_zoo.get_setup("fc-15-20-at")


@pytest.fixture(scope="session")
def zoo_deep_ce():
    return helpers_zoo.get_setup("fc-15-25-20-15-ce")
