from pathlib import Path

import pytest

from mothnet.dataset import build_feature_dataset, find_mnist

DATA_DIR = Path(__file__).resolve().parents[1] / "data" / "mnist5k"


@pytest.fixture(scope="session")
def mnist_raw():
    if not DATA_DIR.exists():
        pytest.skip("MNIST subset not present")
    return find_mnist(DATA_DIR)


@pytest.fixture(scope="session")
def mnist_features(mnist_raw):
    return build_feature_dataset(mnist_raw, 85, "by_sum", seed=0)
