import os
from pathlib import Path

import numpy as np
import pytest

MNIST_DIR = Path(os.environ.get("TANGENTFLATS_MNIST", "/root/data/mnist"))
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def random_basis(rng, N, d):
    q, _ = np.linalg.qr(rng.normal(size=(N, d)))
    return q


def random_rotation(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def line(theta):
    return np.array([[np.cos(theta)], [np.sin(theta)]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist_paths():
    paths = {k: MNIST_DIR / v for k, v in MNIST_FILES.items()}
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        pytest.skip(f"MNIST IDX files not found (set TANGENTFLATS_MNIST): {missing}")
    return paths
