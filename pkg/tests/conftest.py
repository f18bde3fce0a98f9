import numpy as np
import pytest

from emireg.data import generate_synthetic

from support import SMALL_DIMS


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A small noiseless full-overlap dataset shared across trainer tests."""
    root = tmp_path_factory.mktemp("smallds")
    generate_synthetic(root, n=120, dims=SMALL_DIMS, seed=11, noise=0.0, mode="overlap")
    return root
