import numpy as np
import pytest

from pdsl.data import LabeledDataset, synth_classification


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def blobs():
    """Small, well separated 3-class problem."""
    return synth_classification(3, 4, 90, 6.0, np.random.default_rng(7))


def tiny_dataset(n=12, d=3, classes=3, seed=0):
    r = np.random.default_rng(seed)
    return LabeledDataset(r.standard_normal((n, d)), np.arange(n) % classes, classes)
