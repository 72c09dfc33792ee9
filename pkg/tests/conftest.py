import numpy as np
import pytest

from fuzzyirtree import preset_tree


@pytest.fixture(scope="session")
def fig1():
    return preset_tree("fig1-5cat")


@pytest.fixture(scope="session")
def fig2():
    return preset_tree("fig2-6cat")


@pytest.fixture
def rng():
    return np.random.default_rng(987654321)
