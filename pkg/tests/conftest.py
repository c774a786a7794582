import numpy as np
import pytest

from cplnet.control import design_network_gains
from cplnet.model import NetworkSpec


@pytest.fixture(scope="session")
def spec1():
    return NetworkSpec.uniform(1)


@pytest.fixture(scope="session")
def spec2():
    return NetworkSpec.uniform(2)


@pytest.fixture(scope="session")
def gains2(spec2):
    return design_network_gains(spec2)


@pytest.fixture(scope="session")
def gain(spec1):
    return design_network_gains(spec1).gains[0]


@pytest.fixture
def rng():
    return np.random.default_rng(0)
