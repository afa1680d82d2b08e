import numpy as np
import pytest

from relaxo.forward import assemble_operator


@pytest.fixture(scope="session")
def op_a4():
    return assemble_operator(resolution="A4")


@pytest.fixture(scope="session")
def op_a3():
    return assemble_operator(resolution="A3")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
