import numpy as np
import pytest

from fworst import make_fourier_sine_basis, paper_example_spec


@pytest.fixture(scope="session")
def sine10():
    return make_fourier_sine_basis(10, (0.0, 1.0))


@pytest.fixture(scope="session")
def example_spec():
    return paper_example_spec()


@pytest.fixture(scope="session")
def grid100():
    return np.linspace(0.0, 1.0, 100)
