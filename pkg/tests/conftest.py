import numpy as np
import pytest

from pmelab.geometry import ManifoldProfile


@pytest.fixture(scope="session")
def E3():
    return ManifoldProfile.euclidean(3)


@pytest.fixture(scope="session")
def H3():
    return ManifoldProfile.hyperbolic(3)


@pytest.fixture(scope="session")
def I3():
    # psi = e^{r^{1/2}} beyond the cap
    return ManifoldProfile.intermediate(3, 0.5, c1=1.0, c2=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
