import pytest

from spatial_coalescent.measure import LambdaMeasure
from spatial_coalescent.rates import RateKernel


@pytest.fixture(scope="session")
def kingman_kernel():
    return RateKernel(LambdaMeasure.unit_atom(0.0))


@pytest.fixture(scope="session")
def lebesgue_kernel():
    return RateKernel(LambdaMeasure.lebesgue())


@pytest.fixture(scope="session")
def beta_heavy_kernel():
    """Beta(0.5, 1.5) probability density (comes down from infinity)."""
    return RateKernel(LambdaMeasure.beta(1.5))


@pytest.fixture(scope="session")
def beta_light_kernel():
    """Beta(1.5, 0.5) probability density (stays infinite)."""
    return RateKernel(LambdaMeasure.beta(0.5))


@pytest.fixture(scope="session")
def half_atom_kernel():
    return RateKernel(LambdaMeasure.unit_atom(0.5))


@pytest.fixture(scope="session")
def one_atom_kernel():
    return RateKernel(LambdaMeasure.unit_atom(1.0))
