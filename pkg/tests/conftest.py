import numpy as np
import pytest
from hypothesis import settings

from damageid.bench_sim import make_scenario
from damageid.structural_model import ModelDefinition, assemble, canonical_truss31

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

SHEAR_K = 176.729e6
SHEAR_M = 100e3


@pytest.fixture(scope="session")
def shear10_system():
    return assemble(ModelDefinition.shear_building(10, SHEAR_K, SHEAR_M))


@pytest.fixture(scope="session")
def truss31_system():
    return assemble(canonical_truss31())


@pytest.fixture(scope="session")
def shear10():
    return make_scenario("shear10", seed=0)


@pytest.fixture(scope="session")
def truss31():
    return make_scenario("truss31", seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
