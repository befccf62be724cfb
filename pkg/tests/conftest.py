import numpy as np
import pytest

from kummer_gluing import assembly, ends
from kummer_gluing.cross_section import CrossSectionSpec, spectrum


@pytest.fixture(scope="session")
def p3_system():
    return ends.default_system()


@pytest.fixture(scope="session")
def s3_small():
    return spectrum(CrossSectionSpec("sphere3", 1.0, 4))


@pytest.fixture(scope="session")
def geom64():
    return assembly.assemble(R=64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
