import numpy as np
import pytest

from precoder_forge.constellation import make_qam
from precoder_forge.quadrature import hermite_rule


@pytest.fixture(scope="session")
def rule3():
    return hermite_rule(3)


@pytest.fixture(scope="session")
def qam16():
    return make_qam(16)


@pytest.fixture(scope="session")
def qam4():
    return make_qam(4)


def random_psd(rng, n=2):
    b = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return b.conj().T @ b
