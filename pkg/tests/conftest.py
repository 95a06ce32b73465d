import pytest

from mpsdispersion import groundstate as gs
from mpsdispersion import models


@pytest.fixture(scope="session")
def tfim_ground():
    """TFIM g=0.5 ground state at D=8, converged to the default tolerance."""
    h = models.tfim(1.0, 0.5)
    return h, gs.find_ground_state(h, gs.GroundSearchConfig(D=8))


@pytest.fixture(scope="session")
def xxz_ground():
    """Symmetry-broken XXZ Delta=4 ground state at D=6."""
    h = models.xxz(1.0, 4.0)
    return h, gs.find_ground_state(h, gs.GroundSearchConfig(D=6, grad_tol=1e-10))
