"""Momentum-resolved elementary excitations on top of uniform MPS ground states."""

__version__ = "0.1.0"

from .errors import MpsError  # noqa: E402
from .models import NNHamiltonian, build_model, site_operator  # noqa: E402
from .umps import UniformMps  # noqa: E402

__all__ = ["MpsError", "NNHamiltonian", "UniformMps", "build_model", "site_operator", "__version__"]
