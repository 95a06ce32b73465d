"""Nearest-neighbour Hamiltonians and standard site operators.

Two-site matrices use the index convention ``<s,t|h|u,v>`` at row
``s*d + t`` and column ``u*d + v``; ``s, u`` belong to the left site.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvariantViolation, UnknownOperator

_SQ2 = np.sqrt(2.0)

_OPERATORS = {
    2: {
        "sx": np.array([[0, 1], [1, 0]], dtype=complex),
        "sy": np.array([[0, -1j], [1j, 0]], dtype=complex),
        "sz": np.array([[1, 0], [0, -1]], dtype=complex),
    },
    3: {
        "Sx": np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / _SQ2,
        "Sy": np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex) / _SQ2,
        "Sz": np.diag([1, 0, -1]).astype(complex),
    },
}


@dataclass(frozen=True)
class NNHamiltonian:
    """Two-site coupling ``h`` of ``H = sum_n T^n h T^-n``."""

    d: int
    elements: np.ndarray

    def __post_init__(self):
        el = np.array(self.elements, dtype=complex)
        if el.shape != (self.d ** 2, self.d ** 2):
            raise DimensionMismatch(f"expected ({self.d**2}, {self.d**2}) matrix, got {el.shape}")
        if not np.all(np.isfinite(el)):
            raise InvariantViolation("non-finite Hamiltonian entries")
        if np.abs(el - el.conj().T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(el).max()):
            raise InvariantViolation("two-site Hamiltonian is not Hermitian")
        el = 0.5 * (el + el.conj().T)
        el.setflags(write=False)
        object.__setattr__(self, "elements", el)

    def tensor(self):
        """Four-index view ``h[s, t, u, v]``."""
        return self.elements.reshape(self.d, self.d, self.d, self.d)

    def shifted(self, e0):
        """``h - e0 * identity``."""
        return NNHamiltonian(self.d, self.elements - e0 * np.eye(self.d ** 2))


def site_operator(name, d=None):
    """Standard single-site operator by name.

    ``sx, sy, sz`` are Pauli matrices (``d = 2``), ``Sx, Sy, Sz`` spin-1
    matrices (``d = 3``); ``identity`` needs ``d``.
    """
    if name in ("identity", "id", "1"):
        if d is None:
            raise UnknownOperator("identity requires the physical dimension d")
        return np.eye(d, dtype=complex)
    for dim, ops in _OPERATORS.items():
        if name in ops:
            if d is not None and d != dim:
                raise UnknownOperator(f"operator {name!r} acts on d={dim}, not d={d}")
            return ops[name].copy()
    raise UnknownOperator(f"unknown site operator {name!r}")


def bond(O1, O2):
    return np.kron(O1, O2)


def xxz(J=1.0, Delta=1.0):
    """Spin-1/2 XXZ antiferromagnet after a spin flip on every second site.

    ``h = J (sx sx - sy sy - Delta sz sz)``.
    """
    sx, sy, sz = (site_operator(n) for n in ("sx", "sy", "sz"))
    return NNHamiltonian(2, J * (bond(sx, sx) - bond(sy, sy) - Delta * bond(sz, sz)))


def heisenberg_spin1(J=1.0):
    """Spin-1 Heisenberg coupling ``J S.S``."""
    ops = [site_operator(n) for n in ("Sx", "Sy", "Sz")]
    return NNHamiltonian(3, J * sum(bond(o, o) for o in ops).real.astype(complex))


def tfim(J=1.0, g=0.0):
    """Transverse-field Ising coupling with the field split evenly over the bond.

    ``h = -J sz sz - (g/2)(sx 1 + 1 sx)`` so that the chain Hamiltonian is
    ``-J sum sz sz - g sum sx``.
    """
    sx, sz = site_operator("sx"), site_operator("sz")
    one = np.eye(2)
    return NNHamiltonian(2, -J * bond(sz, sz) - 0.5 * g * (bond(sx, one) + bond(one, sx)))


MODELS = {
    "xxz": (xxz, {"J": 1.0, "delta": 4.0}),
    "heisenberg1": (heisenberg_spin1, {"J": 1.0}),
    "tfim": (tfim, {"J": 1.0, "g": 0.5}),
}

#: default flip operator and order parameter for the domain-wall sector
SYMMETRY = {
    "xxz": ("sx", "sz"),
    "tfim": ("sx", "sz"),
    "heisenberg1": (None, None),
}


def build_model(name, params=None):
    """Construct a registered model from CLI/config parameters."""
    if name not in MODELS:
        raise UnknownOperator(f"unknown model {name!r}; choose from {sorted(MODELS)}")
    ctor, defaults = MODELS[name]
    resolved = dict(defaults)
    for key, val in (params or {}).items():
        if key not in defaults:
            raise ValueError(f"model {name!r} has no parameter {key!r}")
        resolved[key] = float(val)
    if name == "xxz":
        return xxz(resolved["J"], resolved["delta"]), resolved
    if name == "tfim":
        return tfim(resolved["J"], resolved["g"]), resolved
    return heisenberg_spin1(resolved["J"]), resolved
