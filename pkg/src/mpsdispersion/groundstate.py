"""Variational uniform-MPS ground states.

The optimizer works in mixed canonical form ``(AL, C, AR)``. Each step builds
the subtracted-Hamiltonian environments, measures the tangent-space gradient
``(1 - AL AL^dag) H_AC(AC)`` and updates the center tensors either by the
fixed-point (eigenvector) update or by an explicit imaginary-time step.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import linalg, umps
from .errors import DimensionMismatch, NotUnitary

logger = logging.getLogger(__name__)


@dataclass
class GroundSearchConfig:
    D: int
    grad_tol: float = 1e-10
    max_steps: int = 2000
    initial: object = None
    seed: int = 0
    method: str = "vumps"
    dtau: float = 0.5

    def __post_init__(self):
        if self.D < 1:
            raise ValueError("bond dimension must be positive")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.method not in ("vumps", "flow"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class GroundResult:
    state: umps.UniformMps
    energy: float
    grad_norm: float
    steps: int
    converged: bool
    history: list = field(default_factory=list)

    def schmidt_values(self):
        return umps.schmidt_values(self.state)


def _h4(h, d):
    el = np.asarray(getattr(h, "elements", h), dtype=complex)
    if el.shape != (d * d, d * d):
        raise DimensionMismatch("Hamiltonian and state have different physical dimension")
    return el.reshape(d, d, d, d)


def _energy(h4, AL, AC):
    hX = umps.apply_two_site(h4, AL, AC)
    return float(np.vdot(umps.two_site(AL, AC), hX).real)


class _Environments:
    """Energy environments of a mixed canonical state for a subtracted ``h``."""

    def __init__(self, h4, AL, AR, C, tol):
        D = AL.shape[1]
        eye = np.eye(D, dtype=complex)
        self.h4, self.AL, self.AR = h4, AL, AR
        hAA = umps.apply_two_site(h4, AL, AL)
        hL = umps.pair_left(umps.two_site(AL, AL), hAA)
        r = C @ C.conj().T
        self.Lh = linalg.solve_shifted_linear(
            umps.transfer_map(AL, AL, "left"), 1.0, hL,
            deflate=umps.left_deflation(eye, r), tol=tol).reshape(D, D)
        hBB = umps.apply_two_site(h4, AR, AR)
        hR = umps.pair_right(hBB, umps.two_site(AR, AR))
        lt = C.conj().T @ C
        self.Rh = linalg.solve_shifted_linear(
            umps.transfer_map(AR, AR, "right"), 1.0, hR,
            deflate=umps.right_deflation(lt, eye), tol=tol).reshape(D, D)

    def H_AC(self, X):
        h4, AL, AR = self.h4, self.AL, self.AR
        out = self.Lh @ X + X @ self.Rh
        out += umps.open_second(AL, umps.apply_two_site(h4, AL, X))
        out += umps.open_first(umps.apply_two_site(h4, X, AR), AR)
        return out

    def H_C(self, Y):
        h4, AL, AR = self.h4, self.AL, self.AR
        hX = umps.apply_two_site(h4, AL, Y @ AR)
        out = self.Lh @ Y + Y @ self.Rh
        out += umps.transfer_right(umps.open_second(AL, hX), AR, np.eye(Y.shape[0]))
        return out


def _project_out_AL(AL, G):
    d, D, _ = AL.shape
    ALs = AL.reshape(d * D, D)
    Gs = G.reshape(d * D, D)
    return (Gs - ALs @ (ALs.conj().T @ Gs)).reshape(d, D, D)


def tangent_gradient(AL, AR, C, h4, tol=linalg.DEFAULT_TOL):
    """Energy and projected gradient of a mixed canonical state.

    The gradient is returned as the tensor ``(1 - AL AL^dag) H_AC(AC)``, whose
    Frobenius norm equals that of the free-parameter gradient of the
    excitation parametrization at zero momentum.
    """
    AC = AL @ C
    e = _energy(h4, AL, AC)
    d = AL.shape[0]
    h4s = h4 - e * np.eye(d * d).reshape(d, d, d, d)
    env = _Environments(h4s, AL, AR, C, tol)
    return e, _project_out_AL(AL, env.H_AC(AC)), env


def gradient_norm(state, h):
    """Norm of the tangent-space energy gradient of ``state``."""
    AL, AR, C = umps.mixed_canonical(state)
    _, g, _ = tangent_gradient(AL, AR, C, _h4(h, state.d))
    return float(np.linalg.norm(g))


def _polar_left(M):
    U, _, Vh = np.linalg.svd(M, full_matrices=False)
    return U @ Vh


def _canonical_from_left(AL, C0=None):
    AR, R = umps.right_orthonormalize(AL, C0)
    U, S, Vh = np.linalg.svd(R)
    AL = U.conj().T @ AL @ U
    AR = Vh @ AR @ Vh.conj().T
    return AL, AR, np.diag(S / np.linalg.norm(S)).astype(complex)


def _initial_state(cfg, d, real=False):
    init = cfg.initial
    if isinstance(init, umps.UniformMps):
        if init.D != cfg.D:
            init = grow_bond_dimension(init, cfg.D, rng=cfg.seed)
        return umps.mixed_canonical(init)
    rng = np.random.default_rng(cfg.seed if init is None else init)
    # real couplings admit a real ground state; complex noise only slows convergence
    A = umps.random_tensors(d, cfg.D, rng, real=real)
    return umps.mixed_canonical(umps.normalize(A))


def find_ground_state(h, cfg, callback=None):
    """Minimize the energy density of ``h`` over uniform MPS of bond dimension ``cfg.D``.

    Returns a :class:`GroundResult`; when ``max_steps`` is exhausted the best
    state found is returned with ``converged=False``.
    """
    d = h.d
    h4 = _h4(h, d)
    AL, AR, C = _initial_state(cfg, d, real=not np.iscomplexobj(h4) or not np.any(h4.imag))
    D = AL.shape[1]
    history = []
    best = None
    dtau = cfg.dtau
    grad = np.inf
    step = 0
    for step in range(cfg.max_steps + 1):
        tol = float(np.clip(grad * 1e-3, 1e-12, 1e-6))
        e, g, env = tangent_gradient(AL, AR, C, h4, tol=tol)
        grad = float(np.linalg.norm(g))
        history.append((step, e, grad))
        if callback is not None:
            callback(step, e, grad)
        logger.debug("step %d energy %.15f grad %.3e", step, e, grad)
        # energies agree to rounding near convergence, so a converged step always wins
        if (best is None or grad <= cfg.grad_tol or e < best[1] - 1e-13
                or (e < best[1] + 1e-13 and grad < best[2])):
            best = ((AL, AR, C), e, grad)
        if grad <= cfg.grad_tol or step == cfg.max_steps:
            break
        AC = AL @ C
        if cfg.method == "vumps":
            etol = float(np.clip(grad * 1e-3, 1e-14, 1e-6))
            (_, ac), = linalg.hermitian_lowest_eigs(
                linalg.as_linear_map(lambda v: env.H_AC(v.reshape(d, D, D)).ravel(), d * D * D),
                1, tol=etol, v0=AC.ravel(), check=False)
            (_, c), = linalg.hermitian_lowest_eigs(
                linalg.as_linear_map(lambda v: env.H_C(v.reshape(D, D)).ravel(), D * D),
                1, tol=etol, v0=C.ravel(), check=False)
            AC_new, C_new = ac.reshape(d, D, D), c.reshape(D, D)
            AL_new = (_polar_left(AC_new.reshape(d * D, D)) @ _polar_left(C_new).conj().T)
            AL, AR, C = _canonical_from_left(AL_new.reshape(d, D, D), C)
        else:
            while True:
                AC_new = AC - dtau * env.H_AC(AC)
                C_new = C - dtau * env.H_C(C)
                AL_new = (_polar_left(AC_new.reshape(d * D, D)) @ _polar_left(C_new).conj().T)
                cand = _canonical_from_left(AL_new.reshape(d, D, D), C)
                e_new = _energy(h4, cand[0], cand[0] @ cand[2])
                if e_new <= e + 1e-14 or dtau < 1e-6:
                    AL, AR, C = cand
                    dtau = min(dtau * 1.2, 10.0)
                    break
                dtau *= 0.5
    (AL, AR, C), e, grad = best
    state = umps.from_canonical(AL, C)
    converged = grad <= cfg.grad_tol
    if not converged:
        logger.warning("ground search stopped after %d steps with gradient %.2e", step, grad)
    return GroundResult(state, e, grad, step, converged, history)


def grow_bond_dimension(state, D_new, noise=1e-8, rng=None):
    """Embed ``state`` into a larger bond dimension, padding with small noise."""
    if D_new < state.D:
        raise ValueError("cannot shrink the bond dimension")
    if D_new == state.D:
        return state
    rng = np.random.default_rng(rng)
    AL, _, C = umps.mixed_canonical(state)
    d, D = state.d, state.D
    A = noise * umps.random_tensors(d, D_new, rng)
    A[:, :D, :D] += AL
    return umps.normalize(A)


def ground_state_ladder(h, Ds, cfg_template=None, **kwargs):
    """Nested ground-state searches along ascending bond dimensions.

    Each run is seeded with the previous result padded to the next ``D``.
    """
    results = []
    prev = None
    for D in Ds:
        params = dict(kwargs)
        if cfg_template is not None:
            params = {**{k: getattr(cfg_template, k) for k in
                         ("grad_tol", "max_steps", "seed", "method", "dtau")}, **params}
        cfg = GroundSearchConfig(D=D, initial=prev.state if prev is not None else None, **params)
        res = find_ground_state(h, cfg)
        results.append(res)
        prev = res
    return results


def degenerate_partner(state, u):
    """Tensors ``At^s = sum_t u[s,t] A^t`` of the symmetry-related ground state."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (state.d, state.d):
        raise DimensionMismatch("flip operator must be d x d")
    if np.linalg.norm(u.conj().T @ u - np.eye(state.d)) > 1e-12:
        raise NotUnitary("flip operator is not unitary")
    At = np.tensordot(u, state.A, axes=(1, 0))
    # a unitary on the physical leg leaves the transfer map, hence l and r, unchanged
    return umps.UniformMps(At, state.l, state.r)


@dataclass
class SectorPairReport:
    equal_energy: bool
    overlap_dominant: float
    energy_A: float
    energy_Atilde: float


def check_sector_pair(A, Atilde, h, tol=1e-9):
    """Compare energies and the dominant mixed transfer eigenvalue of two states."""
    if A.d != Atilde.d or A.D != Atilde.D:
        raise DimensionMismatch("states differ in d or D")
    eA = umps.energy_density(A, h)
    eB = umps.energy_density(Atilde, h)
    w, _ = linalg.leading_eigenvalues(umps.transfer_map(Atilde.A, A.A, "right"), k=1)
    return SectorPairReport(abs(eA - eB) <= tol, float(abs(w[0])), eA, eB)
