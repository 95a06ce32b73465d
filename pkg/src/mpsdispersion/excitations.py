"""Momentum-resolved single-quasiparticle excitations of a uniform MPS.

The excited state places one tensor ``B`` at site ``n`` with ``A`` tensors
to its left and ``Atilde`` tensors to its right, summed over ``n`` with
phase ``exp(i kappa n)``. ``B`` is parametrized by a free matrix ``x`` of
shape ``((d-1)D, D)`` as ``B^s = l^{-1/2} V^s x rt^{-1/2}``, where ``V`` spans
the null space of ``[(A^s)^dag l^{1/2}]_s``; in this parametrization the
norm matrix is the identity and excitation energies are the eigenvalues of
a Hermitian effective Hamiltonian on ``x``.

Matrix elements involve the inverses ``(1 - E^A_A)^{-1}``,
``(1 - Et)^{-1}`` and ``(1 - exp(+-i kappa) E_mixed)^{-1}``. Inverses of
maps with a unit eigenvalue are pseudo-inverses that vanish on that
eigenvector; the domain-wall sector uses full inverses.
"""

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from . import __version__, linalg, umps
from .errors import DimensionMismatch, EnergyMismatch, MpsError, TooLarge
from .models import NNHamiltonian

logger = logging.getLogger(__name__)

DENSE_CAP = 4096
#: bond dimensions up to this use factorized solves for the environment inverses
DIRECT_SOLVE_MAX_D = 16


@dataclass(frozen=True)
class Sector:
    """Pair of ground-state tensors defining an excitation sector.

    ``mixed_fixed_points`` holds the unit-eigenvalue left/right eigenvectors
    of the mixed transfer map ``E^A_At`` when the two states coincide
    physically, and is ``None`` in the domain-wall sector.
    """

    A: umps.UniformMps
    Atilde: umps.UniformMps
    topological: bool
    phase_phi: float
    h_subtracted: NNHamiltonian
    energy: float
    mixed_fixed_points: tuple = None
    gauge: str = "canonical"


def _normalized_pair(left, right):
    norm = np.trace(left @ right)
    return left, right / norm


def _mixed_unit_eigenvectors(A, At):
    if A.A.shape == At.A.shape and np.array_equal(A.A, At.A):
        return A.l, A.r
    _, vr = linalg.dominant_eigenpair(umps.transfer_map(A.A, At.A, "right"))
    _, vl = linalg.dominant_eigenpair(umps.transfer_map(A.A, At.A, "left"))
    D = A.D
    return _normalized_pair(vl.reshape(D, D), vr.reshape(D, D))


def make_sector(A, Atilde, h, gauge="canonical", energy_tol=1e-9, overlap_tol=1e-8):
    """Set up the excitation sector between ground states ``A`` and ``Atilde``.

    The relative phase of ``Atilde`` is fixed so that the dominant eigenvalue
    of ``E^At_A`` is real and positive, and the common energy density is
    subtracted from ``h``.

    With ``gauge="canonical"`` (default) ``A`` is brought to left-canonical
    and ``Atilde`` to right-canonical form before anything else, so that
    ``l = 1`` and ``rt = 1`` and no inverse square roots of small Schmidt
    values are needed. ``gauge="literal"`` uses the tensors as given.
    """
    if A.d != Atilde.d or A.D != Atilde.D:
        raise DimensionMismatch("states differ in physical or bond dimension")
    if h.d != A.d:
        raise DimensionMismatch("Hamiltonian and states differ in physical dimension")
    if gauge not in ("canonical", "literal"):
        raise ValueError(f"unknown gauge {gauge!r}")
    eA = umps.energy_density(A, h)
    eB = umps.energy_density(Atilde, h)
    if abs(eA - eB) > energy_tol:
        raise EnergyMismatch(f"energy densities differ: {eA:.12g} vs {eB:.12g}")
    same = Atilde is A or np.array_equal(Atilde.A, A.A)
    if gauge == "canonical":
        AL, AR, C = umps.mixed_canonical(A)
        A = umps.from_canonical(AL, C)
        if same:
            Atilde = umps.right_canonical_state(AR, C)
        else:
            _, ARt, Ct = umps.mixed_canonical(Atilde)
            Atilde = umps.right_canonical_state(ARt, Ct)
    if same:
        # AL C = C AR makes the mixed eigenvalue exactly 1
        lam = 1.0
    else:
        w, _ = linalg.leading_eigenvalues(umps.transfer_map(Atilde.A, A.A, "right"), k=1)
        lam = w[0]
    phi = 0.0 if abs(lam) < 1e-14 else -float(np.angle(lam))
    if phi != 0.0:
        Atilde = umps.UniformMps(np.exp(1j * phi) * Atilde.A, Atilde.l, Atilde.r)
    topological = abs(lam) < 1 - overlap_tol
    mixed = None
    if not topological:
        if gauge == "canonical" and same:
            # AL C = C AR: unit eigenvectors of E^{AL}_{AR} are C^dag (left) and C (right)
            mixed = (C.conj().T, C)
        else:
            mixed = _mixed_unit_eigenvectors(A, Atilde)
    return Sector(A, Atilde, topological, phi, h.shifted(eA), eA, mixed, gauge)


def trivial_sector(state, h, **kwargs):
    return make_sector(state, state, h, **kwargs)


@dataclass(frozen=True)
class ExcitationEnvironment:
    """Everything needed to apply the effective Hamiltonian at one momentum."""

    sector: Sector
    kappa: float
    V: np.ndarray            # (d, D, (d-1)D): V^s blocks of the null-space basis
    l_half: np.ndarray
    l_invhalf: np.ndarray
    rtilde_invhalf: np.ndarray
    K_L: np.ndarray
    K_R: np.ndarray
    hAA: np.ndarray          # subtracted h applied to the A A ket, (d, d, D, D)
    solver: str = "krylov"
    _lu: dict = field(default=None, repr=False, compare=False)

    @property
    def V_L(self):
        """Null-space basis as a ``(dD, (d-1)D)`` matrix, row index ``alpha*d + s``."""
        d, D, m = self.V.shape
        return self.V.transpose(1, 0, 2).reshape(D * d, m)

    @property
    def shape_x(self):
        d, D, m = self.V.shape
        return (m, D)

    @property
    def dim(self):
        m, D = self.shape_x
        return m * D


def wrap_momentum(kappa):
    """Map ``kappa`` into ``[-pi, pi)``."""
    return float((kappa + math.pi) % (2 * math.pi) - math.pi)


def null_space_matrix(A, l_half):
    """``L[alpha, beta*d + s] = [(A^s)^dag l^{1/2}]_{alpha beta}``."""
    d, D, _ = A.shape
    M = A.conj().transpose(0, 2, 1) @ l_half
    return M.transpose(1, 2, 0).reshape(D, D * d)


def _left_two_site(L, hK, Cbra, Dbra):
    """``sum_{st} (C^s D^t)^dag L hK[s,t]``."""
    return umps.pair_left(umps.two_site(Cbra, Dbra), L @ hK)


def _right_two_site(hK, R, Cbra, Dbra):
    """``sum_{st} hK[s,t] R (C^s D^t)^dag``."""
    return umps.pair_right(hK @ R, umps.two_site(Cbra, Dbra))


def _first_site_grad(L, hK, R, Dbra):
    """Derivative of ``<<L|H^{..}_{B D}|R>>`` with respect to ``conj(B^s)``."""
    return umps.open_first(L @ hK @ R, Dbra)


def _second_site_grad(Cbra, L, hK, R):
    """Derivative of ``<<L|H^{..}_{C B}|R>>`` with respect to ``conj(B^t)``."""
    return umps.open_second(Cbra, L @ hK @ R)


def build_environment(sector, kappa, solver="auto", tol=linalg.DEFAULT_TOL):
    """Precompute the null-space basis and energy environments at momentum ``kappa``."""
    A, At = sector.A, sector.Atilde
    d, D = A.d, A.D
    h4 = sector.h_subtracted.tensor()
    l_half, l_invhalf = linalg.hermitian_sqrt_and_invsqrt(A.l)
    _, rt_invhalf = linalg.hermitian_sqrt_and_invsqrt(At.r)
    V_L = linalg.orthonormal_null_space(null_space_matrix(A.A, l_half))
    V = V_L.reshape(D, d, (d - 1) * D).transpose(1, 0, 2)

    hAA = umps.apply_two_site(h4, A.A, A.A)
    hL = _left_two_site(A.l, hAA, A.A, A.A)
    K_L = linalg.solve_shifted_linear(
        umps.transfer_map(A.A, A.A, "left"), 1.0, hL,
        deflate=umps.left_deflation(A.l, A.r), tol=tol).reshape(D, D)
    hTT = umps.apply_two_site(h4, At.A, At.A)
    hR = _right_two_site(hTT, At.r, At.A, At.A)
    K_R = linalg.solve_shifted_linear(
        umps.transfer_map(At.A, At.A, "right"), 1.0, hR,
        deflate=umps.right_deflation(At.l, At.r), tol=tol).reshape(D, D)
    if solver == "auto":
        solver = "direct" if D <= DIRECT_SOLVE_MAX_D else "krylov"
    if solver not in ("direct", "krylov"):
        raise ValueError(f"unknown solver {solver!r}")
    env = ExcitationEnvironment(sector, wrap_momentum(kappa), V, l_half, l_invhalf, rt_invhalf,
                                K_L, K_R, hAA, solver, {})
    if solver == "direct":
        _factorize(env)
    return env


def _solve_specs(env):
    """The two momentum-dependent inverses: (map, shift, deflation)."""
    sec = env.sector
    A, At = sec.A.A, sec.Atilde.A
    phase = np.exp(1j * env.kappa)
    right_defl = left_defl = None
    if sec.mixed_fixed_points is not None:
        lm, rm = sec.mixed_fixed_points
        right_defl = umps.right_deflation(lm, rm)
        left_defl = umps.left_deflation(lm.conj().T, rm.conj().T)
    return {
        "right": (umps.transfer_map(A, At, "right"), phase, right_defl),
        "left": (umps.transfer_map(At, A, "left"), np.conj(phase), left_defl),
    }


def _factorize(env):
    for key, (op, z, defl) in _solve_specs(env).items():
        n = op.shape[0]
        M = np.eye(n, dtype=complex) - z * linalg.materialize(op)
        if defl is not None:
            u, v = (np.ravel(t) for t in defl)
            P = np.eye(n) - np.outer(v, u) / (u @ v)
            M = P @ M @ P + np.outer(v, u) / (u @ v)
        env._lu[key] = (scipy.linalg.lu_factor(M), defl)


def _inverse(env, key, rhs, workspace):
    D = rhs.shape[0]
    if env.solver == "direct":
        lu, defl = env._lu[key]
        b = rhs.ravel()
        if defl is not None:
            u, v = (np.ravel(t) for t in defl)
            b = b - v * ((u @ b) / (u @ v))
        return scipy.linalg.lu_solve(lu, b).reshape(D, D)
    op, z, defl = _solve_specs(env)[key] if workspace is None or "specs" not in workspace \
        else workspace["specs"][key]
    x0 = None if workspace is None else workspace.get(key)
    x = linalg.solve_shifted_linear(op, z, rhs, deflate=defl, x0=x0)
    if workspace is not None:
        workspace[key] = x
    return x.reshape(D, D)


def build_B(env, x):
    """``B^s = l^{-1/2} V^s x rt^{-1/2}`` as a ``(d, D, D)`` array."""
    x = np.asarray(x, dtype=complex)
    if x.shape != env.shape_x:
        raise DimensionMismatch(f"parameter shape {x.shape}, expected {env.shape_x}")
    return env.l_invhalf @ (env.V @ x) @ env.rtilde_invhalf


def x_from_gradient(env, G):
    """Pull a ``conj(B)``-gradient back to the free parameters."""
    d, D, m = env.V.shape
    Y = env.l_invhalf @ G @ env.rtilde_invhalf
    return env.V.reshape(d * D, m).conj().T @ Y.reshape(d * D, -1)


def gauge_residual(env, B):
    """``sum_s (A^s)^dag l B^s``; vanishes for every ``build_B`` output."""
    A = env.sector.A
    return umps.transfer_left(B, A.A, A.l)


def norm_overlap(sector, kappa, B, Bprime, tol=linalg.DEFAULT_TOL):
    """Coefficient of ``2 pi delta(kappa - kappa')`` in ``<Phi(B)|Phi(B')>``.

    Valid for arbitrary (not gauge-fixed) ``B`` and ``B'``; divergent
    ground-state components are removed by the pseudo-inverse.
    """
    A, At = sector.A, sector.Atilde
    B, Bp = np.asarray(B, dtype=complex), np.asarray(Bprime, dtype=complex)
    if B.shape != A.A.shape or Bp.shape != A.A.shape:
        raise DimensionMismatch("B tensors must have shape (d, D, D)")
    env = _SolveOnly(sector, wrap_momentum(kappa))
    phase = np.exp(1j * env.kappa)
    val = np.trace(A.l @ umps.transfer_right(Bp, B, At.r))
    R1 = _inverse(env, "right", umps.transfer_right(Bp, At.A, At.r), None)
    val += phase * np.trace(umps.transfer_left(A.A, B, A.l) @ R1)
    L1 = _inverse(env, "left", umps.transfer_left(Bp, A.A, A.l), None)
    val += np.conj(phase) * np.trace(L1 @ umps.transfer_right(At.A, B, At.r))
    return complex(val)


@dataclass
class _SolveOnly:
    sector: Sector
    kappa: float
    solver: str = "krylov"


def apply_heff(env, y, workspace=None):
    """Effective Hamiltonian applied to the parameter matrix ``y``.

    Returns ``z`` with ``<x, z> = B(x)^dag H_kappa B(y)`` for every ``x``:
    two same-site and two neighbouring-site local terms, two terms with the
    precomputed energy environments, and six geometric-series terms that
    share one right-acting and one left-acting inverse.
    """
    y = np.asarray(y, dtype=complex)
    if y.shape != env.shape_x:
        raise DimensionMismatch(f"parameter shape {y.shape}, expected {env.shape_x}")
    sec = env.sector
    h4 = sec.h_subtracted.tensor()
    A, At = sec.A.A, sec.Atilde.A
    l, rt = sec.A.l, sec.Atilde.r
    K_L, K_R = env.K_L, env.K_R
    ph = np.exp(1j * env.kappa)
    phc = np.conj(ph)
    Bp = build_B(env, y)

    h_BpAt = umps.apply_two_site(h4, Bp, At)
    h_ABp = umps.apply_two_site(h4, A, Bp)

    # B(x) and B(y) on the same bond
    G = _first_site_grad(l, h_BpAt + ph * h_ABp, rt, At)
    G += _second_site_grad(A, l, h_ABp + phc * h_BpAt, rt)
    # B(x), B(y) on the same site, energy to the right / left
    G += l @ Bp @ K_R + K_L @ Bp @ rt
    # B(y) to the right of B(x)
    R1 = _inverse(env, "right", umps.transfer_right(Bp, At, rt), workspace)
    G += ph * (K_L @ A @ R1)
    G += ph * _second_site_grad(A, l, env.hAA, R1)
    G += ph * ph * _first_site_grad(l, env.hAA, R1, At)
    # B(y) to the left of B(x)
    Lsum = phc * (umps.transfer_left(Bp, A, K_L) + _left_two_site(l, h_ABp, A, A))
    Lsum += phc * phc * _left_two_site(l, h_BpAt, A, A)
    L1 = _inverse(env, "left", Lsum, workspace)
    G += L1 @ At @ rt
    return x_from_gradient(env, G)


def heff_operator(env):
    """Effective Hamiltonian as a LinearOperator with its own solver workspace."""
    shape = env.shape_x
    workspace = {"specs": _solve_specs(env)} if env.solver == "krylov" else None

    def matvec(v):
        return apply_heff(env, np.reshape(v, shape), workspace).ravel()

    return spla.LinearOperator((env.dim, env.dim), matvec=matvec, dtype=complex)


def dense_heff(env, cap=DENSE_CAP):
    """Materialized effective Hamiltonian, column ``j`` = ``apply_heff(e_j)``."""
    if env.dim > cap:
        raise TooLarge(f"effective dimension {env.dim} exceeds dense cap {cap}")
    return linalg.materialize(heff_operator(env))


def lowest_excitations(env, k, tol=linalg.DEFAULT_TOL):
    """The ``k`` lowest excitation energies and unit-norm parameter matrices."""
    if k > env.dim:
        raise ValueError(f"requested {k} levels but only {env.dim} parameters exist")
    pairs = linalg.hermitian_lowest_eigs(heff_operator(env), k, tol=tol)
    return [(w, v.reshape(env.shape_x)) for w, v in pairs]


def full_spectrum(env, cap=DENSE_CAP):
    """All ``(d-1) D^2`` excitation energies from the dense effective Hamiltonian."""
    H = dense_heff(env, cap)
    return np.linalg.eigvalsh(0.5 * (H + H.conj().T))


def degeneracy_labels(omegas, rel_tol=1e-8):
    """Multiplicity of the near-degenerate group each sorted value belongs to."""
    omegas = list(omegas)
    labels = [0] * len(omegas)
    start = 0
    for i in range(1, len(omegas) + 1):
        if i == len(omegas) or abs(omegas[i] - omegas[i - 1]) > rel_tol * max(1.0, abs(omegas[i])):
            for j in range(start, i):
                labels[j] = i - start
            start = i
    return labels


@dataclass(frozen=True)
class SpectrumEntry:
    kappa: float
    level: int
    omega: float
    sector: str
    degeneracy: int


@dataclass
class Spectrum:
    entries: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def extend(self, other):
        self.entries.extend(other.entries)
        self.failures.extend(other.failures)

    def band(self, level=0, sector=None):
        """``(kappas, omegas)`` of one level, sorted by momentum."""
        pts = sorted((e.kappa, e.omega) for e in self.entries
                     if e.level == level and (sector is None or e.sector == sector))
        return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])

    def at(self, kappa, sector=None, atol=1e-12):
        return [e for e in self.entries
                if abs(e.kappa - kappa) <= atol and (sector is None or e.sector == sector)]

    def to_csv(self, path_or_buf, metadata=None):
        out = io.StringIO()
        out.write(f"# mpsdispersion {__version__}\n")
        if metadata:
            out.write("# config: " + json.dumps(metadata, sort_keys=True) + "\n")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["kappa", "level", "omega", "sector", "degeneracy"])
        for e in self.entries:
            writer.writerow([repr(e.kappa), e.level, repr(e.omega), e.sector, e.degeneracy])
        return _emit(out.getvalue(), path_or_buf)

    def to_json(self, path_or_buf, metadata=None):
        doc = {
            "tool": "mpsdispersion",
            "version": __version__,
            "metadata": metadata or {},
            "entries": [e.__dict__ for e in self.entries],
            "failures": [{"kappa": k, "error": msg} for k, msg in self.failures],
        }
        return _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", path_or_buf)

    @classmethod
    def read_csv(cls, path):
        with open(path, encoding="utf-8") as fh:
            rows = [line for line in fh if not line.startswith("#")]
        spec = cls()
        for row in csv.DictReader(rows):
            spec.entries.append(SpectrumEntry(float(row["kappa"]), int(row["level"]),
                                              float(row["omega"]), row["sector"],
                                              int(row["degeneracy"])))
        return spec


def _emit(text, path_or_buf):
    if path_or_buf is None:
        return text
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def _sector_tag(sector):
    return "nontrivial" if sector.topological else "trivial"


def _one_point(sector, kappa, k, rel_tol, dense, solver, tol):
    env = build_environment(sector, kappa, solver=solver)
    if dense:
        omegas = list(full_spectrum(env))[:k]
    else:
        omegas = [w for w, _ in lowest_excitations(env, k, tol=tol)]
    return omegas


def dispersion_sweep(sector, kappas, k=1, rel_tol=1e-8, dense=False, jobs=1,
                     solver="auto", tol=linalg.DEFAULT_TOL):
    """Lowest ``k`` excitation energies at every momentum in ``kappas``.

    Points are independent; a failing point is recorded in
    ``Spectrum.failures`` and the sweep continues. Output order follows
    ``kappas`` regardless of ``jobs``.
    """
    tag = _sector_tag(sector)
    kappas = [float(q) for q in kappas]

    def run(q):
        try:
            return q, _one_point(sector, q, k, rel_tol, dense, solver, tol), None
        except (MpsError, np.linalg.LinAlgError) as exc:
            logger.warning("momentum %.6f failed: %s", q, exc)
            return q, None, f"{type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, kappas))
    else:
        results = [run(q) for q in kappas]
    spec = Spectrum()
    for q, omegas, err in results:
        if err is not None:
            spec.failures.append((q, err))
            continue
        for level, (w, lab) in enumerate(zip(omegas, degeneracy_labels(omegas, rel_tol))):
            spec.entries.append(SpectrumEntry(q, level, float(w), tag, lab))
    return spec


def excitation_gap(sector, kappas=(0.0, math.pi), tol=linalg.DEFAULT_TOL):
    """Smallest lowest-level excitation energy over the momenta ``kappas``."""
    spec = dispersion_sweep(sector, kappas, k=1, tol=tol)
    if spec.failures:
        raise MpsError(f"gap evaluation failed: {spec.failures}")
    return min(e.omega for e in spec.entries)



#: domain-wall energies below ``-DOMAIN_WALL_TOL`` mark an unstable vacuum pair
DOMAIN_WALL_TOL = 1e-3


def check_domain_wall_energies(omegas, tol=DOMAIN_WALL_TOL):
    """Raise :class:`EnergyMismatch` if any domain-wall energy is clearly negative.

    Two genuinely degenerate symmetry-broken vacua cost a non-negative
    energy to join. A clearly negative kink energy means the pair only looks
    degenerate because the finite bond dimension broke a symmetry that the
    exact ground state keeps. Returns the smallest value.
    """
    lowest = min(omegas)
    if lowest < -tol:
        raise EnergyMismatch(
            f"domain wall energy {lowest:.6g} < 0: the flipped state is not a stable "
            "degenerate vacuum (no genuine symmetry breaking)")
    return lowest


def check_domain_wall_stability(sector, kappas=(0.0, math.pi / 2, math.pi), tol=DOMAIN_WALL_TOL):
    """Probe the lowest domain-wall band at ``kappas`` with :func:`check_domain_wall_energies`."""
    if not sector.topological:
        raise EnergyMismatch("sector has no domain wall")
    spec = dispersion_sweep(sector, kappas, k=1)
    if spec.failures:
        raise MpsError(f"domain-wall probe failed: {spec.failures}")
    return check_domain_wall_energies([e.omega for e in spec.entries], tol)
