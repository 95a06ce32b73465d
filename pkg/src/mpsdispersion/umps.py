"""Uniform matrix product states on an infinite chain.

Tensors are stored as an array ``A`` of shape ``(d, D, D)`` with ``A[s]``
the matrix for physical level ``s``. The transfer map built from a "top"
(ket) and "bottom" (bra) tensor is ``E = sum_s top[s] (x) conj(bottom[s])``.
Acting to the right it maps ``M -> sum_s top[s] M bottom[s]^dagger``, acting
to the left ``M -> sum_s bottom[s]^dagger M top[s]``; the pairing between a
left matrix ``X`` and a right matrix ``Y`` is ``Tr(X Y)``.
"""

import json
import logging
import warnings
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np
import scipy.sparse.linalg as spla

from . import linalg
from .errors import (
    CorruptFormat,
    DegenerateDominant,
    DimensionMismatch,
    Indefinite,
    InvariantViolation,
    NoConvergence,
    SingularGauge,
    ZeroState,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _frozen(a):
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class UniformMps:
    """Normalized uniform MPS with cached transfer-map fixed points.

    Construction checks shapes, finiteness, Hermiticity of ``l`` and ``r``,
    the fixed-point equations and ``Tr(l r) = 1``. The more expensive
    spectral checks live in :func:`check_invariants`.
    """

    A: np.ndarray
    l: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        for name in ("A", "l", "r"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        A, l, r = self.A, self.l, self.r
        if A.ndim != 3 or A.shape[1] != A.shape[2] or min(A.shape) < 1:
            raise DimensionMismatch(f"tensor shape {A.shape} is not (d, D, D)")
        D = A.shape[1]
        if l.shape != (D, D) or r.shape != (D, D):
            raise DimensionMismatch("fixed points must be D x D")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(l)) and np.all(np.isfinite(r))):
            raise InvariantViolation("non-finite entries")
        for name, M in (("l", l), ("r", r)):
            if np.linalg.norm(M - M.conj().T) > 1e-12 * max(np.linalg.norm(M), 1.0):
                raise InvariantViolation(f"{name} is not Hermitian")
        if abs(np.trace(l @ r) - 1) > 1e-12:
            raise InvariantViolation(f"Tr(l r) = {np.trace(l @ r)} != 1")
        tol = 1e-10
        if np.linalg.norm(transfer_left(A, A, l) - l) > tol * max(1.0, np.linalg.norm(l)):
            raise InvariantViolation("l is not a left fixed point")
        if np.linalg.norm(transfer_right(A, A, r) - r) > tol * max(1.0, np.linalg.norm(r)):
            raise InvariantViolation("r is not a right fixed point")

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def D(self):
        return self.A.shape[1]


def _check_pair(top, bottom, M=None):
    top, bottom = np.asarray(top), np.asarray(bottom)
    if top.shape != bottom.shape or top.ndim != 3:
        raise DimensionMismatch(f"tensor shapes {top.shape} and {bottom.shape} differ")
    if M is not None and np.shape(M) != top.shape[1:]:
        raise DimensionMismatch(f"matrix shape {np.shape(M)} vs bond dimension {top.shape[1]}")


def transfer_right(top, bottom, M):
    """``sum_s top[s] @ M @ bottom[s]^dagger``."""
    d, D, _ = top.shape
    T = top @ M
    return T.transpose(1, 0, 2).reshape(D, d * D) @ bottom.conj().transpose(0, 2, 1).reshape(d * D, D)


def transfer_left(top, bottom, M):
    """``sum_s bottom[s]^dagger @ M @ top[s]``."""
    d, D, _ = top.shape
    T = M @ top
    return bottom.conj().transpose(2, 0, 1).reshape(D, d * D) @ T.reshape(d * D, D)


def apply_transfer(top, bottom, side, M):
    """Act with ``E^{top}_{bottom}`` on a ``D x D`` matrix from ``side``."""
    _check_pair(top, bottom, M)
    if side == "left":
        return transfer_left(np.asarray(top), np.asarray(bottom), np.asarray(M))
    if side == "right":
        return transfer_right(np.asarray(top), np.asarray(bottom), np.asarray(M))
    raise ValueError(f"side must be 'left' or 'right', not {side!r}")


def transfer_map(top, bottom, side):
    """Transfer map as a linear operator on row-major flattened matrices."""
    top, bottom = np.asarray(top, dtype=complex), np.asarray(bottom, dtype=complex)
    _check_pair(top, bottom)
    D = top.shape[1]
    act = transfer_left if side == "left" else transfer_right

    def matvec(v):
        return act(top, bottom, np.reshape(v, (D, D))).ravel()

    return spla.LinearOperator((D * D, D * D), matvec=matvec, dtype=complex)


def dense_transfer(top, bottom):
    """Explicit ``D^2 x D^2`` matrix ``sum_s top[s] (x) conj(bottom[s])``."""
    return sum(np.kron(t, b.conj()) for t, b in zip(top, bottom))


def right_deflation(l, r):
    """Deflation pair for right-acting solves: ``M -> M - r Tr(l M)``."""
    return (np.asarray(l).T.ravel(), np.asarray(r).ravel())


def left_deflation(l, r):
    """Deflation pair for left-acting solves: ``M -> M - l Tr(M r)``."""
    return (np.asarray(r).T.ravel(), np.asarray(l).ravel())


def _hermitian_positive(v, D):
    M = np.reshape(v, (D, D))
    M = 0.5 * (M + M.conj().T)
    tr = np.trace(M).real
    if tr < 0:
        M = -M
    return M


def _fixed_points_from(A, tol):
    D = A.shape[1]
    _, vr = linalg.dominant_eigenpair(transfer_map(A, A, "right"), tol=tol)
    _, vl = linalg.dominant_eigenpair(transfer_map(A, A, "left"), tol=tol)
    r = _hermitian_positive(vr, D)
    l = _hermitian_positive(vl, D)
    for name, M in (("l", l), ("r", r)):
        w = np.linalg.eigvalsh(M)
        if w.min() < -1e-10 * w.max():
            raise Indefinite(f"fixed point {name} is not positive (min eigenvalue {w.min():.2e})")
    norm = np.trace(l @ r).real
    l = l / np.sqrt(norm)
    r = r / np.sqrt(norm)
    # fold the residual imaginary part of the trace into r
    r = r / np.trace(l @ r).real
    return l, r


def fixed_points(A, tol=linalg.DEFAULT_TOL):
    """Left and right fixed points of a normalized tensor, ``Tr(l r) = 1``."""
    A = np.asarray(A, dtype=complex)
    return _fixed_points_from(A, tol)


def normalize(A, tol=linalg.DEFAULT_TOL):
    """Rescale raw tensors so the transfer map has dominant eigenvalue 1.

    Raises
    ------
    ZeroState
        for all-zero tensors.
    DegenerateDominant
        if the dominant eigenvalue is not simple (non-injective MPS).
    """
    A = np.asarray(A, dtype=complex)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise DimensionMismatch(f"tensor shape {A.shape} is not (d, D, D)")
    if not np.any(A):
        raise ZeroState("all tensor entries vanish")
    w, _ = linalg.leading_eigenvalues(transfer_map(A, A, "right"), k=2, tol=tol)
    lam = w[0]
    if abs(lam) == 0:
        raise ZeroState("transfer map is nilpotent")
    if len(w) > 1 and abs(w[0]) - abs(w[1]) <= linalg.DEGENERACY_GAP * abs(w[0]):
        raise DegenerateDominant("transfer map has a degenerate dominant eigenvalue")
    A = A / np.sqrt(lam)
    if len(w) > 1 and abs(w[1] / lam) > 1 - 1e-10:
        warnings.warn("subdominant transfer eigenvalue within 1e-10 of the unit circle",
                      RuntimeWarning, stacklevel=2)
    l, r = _fixed_points_from(A, tol)
    return UniformMps(A, l, r)


def check_invariants(state, full_rank_tol=1e-12):
    """Run every UniformMps invariant, including the spectral ones.

    Near rank-deficient fixed points and a vanishing transfer gap only
    trigger a :class:`RuntimeWarning`.
    """
    for name, M in (("l", state.l), ("r", state.r)):
        w = np.linalg.eigvalsh(M)
        if w.min() < -1e-12 * w.max():
            raise InvariantViolation(f"{name} is not positive semidefinite")
        if w.min() <= full_rank_tol * w.max():
            warnings.warn(f"fixed point {name} is numerically rank deficient "
                          f"(eigenvalue ratio {w.min() / w.max():.1e})", RuntimeWarning, stacklevel=2)
    try:
        w, _ = linalg.leading_eigenvalues(transfer_map(state.A, state.A, "right"), k=2)
    except NoConvergence as exc:
        raise InvariantViolation(str(exc)) from exc
    if abs(w[0] - 1) > 1e-10:
        raise InvariantViolation(f"dominant transfer eigenvalue {w[0]} != 1")
    if len(w) > 1:
        if abs(w[1]) >= 1 - 1e-12:
            raise InvariantViolation("dominant transfer eigenvalue is not simple")
        if abs(w[1]) > 1 - 1e-10:
            warnings.warn("transfer gap below 1e-10", RuntimeWarning, stacklevel=2)
    return True


def gauge_transform(state, G):
    """Apply ``A^s -> G A^s G^{-1}``; fixed points transform covariantly."""
    G = np.asarray(G, dtype=complex)
    if G.shape != (state.D, state.D):
        raise DimensionMismatch("gauge matrix must be D x D")
    if not np.all(np.isfinite(G)) or np.linalg.cond(G) >= 1e12:
        raise SingularGauge("gauge matrix is (numerically) singular")
    Gi = np.linalg.inv(G)
    A = G @ state.A @ Gi
    l = Gi.conj().T @ state.l @ Gi
    r = G @ state.r @ G.conj().T
    l = 0.5 * (l + l.conj().T)
    r = 0.5 * (r + r.conj().T)
    r = r / np.trace(l @ r).real
    return UniformMps(A, l, r)


def two_site(P, Q):
    """``P[u] @ Q[v]`` for all ``u, v``; shape ``(d, d, D, D)``."""
    return P[:, None] @ Q[None, :]


def apply_two_site(h4, P, Q):
    """``sum_{uv} h[s,t,u,v] P[u] Q[v]``; shape ``(d, d, D, D)``."""
    d = h4.shape[0]
    PQ = two_site(P, Q)
    out = h4.reshape(d * d, d * d) @ PQ.reshape(d * d, -1)
    return out.reshape(PQ.shape)


def pair_left(X, Y):
    """``sum_{st} X[s,t]^dag Y[s,t]`` for two-site arrays."""
    D = X.shape[-1]
    return X.reshape(-1, D).conj().T @ Y.reshape(-1, D)


def pair_right(X, Y):
    """``sum_{st} X[s,t] Y[s,t]^dag`` for two-site arrays."""
    D = X.shape[-2]
    return X.transpose(2, 0, 1, 3).reshape(D, -1) @ Y.conj().transpose(0, 1, 3, 2).reshape(-1, D)


def open_first(X, bra):
    """``out[s] = sum_t X[s,t] bra[t]^dag``: leave the first site of a bond open."""
    d, _, Da, Dc = X.shape
    Xs = X.transpose(0, 2, 1, 3).reshape(d, Da, d * Dc)
    return Xs @ bra.conj().transpose(0, 2, 1).reshape(d * Dc, bra.shape[1])


def open_second(bra, X):
    """``out[t] = sum_s bra[s]^dag X[s,t]``: leave the second site of a bond open."""
    d, _, Db, Dc = X.shape
    Bm = bra.conj().transpose(2, 0, 1).reshape(bra.shape[2], d * Db)
    return Bm @ X.transpose(1, 0, 2, 3).reshape(d, d * Db, Dc)


def energy_density(state, h):
    """``<<l| H^{AA}_{AA} |r>>``: energy per bond of a nearest-neighbour Hamiltonian."""
    h4 = _h_tensor(h, state.d)
    hAA = apply_two_site(h4, state.A, state.A)
    AA = two_site(state.A, state.A)
    lhs = state.l @ hAA @ state.r
    val = np.vdot(AA, lhs)
    scale = max(1.0, np.abs(h4).max())
    if abs(val.imag) > 1e-10 * scale:
        warnings.warn(f"energy density has imaginary part {val.imag:.2e}", RuntimeWarning, stacklevel=2)
    return float(val.real)


def expectation_one_site(state, O):
    """``<<l| E_O |r>>`` with ``E_O = sum_{st} O[s,t] A^t (x) conj(A^s)``."""
    O = np.asarray(O, dtype=complex)
    if O.shape != (state.d, state.d):
        raise DimensionMismatch(f"operator shape {O.shape} vs d={state.d}")
    OA = np.tensordot(O, state.A, axes=(1, 0))
    return complex(np.einsum("ab,sbc,cd,sad->", state.l, OA, state.r, state.A.conj()))


def _h_tensor(h, d):
    elements = getattr(h, "elements", h)
    elements = np.asarray(elements, dtype=complex)
    if elements.shape != (d * d, d * d):
        raise DimensionMismatch(f"Hamiltonian shape {elements.shape} incompatible with d={d}")
    return elements.reshape(d, d, d, d)


def _qr_pos(M):
    Q, R = np.linalg.qr(M)
    ph = np.diag(R).copy()
    ph[ph == 0] = 1
    ph = ph / np.abs(ph)
    return Q * ph, ph.conj()[:, None] * R


def left_orthonormalize(A, L0=None, tol=1e-14, maxiter=5000):
    """Find ``AL`` and ``L`` with ``L A^s = AL^s L`` and ``sum AL^dag AL = 1``.

    Uses repeated positive QR decompositions. These converge at the rate set
    by the transfer gap, so when the first sweep stalls the iteration is
    restarted from the Arnoldi left fixed point.
    """
    A = np.asarray(A, dtype=complex)
    d, D, _ = A.shape
    L = np.eye(D, dtype=complex) if L0 is None else np.asarray(L0, dtype=complex)
    L = L / np.linalg.norm(L)
    delta = np.inf
    quick = min(maxiter, 200)
    for it in range(maxiter):
        if it == quick and D > 1:
            _, v = linalg.dominant_eigenpair(transfer_map(A, A, "left"), tol=1e-14)
            l = _hermitian_positive(v, D)
            _, L = _qr_pos(_sqrt_psd(l))
            L = L / np.linalg.norm(L)
        AL, Lnew = _qr_pos((L @ A).reshape(d * D, D))
        Lnew = Lnew / np.linalg.norm(Lnew)
        delta = np.linalg.norm(Lnew - L)
        L = Lnew
        if delta < tol:
            break
    else:
        logger.warning("left orthonormalization stopped at delta=%.2e", delta)
    return AL.reshape(d, D, D), L


def right_orthonormalize(A, R0=None, tol=1e-14, maxiter=5000):
    """Find ``AR`` and ``R`` with ``A^s R = R AR^s`` and ``sum AR AR^dag = 1``."""
    At = np.asarray(A, dtype=complex).transpose(0, 2, 1)
    L0 = None if R0 is None else np.asarray(R0).T
    ALt, Lt = left_orthonormalize(At, L0, tol=tol, maxiter=maxiter)
    return ALt.transpose(0, 2, 1), Lt.T


def mixed_canonical(state_or_A):
    """Left/right canonical tensors and diagonal center matrix.

    Returns ``(AL, AR, C)`` with ``AL C = C AR`` and ``C`` diagonal with the
    Schmidt values (descending, unit 2-norm).
    """
    if isinstance(state_or_A, UniformMps):
        A = state_or_A.A
        L0 = _sqrt_psd(state_or_A.l)
        R0 = _sqrt_psd(state_or_A.r)
    else:
        A = np.asarray(state_or_A, dtype=complex)
        L0 = R0 = None
    AL, L = left_orthonormalize(A, L0)
    AR, R = right_orthonormalize(A, R0)
    U, S, Vh = np.linalg.svd(L @ R)
    AL = U.conj().T @ AL @ U
    AR = Vh @ AR @ Vh.conj().T
    C = np.diag(S / np.linalg.norm(S)).astype(complex)
    return AL, AR, C


def _sqrt_psd(M):
    w, U = np.linalg.eigh(0.5 * (M + M.conj().T))
    w = np.clip(w, 0, None)
    return (U * np.sqrt(w)) @ U.conj().T


def from_canonical(AL, C):
    """UniformMps in left-canonical gauge: ``A = AL``, ``l = 1``, ``r = C C^dag``."""
    D = AL.shape[1]
    r = C @ C.conj().T
    r = 0.5 * (r + r.conj().T)
    return UniformMps(AL, np.eye(D), r / np.trace(r).real)


def right_canonical_state(AR, C):
    """UniformMps in right-canonical gauge: ``A = AR``, ``l = C^dag C``, ``r = 1``."""
    D = AR.shape[1]
    l = C.conj().T @ C
    l = 0.5 * (l + l.conj().T)
    return UniformMps(AR, l / np.trace(l).real, np.eye(D))


def schmidt_values(state):
    """Half-chain Schmidt spectrum, descending."""
    _, _, C = mixed_canonical(state)
    return np.real(np.diag(C))


def random_tensors(d, D, rng=None, real=False):
    """I.i.d. Gaussian tensors with variance ``1/D`` (not normalized)."""
    rng = np.random.default_rng(rng)
    A = rng.standard_normal((d, D, D))
    if not real:
        A = (A + 1j * rng.standard_normal((d, D, D))) / np.sqrt(2)
    return A / np.sqrt(D)


def random_state(d, D, rng=None, real=False):
    return normalize(random_tensors(d, D, rng, real=real))


# ---------------------------------------------------------------- persistence

def _schema():
    text = resources.files("mpsdispersion").joinpath("schemas/umps.schema.json").read_text()
    return json.loads(text)


def _fmt(x):
    return format(float(x), ".17g")


def _matrix_text(M):
    rows = []
    for row in np.asarray(M):
        rows.append("[" + ", ".join(f"[{_fmt(z.real)}, {_fmt(z.imag)}]" for z in row) + "]")
    return "[" + ", ".join(rows) + "]"


def dumps(state, include_fixed_points=True, metadata=None):
    """Serialize a state to the JSON text format.

    ``metadata`` is an optional JSON-serializable dict (run configuration,
    tool version) stored alongside the tensors.
    """
    parts = [f'"format_version": {FORMAT_VERSION}', f'"d": {state.d}', f'"D": {state.D}']
    tensors = ",\n    ".join(_matrix_text(M) for M in state.A)
    parts.append(f'"tensors": [\n    {tensors}\n  ]')
    if include_fixed_points:
        parts.append(f'"l": {_matrix_text(state.l)}')
        parts.append(f'"r": {_matrix_text(state.r)}')
    if metadata is not None:
        parts.append('"metadata": ' + json.dumps(metadata, sort_keys=True))
    return "{\n  " + ",\n  ".join(parts) + "\n}\n"


def save(state, path, include_fixed_points=True, metadata=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(state, include_fixed_points, metadata))


def _complex_matrix(data, D, what):
    arr = np.asarray(data, dtype=float)
    if arr.shape != (D, D, 2):
        raise CorruptFormat(f"{what} has shape {arr.shape[:2]}, expected ({D}, {D})")
    return arr[..., 0] + 1j * arr[..., 1]


def _document(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptFormat(f"not a valid state document: {exc}") from exc
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        raise CorruptFormat(f"schema violation: {exc.message}") from exc
    return doc


def read_metadata(path):
    """The ``metadata`` dict of a state file (empty if absent)."""
    with open(path, encoding="utf-8") as fh:
        return _document(fh.read()).get("metadata", {})


def loads(text):
    """Parse the JSON text format and re-verify every invariant."""
    doc = _document(text)
    d, D = doc["d"], doc["D"]
    if len(doc["tensors"]) != d:
        raise CorruptFormat(f"expected {d} tensors, found {len(doc['tensors'])}")
    A = np.stack([_complex_matrix(t, D, "tensor") for t in doc["tensors"]])
    if "l" in doc and "r" in doc:
        l = _complex_matrix(doc["l"], D, "l")
        r = _complex_matrix(doc["r"], D, "r")
    else:
        try:
            l, r = fixed_points(A)
        except (DegenerateDominant, NoConvergence, Indefinite) as exc:
            raise InvariantViolation(str(exc)) from exc
    try:
        state = UniformMps(A, l, r)
    except DimensionMismatch as exc:
        raise CorruptFormat(str(exc)) from exc
    check_invariants(state)
    return state


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
