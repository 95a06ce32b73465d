"""Dense and matrix-free linear algebra kernels.

Linear maps are represented by :class:`scipy.sparse.linalg.LinearOperator`;
anything accepted by :func:`as_linear_map` (dense arrays, operators, or a
``(callable, dim)`` pair) can be passed where a map is expected.
"""

import logging
import math

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .errors import (
    DegenerateDominant,
    Indefinite,
    NoConvergence,
    NotHermitian,
    RankDeficient,
    SingularSystem,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
#: below this dimension maps are materialized and solved densely
DENSE_EIG_CUTOFF = 64
#: relative magnitude gap below which two leading eigenvalues count as degenerate
DEGENERACY_GAP = 1e-10


def as_linear_map(op, dim=None):
    """Wrap ``op`` as a complex :class:`~scipy.sparse.linalg.LinearOperator`."""
    if isinstance(op, spla.LinearOperator):
        return op
    if callable(op):
        if dim is None:
            raise ValueError("dimension required for a callable map")
        return spla.LinearOperator((dim, dim), matvec=op, dtype=complex)
    return spla.aslinearoperator(np.asarray(op))


def materialize(op):
    """Dense matrix of a linear map, column by column."""
    op = as_linear_map(op)
    n = op.shape[1]
    out = np.empty(op.shape, dtype=complex)
    eye = np.eye(n, dtype=complex)
    for j in range(n):
        out[:, j] = op.matvec(eye[:, j])
    return out


def fix_phase(v):
    """Rotate ``v`` so its largest-magnitude entry is real and positive."""
    flat = np.ravel(v)
    idx = int(np.argmax(np.abs(flat)))
    if flat[idx] == 0:
        return v
    return v * (abs(flat[idx]) / flat[idx])


def _check_hermitian(M, rtol):
    M = np.asarray(M)
    scale = max(np.linalg.norm(M), 1e-300)
    if np.linalg.norm(M - M.conj().T) > rtol * scale:
        raise NotHermitian("matrix asymmetry exceeds tolerance")


def hermitian_sqrt_and_invsqrt(M, floor=1e-14):
    """Square root and inverse square root of a Hermitian positive matrix.

    Eigenvalues are floored at ``floor * max_eigenvalue`` before inversion.

    Returns
    -------
    S, T : ndarray
        ``S @ S == M`` and ``T == inv(S)``.
    """
    M = np.asarray(M, dtype=complex)
    _check_hermitian(M, 1e-12)
    w, U = np.linalg.eigh(0.5 * (M + M.conj().T))
    wmax = max(np.max(np.abs(w)), 0.0)
    if w.min() < -1e-12 * max(wmax, 1e-300):
        raise Indefinite(f"eigenvalue {w.min():.3e} below zero")
    w = np.maximum(w, floor * wmax)
    if wmax == 0:
        raise Indefinite("zero matrix has no inverse square root")
    s = np.sqrt(w)
    S = (U * s) @ U.conj().T
    T = (U / s) @ U.conj().T
    return 0.5 * (S + S.conj().T), 0.5 * (T + T.conj().T)


def orthonormal_null_space(L):
    """Orthonormal basis of the null space of a full-row-rank matrix ``L``.

    For ``L`` of shape ``(m, n)`` the result has shape ``(n, n - m)``.
    """
    L = np.asarray(L, dtype=complex)
    m, n = L.shape
    _, sv, vh = np.linalg.svd(L, full_matrices=True)
    if sv.size == 0 or sv[0] == 0 or sv[-1] <= 1e-12 * sv[0]:
        raise RankDeficient("matrix is not of full row rank")
    return vh[m:].conj().T


def _random_start(n, seed=7):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def leading_eigenvalues(op, k=2, tol=DEFAULT_TOL):
    """Eigenvalues and eigenvectors of largest magnitude, sorted descending."""
    op = as_linear_map(op)
    n = op.shape[0]
    k = min(k, n)
    if n <= DENSE_EIG_CUTOFF or k >= n - 1:
        w, v = np.linalg.eig(materialize(op))
    else:
        try:
            w, v = spla.eigs(op, k=k, which="LM", tol=tol * 0.1,
                             v0=_random_start(n), maxiter=max(1000, 10 * n))
        except spla.ArpackNoConvergence as exc:
            raise NoConvergence(str(exc)) from exc
    order = np.argsort(-np.abs(w), kind="stable")[:k]
    return w[order], v[:, order]


def dominant_eigenpair(op, tol=DEFAULT_TOL):
    """Eigenvalue of largest magnitude and its unit eigenvector.

    The eigenvector phase is fixed so its largest entry is real positive.

    Raises
    ------
    DegenerateDominant
        if the two leading eigenvalues have equal magnitude.
    NoConvergence
        if the iterative solver fails or the residual is too large.
    """
    op = as_linear_map(op)
    n = op.shape[0]
    w, v = leading_eigenvalues(op, k=2, tol=tol)
    lam, vec = w[0], v[:, 0]
    if n > 1 and len(w) > 1:
        if abs(w[0]) - abs(w[1]) <= max(DEGENERACY_GAP, tol) * abs(w[0]):
            raise DegenerateDominant(
                f"leading eigenvalues {w[0]:.6g} and {w[1]:.6g} have equal magnitude")
    vec = fix_phase(vec / np.linalg.norm(vec))
    resid = np.linalg.norm(op.matvec(vec) - lam * vec)
    if resid > max(tol, 1e-11) * max(1.0, abs(lam)) * 10:
        raise NoConvergence(f"dominant eigenpair residual {resid:.2e}")
    return lam, vec


def _projector(deflate):
    if deflate is None:
        return lambda x: x
    left, right = (np.ravel(u) for u in deflate)
    norm = left @ right
    return lambda x: x - right * ((left @ x) / norm)


def solve_shifted_linear(op, z, rhs, deflate=None, tol=DEFAULT_TOL, x0=None, maxiter=None):
    """Solve ``(1 - z*op) x = P rhs`` with ``x`` in the range of ``P``.

    ``deflate=(u, v)`` removes the eigenpair with left vector ``u`` and
    right vector ``v``: ``P x = x - v (u.x) / (u.v)`` (plain, unconjugated
    dot products). Without deflation ``P`` is the identity.
    """
    op = as_linear_map(op)
    n = op.shape[0]
    proj = _projector(deflate)
    b = proj(np.asarray(rhs, dtype=complex).ravel())
    if z == 0:
        return b
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n, dtype=complex)

    def matvec(x):
        x = np.ravel(x)
        return proj(x - z * op.matvec(x))

    if n <= 4:
        M = materialize(spla.LinearOperator((n, n), matvec=matvec, dtype=complex))
        if deflate is not None:
            left, right = (np.ravel(u) for u in deflate)
            M = M + np.outer(right, left) / (left @ right)
        try:
            x = np.linalg.solve(M, b)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
        return proj(x)

    A = spla.LinearOperator((n, n), matvec=matvec, dtype=complex)
    restart = min(n, 40)
    if maxiter is None:
        maxiter = max(1, math.ceil(10 * n / restart))
    start = None if x0 is None else proj(np.asarray(x0, dtype=complex).ravel())
    x, info = spla.gmres(A, b, x0=start, rtol=tol, atol=0.0, restart=restart, maxiter=maxiter)
    x = proj(x)
    resid = np.linalg.norm(matvec(x) - b) / bnorm
    if resid > 10 * tol:
        # scipy's restarted gmres occasionally stops on its internal estimate
        x, info = spla.gmres(A, b, x0=x, rtol=tol, atol=0.0, restart=restart, maxiter=maxiter)
        x = proj(x)
        resid = np.linalg.norm(matvec(x) - b) / bnorm
    if resid > 10 * tol:
        if resid > 1e-3:
            raise SingularSystem(f"linear solve stagnated at relative residual {resid:.2e}")
        raise NoConvergence(f"linear solve reached relative residual {resid:.2e}")
    return x


def _probe_hermitian(op, n, rtol=1e-10):
    rng = np.random.default_rng(11)
    u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    Au, Av = op.matvec(u), op.matvec(v)
    scale = np.linalg.norm(u) * np.linalg.norm(v)
    scale *= max(1.0, np.linalg.norm(Au) / np.linalg.norm(u), np.linalg.norm(Av) / np.linalg.norm(v))
    if abs(np.vdot(u, Av) - np.conj(np.vdot(v, Au))) > rtol * scale:
        raise NotHermitian("linear map fails the Hermiticity probe")


def hermitian_lowest_eigs(op, k, tol=DEFAULT_TOL, v0=None, dense_cutoff=256, check=True):
    """The ``k`` smallest eigenpairs of a Hermitian map, ascending.

    Small maps (``dim <= dense_cutoff`` or ``k`` close to ``dim``) are
    materialized and solved densely; larger ones use implicitly restarted
    Lanczos followed by a Rayleigh-Ritz clean-up of the returned subspace.

    Returns
    -------
    list of (float, ndarray)
    """
    op = as_linear_map(op)
    n = op.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"cannot request {k} eigenpairs of a {n}-dimensional map")
    if check:
        _probe_hermitian(op, n)
    if n <= dense_cutoff or k >= n - 1:
        M = materialize(op)
        w, v = scipy.linalg.eigh(0.5 * (M + M.conj().T))
        w, v = w[:k], v[:, :k]
    else:
        start = _random_start(n) if v0 is None else np.asarray(v0, dtype=complex)
        ncv = min(n, max(2 * k + 1, 20))
        try:
            _, v = spla.eigsh(op, k=k, which="SA", tol=tol, v0=start, ncv=ncv,
                              maxiter=max(1000, 10 * n))
        except spla.ArpackNoConvergence as exc:
            raise NoConvergence(str(exc)) from exc
        q, _ = np.linalg.qr(v)
        Hq = np.column_stack([op.matvec(q[:, j]) for j in range(q.shape[1])])
        small = q.conj().T @ Hq
        w, c = np.linalg.eigh(0.5 * (small + small.conj().T))
        v = q @ c
        resid = np.linalg.norm(Hq @ c - v * w, axis=0)
        bad = resid > max(tol, 1e-10) * 1e2 * np.maximum(1.0, np.abs(w))
        if np.any(bad):
            raise NoConvergence(f"eigenpair residuals {resid[bad]}")
    out = []
    for j in range(k):
        out.append((float(w[j]), fix_phase(v[:, j] / np.linalg.norm(v[:, j]))))
    return out
