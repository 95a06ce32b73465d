"""Brute-force and analytic references.

Everything here is deliberately simple and shares no code paths with the
matrix-free excitation solver: exact diagonalization of periodic chains in
momentum sectors, the free-fermion transverse-field Ising formulas, and
explicit position-space sums over a finite window built from dense
Kronecker-product transfer matrices.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad

from .errors import TooLarge, WindowTooSmall

ED_MAX_DIM = 2 ** 16


@dataclass
class EDResult:
    """Spectrum of a periodic chain resolved by lattice momentum ``2 pi n / L``."""

    L: int
    sectors: list  # (n, ascending eigenvalues)

    def all_eigenvalues(self):
        return np.sort(np.concatenate([w for _, w in self.sectors]))

    def ground_energy(self):
        return float(min(w[0] for _, w in self.sectors if len(w)))

    def momentum(self, n):
        return 2 * math.pi * n / self.L


def _hamiltonian_sparse(h4, d, L):
    """Periodic ``sum_i h_{i,i+1}`` on the full ``d**L`` space (site 0 most significant)."""
    N = d ** L
    idx = np.arange(N)
    weights = d ** np.arange(L - 1, -1, -1)
    digits = (idx[:, None] // weights[None, :]) % d
    rows, cols, vals = [], [], []
    bonds = [(i, (i + 1) % L) for i in range(L)] if L > 2 else [(0, 1), (1, 0)]
    for i, j in bonds:
        for u in range(d):
            for v in range(d):
                mask = (digits[:, i] == u) & (digits[:, j] == v)
                src = idx[mask]
                for s in range(d):
                    for t in range(d):
                        c = h4[s, t, u, v]
                        if c == 0:
                            continue
                        rows.append(src + (s - u) * weights[i] + (t - v) * weights[j])
                        cols.append(src)
                        vals.append(np.full(src.size, c, dtype=complex))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N, N)), digits, weights


def ed_spectrum(h, L):
    """Exact spectrum of ``sum_i h_{i,i+1}`` on a periodic chain of ``L`` sites.

    Basis states are grouped into translation orbits and each momentum block
    is diagonalized densely.
    """
    d = h.d
    if L < 2:
        raise ValueError("need at least two sites")
    if d ** L > ED_MAX_DIM:
        raise TooLarge(f"d^L = {d ** L} exceeds {ED_MAX_DIM}")
    h4 = np.asarray(h.elements).reshape(d, d, d, d)
    H, digits, weights = _hamiltonian_sparse(h4, d, L)
    N = d ** L
    # translation by one site: the content of site i moves to site i+1
    shifted = np.roll(digits, 1, axis=1) @ weights
    orbit = np.empty((L, N), dtype=np.int64)
    orbit[0] = np.arange(N)
    for j in range(1, L):
        orbit[j] = shifted[orbit[j - 1]]
    rep = orbit.min(axis=0)
    returns = orbit[1:] == orbit[0][None, :]
    period = np.where(returns.any(axis=0), np.argmax(returns, axis=0) + 1, L)
    # s = T^m rep(s): orbit[m, rep(s)] == s
    back = np.argmax(orbit[:, rep] == orbit[0][None, :], axis=0)
    reps = np.unique(rep)
    # nonzero elements H[s, r] for representative columns r
    cols = H.tocsc()[:, reps].tocoo()
    src_rep, dst = reps[cols.col], cols.row
    dst_rep = rep[dst]
    weight = cols.data * np.sqrt(period[src_rep] / period[dst_rep])
    real = not np.any(np.imag(cols.data))
    sectors = []
    for n in range(L):
        if real and n > L - n:
            # a real Hamiltonian has conjugate blocks at k and -k
            sectors.append((n, sectors[L - n][1]))
            continue
        k = 2 * math.pi * n / L
        allowed = reps[(n * period[reps]) % L == 0]
        pos = np.full(N, -1)
        pos[allowed] = np.arange(len(allowed))
        keep = (pos[src_rep] >= 0) & (pos[dst_rep] >= 0)
        Hk = np.zeros((len(allowed), len(allowed)), dtype=complex)
        np.add.at(Hk, (pos[dst_rep[keep]], pos[src_rep[keep]]),
                  weight[keep] * np.exp(1j * k * back[dst[keep]]))
        w = np.linalg.eigvalsh(0.5 * (Hk + Hk.conj().T)) if len(allowed) else np.zeros(0)
        sectors.append((n, w))
    return EDResult(L, sectors)


def tfim_dispersion(g, kappa):
    """Elementary excitation energy ``2 sqrt(1 + g^2 - 2 g cos kappa)`` of the Ising chain."""
    if g < 0:
        raise ValueError("g must be non-negative")
    return 2.0 * np.sqrt(1.0 + g * g - 2.0 * g * np.cos(kappa))


def tfim_energy_density(g):
    """Exact ground-state energy per site of ``-sum sz sz - g sum sx``."""
    val, _ = quad(lambda k: np.sqrt(1 + g * g - 2 * g * np.cos(k)), 0.0, math.pi,
                  epsabs=1e-14, epsrel=1e-13, limit=200)
    return -val / math.pi


def tfim_finite_ground_energy(g, L):
    """Ground energy of the periodic ``L``-site chain (even fermion parity sector)."""
    k = (2 * np.arange(L) + 1) * math.pi / L
    return -float(np.sum(np.sqrt(1 + g * g - 2 * g * np.cos(k))))


# ------------------------------------------------------------ finite windows

def _E(top, bottom):
    return sum(np.kron(t, b.conj()) for t, b in zip(top, bottom))


def _row(M):
    """Row vector ``u`` with ``u @ vec(X) = Tr(M X)`` for row-major ``vec``."""
    return np.asarray(M).T.ravel()


def _projector_and_rate(M):
    """Projector removing a unit eigenvalue (if any) and the surviving decay rate."""
    w, vl, vr = _eig_lr(M)
    order = np.argsort(-np.abs(w))
    lead = w[order[0]]
    n = M.shape[0]
    if abs(abs(lead) - 1) < 1e-8:
        u, v = vl[:, order[0]].conj(), vr[:, order[0]]
        Q = np.eye(n) - np.outer(v, u) / (u @ v)
        rate = abs(w[order[1]]) if n > 1 else 0.0
    else:
        Q = np.eye(n)
        rate = abs(lead)
    return Q, rate


def _eig_lr(M):
    import scipy.linalg
    return scipy.linalg.eig(M, left=True, right=True)


def _check_window(rate, scale, N, bound):
    if rate >= 1:
        raise WindowTooSmall("transfer map has no decaying complement")
    est = scale * rate ** N / max(1e-300, 1 - rate)
    if bound is not None and est > bound:
        raise WindowTooSmall(f"estimated truncation error {est:.2e} above {bound:.2e} for N={N}")
    return est


def finite_window_overlap(A, Atilde, B, Bprime, kappa, N, bound=1e-8):
    """``sum_{|n| <= N} exp(i kappa n) <B at 0 | B' at n>`` with fixed-point boundaries.

    ``A`` and ``Atilde`` are :class:`~mpsdispersion.umps.UniformMps`; the
    left boundary is the left fixed point of ``A``, the right boundary the
    right fixed point of ``Atilde``. Geometric tails along a unit eigenvalue
    of the mixed transfer matrix are removed, matching the pseudo-inverse.
    """
    a, at = A.A, Atilde.A
    lrow, rvec = _row(A.l), Atilde.r.ravel()
    M = _E(a, at)
    Mt = _E(at, a)
    Q, rate = _projector_and_rate(M)
    Qt, rate_t = _projector_and_rate(Mt)
    left_r = lrow @ _E(a, B)
    right_r = _E(Bprime, at) @ rvec
    left_l = lrow @ _E(Bprime, a)
    right_l = _E(at, B) @ rvec
    scale = (np.linalg.norm(left_r) * np.linalg.norm(right_r)
             + np.linalg.norm(left_l) * np.linalg.norm(right_l))
    _check_window(max(rate, rate_t), scale, N, bound)
    total = lrow @ _E(Bprime, B) @ rvec
    vr = Q @ right_r
    vl = left_l @ Qt
    for n in range(1, N + 1):
        total += np.exp(1j * kappa * n) * (left_r @ vr)
        total += np.exp(-1j * kappa * n) * (vl @ right_l)
        vr = M @ vr
        vl = vl @ Mt
    return complex(total)


def _energy_density(A, h4):
    a = A.A
    two = np.einsum("sab,tbc->stac", a, a)
    hk = np.einsum("stuv,uvac->stac", h4, two)
    return float(np.real(np.einsum("ab,stbc,cd,stad->", A.l, hk, A.r, two.conj())))


def finite_window_energy(A, Atilde, B, Bprime, kappa, h, N, bound=1e-8):
    """``sum_{|m| <= N} exp(i kappa m) sum_j <B at 0 | h_j - e | B' at m>``.

    Each term is evaluated on the explicit chain segment from ``min(0, m) - N``
    to ``max(0, m) + N`` and ``e`` is the energy density of ``A``. Intended
    for gauge-fixed ``B``, ``B'`` (otherwise the sum does not converge).
    """
    d = A.d
    a, at = A.A, Atilde.A
    h4 = np.asarray(h.elements).reshape(d, d, d, d)
    h4 = h4 - _energy_density(A, h4) * np.eye(d * d).reshape(d, d, d, d)
    lrow, rvec = _row(A.l), Atilde.r.ravel()
    _, rate = _projector_and_rate(_E(a, at))
    _, rate_a = _projector_and_rate(_E(a, a))
    scale = np.abs(h4).max() * max(1.0, np.linalg.norm(B) * np.linalg.norm(Bprime)) * 4 * (N + 1)
    _check_window(max(rate, rate_a), scale, N, bound)

    def tensor(kind, pos, special):
        if pos < special:
            return a
        if pos > special:
            return at
        return kind

    total = 0.0
    for m in range(-N, N + 1):
        lo, hi = min(0, m) - N, max(0, m) + N + 1
        sites = range(lo, hi + 1)
        kets = [tensor(Bprime, k, m) for k in sites]
        bras = [tensor(B, k, 0) for k in sites]
        T = [_E(k_, b_) for k_, b_ in zip(kets, bras)]
        n = len(T)
        pre = [lrow]
        for t in T:
            pre.append(pre[-1] @ t)
        suf = [rvec]
        for t in reversed(T):
            suf.append(t @ suf[-1])
        suf = suf[::-1]  # suf[i] = T[i] ... T[n-1] r
        val = 0.0
        for i in range(n - 1):
            ket2 = np.einsum("uab,vbc->uvac", kets[i], kets[i + 1])
            bra2 = np.einsum("sab,tbc->stac", bras[i], bras[i + 1])
            hk = np.einsum("stuv,uvac->stac", h4, ket2)
            Hb = sum(np.kron(hk[s, t], bra2[s, t].conj()) for s in range(d) for t in range(d))
            val += pre[i] @ Hb @ suf[i + 2]
        total += np.exp(1j * kappa * m) * val
    return complex(total)
