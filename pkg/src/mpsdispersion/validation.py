"""Invariant, oracle and benchmark checks shared by ``mpsdispersion validate`` and the tests.

Each benchmark function returns the measured quantities as a dict; the
``CHECKS`` table pairs it with its pass condition. ``run_suite`` evaluates a
named suite and reports one :class:`CheckResult` per check.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import excitations as ex
from . import groundstate as gs
from . import models, oracle, umps
from .errors import MpsError

HALDANE_GAP = 0.41047925


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _rand(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def product_state(vec):
    """``D = 1`` uniform MPS of the single-site state ``vec``."""
    v = np.asarray(vec, dtype=complex)
    v = v / np.linalg.norm(v)
    return umps.UniformMps(v.reshape(-1, 1, 1), np.eye(1), np.eye(1))


def ising_kink_sector():
    h = models.tfim(1.0, 0.0)
    up = product_state([1, 0])
    return ex.make_sector(up, gs.degenerate_partner(up, models.site_operator("sx")), h)


def flipped_sector(state, h, flip="sx", **kwargs):
    partner = gs.degenerate_partner(state, models.site_operator(flip, state.d))
    return ex.make_sector(state, partner, h, **kwargs)


# ------------------------------------------------------------ property checks

def _property_sectors(seed=7):
    """A random trivial sector (D=3) and a TFIM domain-wall sector (D=4)."""
    rng = np.random.default_rng(seed)
    h = models.xxz(1.0, 0.7)
    random = ex.trivial_sector(umps.random_state(2, 3, rng), h)
    ht = models.tfim(1.0, 0.5)
    ground = gs.find_ground_state(ht, gs.GroundSearchConfig(D=4, grad_tol=1e-9, max_steps=200)).state
    return [("random-trivial", random), ("tfim-kink", flipped_sector(ground, ht))]


def property_metrics(seed=7, kappas=(0.0, 0.9, math.pi - 0.3)):
    """Worst-case deviations of the excitation-space identities over sample momenta."""
    rng = np.random.default_rng(seed)
    out = {"norm": 0.0, "zero_mode": 0.0, "gauge": 0.0, "dense_vs_matfree": 0.0,
           "hermiticity": 0.0, "probe_hermiticity": 0.0}
    for _, sec in _property_sectors(seed):
        d, D = sec.A.d, sec.A.D
        for q in kappas:
            env = ex.build_environment(sec, q, solver="direct")
            kry = ex.build_environment(sec, q, solver="krylov")
            x, y = _rand(rng, env.shape_x), _rand(rng, env.shape_x)
            bx, by = ex.build_B(env, x), ex.build_B(env, y)
            out["norm"] = max(out["norm"], abs(ex.norm_overlap(sec, q, bx, by) - np.vdot(x, y)))
            X = _rand(rng, (D, D))
            zero = np.exp(1j * q) * sec.A.A @ X - X @ sec.Atilde.A
            out["zero_mode"] = max(out["zero_mode"], abs(ex.norm_overlap(sec, q, bx, zero)))
            out["gauge"] = max(out["gauge"], np.abs(ex.gauge_residual(env, bx)).max())
            H = ex.dense_heff(env)
            diff = np.linalg.norm(H @ y.ravel() - ex.apply_heff(kry, y).ravel()) / np.linalg.norm(y)
            out["dense_vs_matfree"] = max(out["dense_vs_matfree"], diff)
            out["hermiticity"] = max(out["hermiticity"],
                                     np.linalg.norm(H - H.conj().T) / np.linalg.norm(H))
            a = np.vdot(x, ex.apply_heff(kry, y))
            b = np.conj(np.vdot(y, ex.apply_heff(kry, x)))
            out["probe_hermiticity"] = max(out["probe_hermiticity"], abs(a - b) / max(1.0, abs(a)))
    return out


def gauge_invariance_metric(seed=11, D=3, kappa=0.8):
    """Largest eigenvalue shift of ``dense_heff`` under a random gauge transform."""
    rng = np.random.default_rng(seed)
    h = models.xxz(1.0, 1.5)
    state = umps.random_state(2, D, rng)
    G = np.eye(D) + 0.3 * _rand(rng, (D, D))
    moved = umps.gauge_transform(state, G)
    worst = 0.0
    for gauge in ("literal", "canonical"):
        w1 = ex.full_spectrum(ex.build_environment(ex.trivial_sector(state, h, gauge=gauge), kappa))
        w2 = ex.full_spectrum(ex.build_environment(ex.trivial_sector(moved, h, gauge=gauge), kappa))
        worst = max(worst, np.abs(w1 - w2).max())
    return worst


def finite_window_metric(seed=3, kappa=0.6, N=60):
    """Deviation of ``norm_overlap`` and ``<x|H|y>`` from the windowed sums at ``D = 2``."""
    rng = np.random.default_rng(seed)
    h = models.tfim(1.0, 0.5)
    ground = gs.find_ground_state(h, gs.GroundSearchConfig(D=2, grad_tol=1e-10, max_steps=200)).state
    sec = ex.trivial_sector(ground, h)
    env = ex.build_environment(sec, kappa)
    B, Bp = _rand(rng, (2, 2, 2)), _rand(rng, (2, 2, 2))
    overlap = abs(ex.norm_overlap(sec, kappa, B, Bp)
                  - oracle.finite_window_overlap(sec.A, sec.Atilde, B, Bp, kappa, N))
    x, y = _rand(rng, env.shape_x), _rand(rng, env.shape_x)
    bx, by = ex.build_B(env, x), ex.build_B(env, y)
    energy = abs(np.vdot(x, ex.apply_heff(env, y))
                 - oracle.finite_window_energy(sec.A, sec.Atilde, bx, by, kappa, h, N, bound=None))
    return {"overlap": overlap, "energy": energy}


# ------------------------------------------------------------ benchmarks

def criterion_a1(points=33):
    sec = ising_kink_sector()
    kappas = np.linspace(-math.pi, math.pi, points, endpoint=False)
    spec = ex.dispersion_sweep(sec, kappas, k=1)
    return {"max_err": max(abs(e.omega - 2.0) for e in spec.entries),
            "points": len(spec.entries), "failures": len(spec.failures)}


def tfim_kink_sector(g, D, grad_tol=1e-10):
    h = models.tfim(1.0, g)
    res = gs.find_ground_state(h, gs.GroundSearchConfig(D=D, grad_tol=grad_tol))
    return flipped_sector(res.state, h), res


def criterion_a2(g=0.5, D=16, points=33):
    sec, res = tfim_kink_sector(g, D)
    kappas = np.linspace(0.0, math.pi, points)
    spec = ex.dispersion_sweep(sec, kappas, k=1)
    errs = [abs(e.omega - oracle.tfim_dispersion(g, e.kappa)) for e in spec.entries]
    return {"max_err": max(errs), "points": len(errs), "failures": len(spec.failures),
            "grad_norm": res.grad_norm}


def haldane_point(D, initial=None, nev=3, max_steps=2000):
    h = models.heisenberg_spin1()
    res = gs.find_ground_state(h, gs.GroundSearchConfig(D=D, grad_tol=1e-10, max_steps=max_steps,
                                                        initial=initial))
    env = ex.build_environment(ex.trivial_sector(res.state, h), math.pi)
    omegas = [w for w, _ in ex.lowest_excitations(env, nev)]
    return {"D": D, "omegas": omegas, "err": omegas[0] - HALDANE_GAP,
            "labels": ex.degeneracy_labels(omegas), "grad_norm": res.grad_norm, "state": res.state}


def criterion_a3(Ds=(32, 64), seed_steps=300):
    """Haldane gap at each ``D``; every search but the last is capped at ``seed_steps``.

    ``D = 32`` cuts through a Schmidt multiplet and stalls near gradient
    1e-8, so running it to the step limit only costs time. It still seeds the
    next bond dimension.
    """
    out = {}
    prev = None
    for i, D in enumerate(Ds):
        steps = 2000 if i == len(Ds) - 1 else seed_steps
        pt = haldane_point(D, initial=prev, max_steps=steps)
        prev = pt["state"]
        out[D] = pt
    return out


def xxz_sectors(D, delta=4.0, initial=None, grad_tol=1e-10, max_steps=2000):
    h = models.xxz(1.0, delta)
    res = gs.find_ground_state(h, gs.GroundSearchConfig(D=D, grad_tol=grad_tol,
                                                        max_steps=max_steps, initial=initial))
    return ex.trivial_sector(res.state, h), flipped_sector(res.state, h), res


def criterion_a4(D=12, delta=4.0, points=16, refine=8):
    """Sector sizes and two-kink continuum check for the XXZ chain.

    The per-momentum ``margin`` uses the kink band on a grid ``refine`` times
    finer than the trivial one; a coarse grid overestimates the continuum.
    """
    triv, kink, _ = xxz_sectors(D, delta)
    kappas = 2 * math.pi * np.arange(points) / points - math.pi
    lowest_triv, kink_band, counts = [], [], []
    for q in kappas:
        wt = ex.full_spectrum(ex.build_environment(triv, q))
        wk = ex.full_spectrum(ex.build_environment(kink, q))
        counts += [len(wt), len(wk)]
        lowest_triv.append(wt[0])
        kink_band.append(wk[0])
    n = points * refine
    fine = 2 * math.pi * np.arange(n) / n - math.pi
    band = [kink_band[i // refine] if i % refine == 0 else
            ex.lowest_excitations(ex.build_environment(kink, q), 1)[0][0]
            for i, q in enumerate(fine)]
    # fine[i] + pi = 2 pi i / n, so fine[i] + fine[m] == kappas[j] iff m = refine j - i - n/2 (mod n)
    continuum = [min(band[i] + band[(refine * j - i - n // 2) % n] for i in range(n))
                 for j in range(points)]
    margin = min(t - c for t, c in zip(lowest_triv, continuum))
    return {"counts": counts, "expected": D * D, "margin": margin,
            "min_trivial": min(lowest_triv), "two_kink_min": 2 * min(kink_band)}


def criterion_a5(Ds=(16, 32), delta=4.0):
    rows = []
    prev = None
    for D in Ds:
        _, kink, res = xxz_sectors(D, delta, initial=prev)
        prev = res.state
        rows.append({"D": D, "gap": ex.excitation_gap(kink), "energy_density": res.energy,
                     "grad_norm": res.grad_norm})
    return {"rows": rows, "diff": abs(rows[0]["gap"] - rows[-1]["gap"])}


def criterion_a7(Ds=(2, 4, 8)):
    g = 0.5
    h = models.tfim(1.0, g)
    exact = oracle.tfim_energy_density(g)
    ladder = gs.ground_state_ladder(h, Ds, grad_tol=1e-10)
    energies = [r.energy for r in ladder]
    ising = gs.find_ground_state(models.tfim(1.0, 0.0), gs.GroundSearchConfig(D=1, grad_tol=1e-12))
    return {"tfim_err": abs(energies[-1] - exact), "ising_energy": ising.energy,
            "ladder": energies,
            "monotone": all(b <= a + 1e-10 for a, b in zip(energies, energies[1:]))}


# ------------------------------------------------------------ suites

def _check(name, fn, cond, fmt):
    t = time.perf_counter()
    try:
        m = fn()
        ok, detail = bool(cond(m)), fmt(m)
    except (MpsError, np.linalg.LinAlgError, ValueError) as exc:
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, ok, detail, time.perf_counter() - t)


def _a3_fmt(m):
    return "; ".join(f"D={D}: err={p['err']:+.2e} labels={p['labels']}" for D, p in m.items())


CHECKS = {
    "A6-properties": (lambda: property_metrics(),
                      lambda m: (m["norm"] <= 1e-10 and m["zero_mode"] <= 1e-10 and m["gauge"] <= 1e-12
                                 and m["dense_vs_matfree"] <= 1e-10 and m["hermiticity"] <= 1e-10
                                 and m["probe_hermiticity"] <= 1e-10),
                      lambda m: ", ".join(f"{k}={v:.1e}" for k, v in m.items()), "fast"),
    "A6-gauge-invariance": (gauge_invariance_metric, lambda m: m <= 1e-8,
                            lambda m: f"max shift {m:.1e}", "fast"),
    "A6-finite-window": (finite_window_metric, lambda m: max(m.values()) <= 1e-8,
                         lambda m: f"overlap {m['overlap']:.1e}, energy {m['energy']:.1e}", "fast"),
    "A1-ising-kink": (criterion_a1, lambda m: m["max_err"] <= 1e-12 and m["failures"] == 0,
                      lambda m: f"max |omega-2| = {m['max_err']:.1e} over {m['points']} points", "fast"),
    "oracle-ed-tfim": (lambda: abs(oracle.ed_spectrum(models.tfim(1.0, 0.5), 8).ground_energy()
                                   - oracle.tfim_finite_ground_energy(0.5, 8)),
                       lambda m: m <= 1e-10, lambda m: f"|E_ED - E_JW| = {m:.1e}", "fast"),
    "A7-ground-state": (criterion_a7,
                        lambda m: m["tfim_err"] <= 1e-8 and m["ising_energy"] == -1.0 and m["monotone"],
                        lambda m: f"tfim err {m['tfim_err']:.1e}, ising {m['ising_energy']!r}, "
                                  f"monotone {m['monotone']}", "all"),
    "A2-tfim-dispersion": (criterion_a2, lambda m: m["max_err"] <= 1e-5 and m["failures"] == 0,
                           lambda m: f"max error {m['max_err']:.1e}", "all"),
    "A4-xxz-structure": (criterion_a4,
                         lambda m: (all(c == m["expected"] for c in m["counts"])
                                    and m["min_trivial"] >= m["two_kink_min"] - 1e-2
                                    and m["margin"] >= -1e-2),
                         lambda m: f"{len(m['counts'])} spectra of {m['expected']}, "
                                   f"min trivial {m['min_trivial']:.6f} vs two kinks "
                                   f"{m['two_kink_min']:.6f}, continuum margin {m['margin']:+.3f}",
                         "all"),
    "A5-xxz-gap-convergence": (criterion_a5, lambda m: m["diff"] <= 1e-6,
                               lambda m: f"|gap(16) - gap(32)| = {m['diff']:.1e}", "all"),
    "A3-haldane-gap": (criterion_a3,
                       lambda m: (abs(m[32]["err"]) <= 1e-3 and abs(m[64]["err"]) <= 1e-4
                                  and m[64]["labels"][:3] == [3, 3, 3]),
                       _a3_fmt, "all"),
}


def run_suite(suite="fast", names=None, report=None):
    """Run the checks of ``suite`` (``fast`` or ``all``) and return their results."""
    if suite not in ("fast", "all"):
        raise ValueError(f"unknown suite {suite!r}")
    results = []
    for name, (fn, cond, fmt, level) in CHECKS.items():
        if names is not None and name not in names:
            continue
        if suite == "fast" and level != "fast":
            continue
        res = _check(name, fn, cond, fmt)
        results.append(res)
        if report is not None:
            report(res)
    return results
