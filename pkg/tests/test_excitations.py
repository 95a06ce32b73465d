import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpsdispersion import excitations as ex
from mpsdispersion import groundstate as gs
from mpsdispersion import linalg, models, oracle, umps
from mpsdispersion.errors import DimensionMismatch, EnergyMismatch, TooLarge
from mpsdispersion.validation import flipped_sector, ising_kink_sector, product_state

ISING = models.tfim(1.0, 0.0)
UP = product_state([1, 0])


def _crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _random_sector(seed, D=3, gauge="canonical"):
    state = umps.random_state(2, D, np.random.default_rng(seed))
    return ex.trivial_sector(state, models.xxz(1.0, 0.7), gauge=gauge)


@pytest.fixture(scope="module")
def tfim_kink(tfim_ground):
    h, res = tfim_ground
    return flipped_sector(res.state, h)


# ------------------------------------------------------------ sectors

def test_trivial_sector_of_identical_states():
    state = umps.random_state(2, 3, np.random.default_rng(0))
    sec = ex.make_sector(state, state, models.xxz(1.0, 2.0))
    assert not sec.topological
    assert sec.phase_phi == 0.0
    assert sec.mixed_fixed_points is not None


def test_ising_pair_is_topological():
    sec = ising_kink_sector()
    assert sec.topological
    assert sec.mixed_fixed_points is None
    assert sec.energy == pytest.approx(-1.0)


@pytest.mark.parametrize("gauge", ["canonical", "literal"])
def test_phase_of_rotated_partner_is_removed(gauge):
    state = umps.random_state(2, 3, np.random.default_rng(1))
    theta = 0.7
    rotated = umps.UniformMps(np.exp(1j * theta) * state.A, state.l, state.r)
    sec = ex.make_sector(state, rotated, models.xxz(1.0, 0.7), gauge=gauge)
    assert sec.phase_phi == pytest.approx(-theta, abs=1e-12)
    assert not sec.topological
    w, _ = linalg.leading_eigenvalues(umps.transfer_map(sec.Atilde.A, sec.A.A, "right"), k=1)
    assert abs(w[0] - 1) <= 1e-10


def test_subtracted_hamiltonian_has_zero_energy():
    sec = _random_sector(2)
    assert abs(umps.energy_density(sec.A, sec.h_subtracted)) <= 1e-12
    assert abs(umps.energy_density(sec.Atilde, sec.h_subtracted)) <= 1e-12


def test_unequal_energies_are_rejected():
    # a field along z favours up over down
    h = models.NNHamiltonian(2, np.diag([1.0, 0.0, 0.0, 0.0]))
    with pytest.raises(EnergyMismatch):
        ex.make_sector(UP, product_state([0, 1]), h)


def test_mismatched_dimensions_are_rejected():
    with pytest.raises(DimensionMismatch):
        ex.make_sector(UP, umps.random_state(2, 2, 0), ISING)
    with pytest.raises(DimensionMismatch):
        ex.make_sector(UP, UP, models.heisenberg_spin1())


# ------------------------------------------------------------ environments

def test_ising_environment():
    env = ex.build_environment(ex.trivial_sector(UP, ISING), 0.3)
    np.testing.assert_allclose(np.abs(env.V_L.ravel()), [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(env.K_L, 0, atol=1e-15)
    np.testing.assert_allclose(env.K_R, 0, atol=1e-15)


def test_null_space_of_left_canonical_state():
    sec = _random_sector(3)  # canonical gauge: A is left-canonical, l = 1
    np.testing.assert_allclose(sec.A.l, np.eye(3), atol=1e-12)
    env = ex.build_environment(sec, 0.0)
    stacked = np.concatenate([a.conj().T for a in sec.A.A], axis=1)  # [(A^s)^dag]_s
    # rows of stacked are indexed (beta, s) in the order s*D + beta; reorder to beta*d + s
    d, D = 2, 3
    L = stacked.reshape(D, d, D).transpose(0, 2, 1).reshape(D, D * d)
    assert np.linalg.norm(L @ env.V_L) <= 1e-12
    _, _, vh = np.linalg.svd(L)
    Q = vh[D:].conj().T
    assert np.linalg.norm(Q @ (Q.conj().T @ env.V_L) - env.V_L) <= 1e-12


@pytest.mark.parametrize("gauge", ["canonical", "literal"])
def test_environment_invariants(gauge):
    sec = _random_sector(4, gauge=gauge)
    env = ex.build_environment(sec, 1.1)
    L = ex.null_space_matrix(sec.A.A, env.l_half)
    assert np.linalg.norm(L @ env.V_L) <= 1e-12
    assert np.linalg.norm(env.V_L.conj().T @ env.V_L - np.eye(3)) <= 1e-12
    assert env.dim == (2 - 1) * 3 * 3
    assert abs(np.trace(env.K_L @ sec.A.r)) <= 1e-10
    assert abs(np.trace(sec.Atilde.l @ env.K_R)) <= 1e-10


def test_unknown_solver():
    with pytest.raises(ValueError):
        ex.build_environment(_random_sector(5), 0.0, solver="magic")


# ------------------------------------------------------------ B(x)

def test_zero_parameters_give_zero_tensor():
    env = ex.build_environment(_random_sector(6), 0.2)
    assert not np.any(ex.build_B(env, np.zeros(env.shape_x)))


def test_ising_spin_flip_tensor():
    env = ex.build_environment(ex.trivial_sector(UP, ISING), 0.0)
    B = ex.build_B(env, np.ones((1, 1)))
    np.testing.assert_allclose(np.abs(B.ravel()), [0.0, 1.0], atol=1e-15)


def test_build_B_rejects_wrong_shape():
    env = ex.build_environment(_random_sector(7), 0.0)
    with pytest.raises(DimensionMismatch):
        ex.build_B(env, np.zeros((2, 2)))
    with pytest.raises(DimensionMismatch):
        ex.apply_heff(env, np.zeros((1, 1)))


def test_left_gauge_condition_at_D4():
    rng = np.random.default_rng(8)
    env = ex.build_environment(_random_sector(8, D=4, gauge="literal"), 0.4)
    B = ex.build_B(env, _crandn(rng, *env.shape_x))
    assert np.abs(ex.gauge_residual(env, B)).max() <= 1e-12


# ------------------------------------------------------------ norm overlap

def _sectors_for_properties(tfim_kink):
    return [_random_sector(9), _random_sector(10, gauge="literal"), tfim_kink]


@pytest.mark.parametrize("kappa", [0.0, 0.9, -2.5, math.pi])
def test_norm_identity(kappa, tfim_kink):
    rng = np.random.default_rng(11)
    for sec in _sectors_for_properties(tfim_kink):
        env = ex.build_environment(sec, kappa)
        x, y = _crandn(rng, *env.shape_x), _crandn(rng, *env.shape_x)
        got = ex.norm_overlap(sec, kappa, ex.build_B(env, x), ex.build_B(env, y))
        assert abs(got - np.vdot(x, y)) <= 1e-10 * max(1.0, abs(np.vdot(x, y)))


@pytest.mark.parametrize("kappa", [0.0, 0.9, -2.5, math.pi])
def test_zero_modes_are_null(kappa, tfim_kink):
    rng = np.random.default_rng(12)
    for sec in _sectors_for_properties(tfim_kink):
        D = sec.A.D
        env = ex.build_environment(sec, kappa)
        X = _crandn(rng, D, D)
        zero = np.exp(1j * kappa) * sec.A.A @ X - X @ sec.Atilde.A
        B = ex.build_B(env, _crandn(rng, *env.shape_x))
        assert abs(ex.norm_overlap(sec, kappa, B, zero)) <= 1e-10
        if sec.topological:
            # without a unit mixed eigenvalue nothing is regularized away
            assert abs(ex.norm_overlap(sec, kappa, zero, zero)) <= 1e-10


def test_norm_overlap_is_sesquilinear():
    rng = np.random.default_rng(13)
    sec = _random_sector(13)
    B1, B2, B3 = (_crandn(rng, 2, 3, 3) for _ in range(3))
    a, b = 0.3 - 1.2j, 2.0 + 0.5j
    lhs = ex.norm_overlap(sec, 0.7, B1, a * B2 + b * B3)
    rhs = a * ex.norm_overlap(sec, 0.7, B1, B2) + b * ex.norm_overlap(sec, 0.7, B1, B3)
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)
    lhs = ex.norm_overlap(sec, 0.7, a * B2, B1)
    assert abs(lhs - np.conj(a) * ex.norm_overlap(sec, 0.7, B2, B1)) <= 1e-10 * abs(lhs)


def test_norm_overlap_rejects_wrong_shape():
    with pytest.raises(DimensionMismatch):
        ex.norm_overlap(_random_sector(14), 0.0, np.zeros((2, 2, 2)), np.zeros((2, 3, 3)))


# ------------------------------------------------------------ finite-window oracle

def test_product_state_window_of_one_site_is_exact():
    sec = ex.trivial_sector(UP, ISING)
    B = np.array([0.0, 1.0]).reshape(2, 1, 1)
    assert oracle.finite_window_overlap(sec.A, sec.Atilde, B, B, 0.4, 1) == pytest.approx(1.0)
    assert ex.norm_overlap(sec, 0.4, B, B) == pytest.approx(1.0)


@pytest.mark.parametrize("kappa", [0.0, 0.6, 2.9])
def test_overlap_matches_window_sum_for_random_D2_state(kappa):
    rng = np.random.default_rng(15)
    sec = ex.trivial_sector(umps.random_state(2, 2, rng), models.xxz(1.0, 0.7), gauge="literal")
    B, Bp = _crandn(rng, 2, 2, 2), _crandn(rng, 2, 2, 2)
    window = oracle.finite_window_overlap(sec.A, sec.Atilde, B, Bp, kappa, 60)
    assert abs(ex.norm_overlap(sec, kappa, B, Bp) - window) <= 1e-8


def test_overlap_matches_window_sum_in_kink_sector():
    rng = np.random.default_rng(16)
    h = models.tfim(1.0, 0.5)
    ground = gs.find_ground_state(h, gs.GroundSearchConfig(D=2)).state
    sec = flipped_sector(ground, h)
    assert sec.topological
    B, Bp = _crandn(rng, 2, 2, 2), _crandn(rng, 2, 2, 2)
    window = oracle.finite_window_overlap(sec.A, sec.Atilde, B, Bp, 1.3, 60)
    assert abs(ex.norm_overlap(sec, 1.3, B, Bp) - window) <= 1e-8


def test_energy_matches_window_sum_in_kink_sector():
    rng = np.random.default_rng(17)
    h = models.tfim(1.0, 0.5)
    ground = gs.find_ground_state(h, gs.GroundSearchConfig(D=2)).state
    sec = flipped_sector(ground, h)
    env = ex.build_environment(sec, 0.8)
    x, y = _crandn(rng, *env.shape_x), _crandn(rng, *env.shape_x)
    window = oracle.finite_window_energy(sec.A, sec.Atilde, ex.build_B(env, x),
                                         ex.build_B(env, y), 0.8, h, 60, bound=None)
    assert abs(np.vdot(x, ex.apply_heff(env, y)) - window) <= 1e-8


def test_zero_mode_window_sum_decays_with_N():
    rng = np.random.default_rng(18)
    sec = ex.trivial_sector(umps.random_state(2, 2, rng), models.xxz(1.0, 0.7), gauge="literal")
    X = _crandn(rng, 2, 2)
    zero = np.exp(0.5j) * sec.A.A @ X - X @ sec.Atilde.A
    env = ex.build_environment(sec, 0.5)
    B = ex.build_B(env, _crandn(rng, *env.shape_x))
    vals = [abs(oracle.finite_window_overlap(sec.A, sec.Atilde, B, zero, 0.5, N, bound=None))
            for N in (5, 15, 45)]
    assert vals[0] > vals[1] > vals[2] and vals[2] <= 1e-8


# ------------------------------------------------------------ effective Hamiltonian

def test_heff_of_zero_is_zero():
    env = ex.build_environment(_random_sector(19), 0.3)
    assert not np.any(ex.apply_heff(env, np.zeros(env.shape_x)))


@pytest.mark.parametrize("kappa", np.linspace(-math.pi, math.pi, 7))
def test_static_ising_domain_wall_costs_two(kappa):
    env = ex.build_environment(ising_kink_sector(), kappa)
    np.testing.assert_allclose(ex.dense_heff(env), [[2.0]], atol=1e-14)
    w, x = ex.lowest_excitations(env, 1)[0]
    assert w == pytest.approx(2.0, abs=1e-14)
    assert abs(abs(x[0, 0]) - 1) <= 1e-14


def test_single_ising_spin_flip_costs_four():
    env = ex.build_environment(ex.trivial_sector(UP, ISING), 1.0)
    np.testing.assert_allclose(ex.dense_heff(env), [[4.0]], atol=1e-14)


@pytest.mark.parametrize("solver", ["direct", "krylov"])
def test_dense_and_matrix_free_agree(solver, tfim_ground):
    rng = np.random.default_rng(20)
    h, res = tfim_ground
    kink = ex.make_sector(res.state, gs.degenerate_partner(res.state, models.site_operator("sx")), h)
    for sec in (_random_sector(20), _random_sector(21, D=6), kink):
        env = ex.build_environment(sec, 0.7, solver=solver)
        y = _crandn(rng, *env.shape_x)
        if env.dim <= 64:
            H = ex.dense_heff(env)
            assert np.linalg.norm(H @ y.ravel() - ex.apply_heff(env, y).ravel()) <= \
                1e-10 * np.linalg.norm(y) * max(1.0, np.linalg.norm(H, 2))


def test_direct_and_krylov_solvers_agree():
    rng = np.random.default_rng(22)
    sec = _random_sector(22, D=5)
    y = _crandn(rng, 5, 5)
    a = ex.apply_heff(ex.build_environment(sec, 2.2, solver="direct"), y)
    b = ex.apply_heff(ex.build_environment(sec, 2.2, solver="krylov"), y)
    assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(a)


@pytest.mark.parametrize("kappa", [0.0, 1.7])
def test_dense_heff_is_hermitian(kappa, tfim_kink):
    for sec in (_random_sector(23), tfim_kink):
        H = ex.dense_heff(ex.build_environment(sec, kappa))
        assert np.linalg.norm(H - H.conj().T) <= 1e-10 * np.linalg.norm(H)


def test_dense_cap():
    env = ex.build_environment(_random_sector(24, D=4), 0.0)
    with pytest.raises(TooLarge):
        ex.dense_heff(env, cap=8)


@pytest.mark.parametrize("kappa", [0.5, 2.0])
def test_spectrum_is_gauge_invariant(kappa):
    rng = np.random.default_rng(25)
    h = models.xxz(1.0, 1.5)
    state = umps.random_state(2, 3, rng)
    moved = umps.gauge_transform(state, np.eye(3) + 0.4 * _crandn(rng, 3, 3))
    for gauge in ("literal", "canonical"):
        w1 = ex.full_spectrum(ex.build_environment(ex.trivial_sector(state, h, gauge=gauge), kappa))
        w2 = ex.full_spectrum(ex.build_environment(ex.trivial_sector(moved, h, gauge=gauge), kappa))
        assert np.abs(w1 - w2).max() <= 1e-8


def test_full_inverse_matches_pseudo_inverse_away_from_zero_momentum():
    # the trivial-sector mixed map 1 - exp(i k) E is invertible for k != 0;
    # dropping the deflation must not move any physical eigenvalue
    sec = _random_sector(26)
    undeflated = dataclasses.replace(sec, mixed_fixed_points=None)
    for kappa in (0.9, 2.0, 1e-3):
        a = ex.full_spectrum(ex.build_environment(sec, kappa))
        b = ex.full_spectrum(ex.build_environment(undeflated, kappa))
        assert np.abs(a - b).max() <= 1e-9


def test_parameter_count():
    for D, d in ((1, 2), (4, 2), (3, 3)):
        state = umps.random_state(d, D, np.random.default_rng(D))
        h = models.heisenberg_spin1() if d == 3 else models.tfim(1.0, 0.3)
        env = ex.build_environment(ex.trivial_sector(state, h), 0.0)
        assert env.dim == (d - 1) * D * D
        assert len(ex.full_spectrum(env)) == (d - 1) * D * D


# ------------------------------------------------------------ eigenvalues

def test_tfim_kink_gap_at_zero_momentum(tfim_kink):
    w = ex.lowest_excitations(ex.build_environment(tfim_kink, 0.0), 1)[0][0]
    assert abs(w - 1.0) <= 1e-5


def test_too_many_levels_requested():
    env = ex.build_environment(ising_kink_sector(), 0.0)
    with pytest.raises(ValueError):
        ex.lowest_excitations(env, 2)


def test_lowest_excitations_match_full_spectrum():
    env = ex.build_environment(_random_sector(27, D=4), 1.2)
    got = [w for w, _ in ex.lowest_excitations(env, 3)]
    np.testing.assert_allclose(got, ex.full_spectrum(env)[:3], atol=1e-9)


def test_full_spectrum_counts_at_D12():
    env = ex.build_environment(_random_sector(28, D=12), 0.3)
    assert len(ex.full_spectrum(env)) == 144


@pytest.mark.slow
def test_full_spectrum_counts_at_D33():
    env = ex.build_environment(_random_sector(29, D=33), 0.3, solver="direct")
    assert len(ex.full_spectrum(env)) == 1089


def test_ising_full_spectrum_has_one_value():
    assert len(ex.full_spectrum(ex.build_environment(ising_kink_sector(), 0.0))) == 1


def test_kink_energy_non_increasing_along_nested_ladder():
    h = models.tfim(1.0, 0.5)
    omegas = []
    for res in gs.ground_state_ladder(h, [2, 4, 8]):
        sec = flipped_sector(res.state, h)
        omegas.append(ex.lowest_excitations(ex.build_environment(sec, math.pi), 1)[0][0])
    assert all(b <= a + 1e-8 for a, b in zip(omegas, omegas[1:]))


# ------------------------------------------------------------ sweeps and labels

def test_single_point_sweep_equals_lowest_excitations():
    sec = _random_sector(30)
    spec = ex.dispersion_sweep(sec, [0.4], k=2)
    want = [w for w, _ in ex.lowest_excitations(ex.build_environment(sec, 0.4), 2)]
    assert [e.omega for e in spec.entries] == pytest.approx(want, abs=1e-12)
    assert [e.level for e in spec.entries] == [0, 1]
    assert {e.sector for e in spec.entries} == {"trivial"}


def test_sweep_matches_tfim_dispersion(tfim_kink):
    kappas = np.linspace(0, math.pi, 9)
    spec = ex.dispersion_sweep(tfim_kink, kappas)
    for e in spec.entries:
        assert abs(e.omega - oracle.tfim_dispersion(0.5, e.kappa)) <= 1e-5
        assert e.sector == "nontrivial"


def test_reflection_symmetry(tfim_kink):
    kappas = [0.3, 1.1, 2.6]
    plus = ex.dispersion_sweep(tfim_kink, kappas).band()[1]
    minus = ex.dispersion_sweep(tfim_kink, [-q for q in kappas]).band()[1][::-1]
    np.testing.assert_allclose(plus, minus, atol=1e-9)


def test_sweep_order_is_independent_of_jobs():
    sec = _random_sector(31)
    kappas = [2.0, -1.0, 0.5, 3.0]
    a = ex.dispersion_sweep(sec, kappas, k=2, jobs=1)
    b = ex.dispersion_sweep(sec, kappas, k=2, jobs=3)
    assert [e.kappa for e in a.entries] == [e.kappa for e in b.entries]
    np.testing.assert_allclose([e.omega for e in a.entries], [e.omega for e in b.entries],
                               atol=1e-12)


def test_failing_points_are_collected(monkeypatch):
    from mpsdispersion.errors import NoConvergence
    original = ex._one_point

    def flaky(sector, kappa, *args):
        if kappa == 1.0:
            raise NoConvergence("synthetic failure")
        return original(sector, kappa, *args)

    monkeypatch.setattr(ex, "_one_point", flaky)
    spec = ex.dispersion_sweep(_random_sector(32), [0.0, 1.0, 2.0])
    assert [q for q, _ in spec.failures] == [1.0]
    assert "synthetic failure" in spec.failures[0][1]
    assert sorted(e.kappa for e in spec.entries) == [0.0, 2.0]


def test_degeneracy_labels():
    assert ex.degeneracy_labels([0.41, 0.41, 0.41, 0.9], 1e-6) == [3, 3, 3, 1]
    assert ex.degeneracy_labels([0.1, 0.2, 0.3]) == [1, 1, 1]
    assert ex.degeneracy_labels([]) == []


def test_wrap_momentum():
    assert ex.wrap_momentum(math.pi) == pytest.approx(-math.pi)
    assert ex.wrap_momentum(2 * math.pi + 0.5) == pytest.approx(0.5)
    assert ex.wrap_momentum(-0.25) == pytest.approx(-0.25)


def test_spectrum_csv_round_trip(tmp_path):
    spec = ex.dispersion_sweep(_random_sector(33), [0.0, 1.5], k=2)
    path = tmp_path / "spec.csv"
    spec.to_csv(path, {"model": "xxz"})
    text = path.read_text()
    assert text.startswith("# mpsdispersion ")
    assert '# config: {"model": "xxz"}' in text
    back = ex.Spectrum.read_csv(path)
    assert back.entries == spec.entries


def test_spectrum_json_document():
    import json
    spec = ex.dispersion_sweep(_random_sector(34), [0.0], k=1)
    doc = json.loads(spec.to_json(None, {"D": 3}))
    assert doc["metadata"] == {"D": 3}
    assert doc["entries"][0]["sector"] == "trivial"


# ------------------------------------------------------------ domain-wall stability

def test_stable_domain_wall_passes(tfim_kink):
    assert ex.check_domain_wall_stability(tfim_kink) == pytest.approx(1.0, abs=1e-5)


def test_unbroken_phase_is_rejected():
    # in-plane product state of the XXZ chain below the critical anisotropy
    h = models.xxz(1.0, 0.5)
    state = product_state([1, 1j])
    sec = flipped_sector(state, h)
    assert sec.topological
    with pytest.raises(EnergyMismatch):
        ex.check_domain_wall_stability(sec)


def test_trivial_sector_has_no_domain_wall():
    with pytest.raises(EnergyMismatch):
        ex.check_domain_wall_stability(_random_sector(35))


# ------------------------------------------------------------ properties

@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), D=st.integers(1, 4), kappa=st.floats(-math.pi, math.pi))
def test_norm_identity_property(seed, D, kappa):
    rng = np.random.default_rng(seed)
    sec = ex.trivial_sector(umps.random_state(2, D, rng), models.xxz(1.0, 0.3))
    env = ex.build_environment(sec, kappa)
    x, y = _crandn(rng, *env.shape_x), _crandn(rng, *env.shape_x)
    got = ex.norm_overlap(sec, kappa, ex.build_B(env, x), ex.build_B(env, y))
    assert abs(got - np.vdot(x, y)) <= 1e-10 * max(1.0, np.linalg.norm(x) * np.linalg.norm(y))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), D=st.integers(1, 4), kappa=st.floats(-math.pi, math.pi))
def test_heff_hermiticity_property(seed, D, kappa):
    rng = np.random.default_rng(seed)
    sec = ex.trivial_sector(umps.random_state(2, D, rng), models.xxz(1.0, 1.2))
    env = ex.build_environment(sec, kappa)
    x, y = _crandn(rng, *env.shape_x), _crandn(rng, *env.shape_x)
    a = np.vdot(x, ex.apply_heff(env, y))
    b = np.conj(np.vdot(y, ex.apply_heff(env, x)))
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), D=st.integers(1, 4))
def test_gauge_condition_property(seed, D):
    rng = np.random.default_rng(seed)
    sec = ex.trivial_sector(umps.random_state(2, D, rng), models.tfim(1.0, 0.4), gauge="literal")
    env = ex.build_environment(sec, 0.0)
    B = ex.build_B(env, _crandn(rng, *env.shape_x))
    assert np.abs(ex.gauge_residual(env, B)).max() <= 1e-12 * max(1.0, np.abs(B).max())
