import numpy as np
import pytest

from mpsdispersion import groundstate as gs
from mpsdispersion import models, oracle, umps
from mpsdispersion.errors import DimensionMismatch, NotUnitary
from mpsdispersion.validation import product_state

SX = models.site_operator("sx")
SZ = models.site_operator("sz")


def test_config_validation():
    with pytest.raises(ValueError):
        gs.GroundSearchConfig(D=0)
    with pytest.raises(ValueError):
        gs.GroundSearchConfig(D=2, grad_tol=0)
    with pytest.raises(ValueError):
        gs.GroundSearchConfig(D=2, method="dmrg")


def test_classical_ising_product_state():
    h = models.tfim(1.0, 0.0)
    res = gs.find_ground_state(h, gs.GroundSearchConfig(D=1))
    assert res.converged
    assert res.energy == pytest.approx(-1.0, abs=1e-12)
    assert abs(umps.expectation_one_site(res.state, SZ)) == pytest.approx(1.0, abs=1e-6)


def test_tfim_energy_matches_free_fermions(tfim_ground):
    h, res = tfim_ground
    assert res.converged
    assert abs(res.energy - oracle.tfim_energy_density(0.5)) <= 1e-8


def test_result_is_stationary(tfim_ground):
    h, res = tfim_ground
    assert res.grad_norm <= 1e-10
    assert gs.gradient_norm(res.state, h) <= 1e-10
    assert res.energy == pytest.approx(umps.energy_density(res.state, h), abs=1e-13)


def test_search_is_deterministic_for_a_seed():
    h = models.tfim(1.0, 0.5)
    cfg = gs.GroundSearchConfig(D=3, seed=5, grad_tol=1e-9)
    a, b = gs.find_ground_state(h, cfg), gs.find_ground_state(h, cfg)
    assert np.array_equal(a.state.A, b.state.A)


def test_step_limit_returns_unconverged_best_state():
    h = models.tfim(1.0, 0.9)
    res = gs.find_ground_state(h, gs.GroundSearchConfig(D=6, max_steps=3))
    assert not res.converged and res.steps == 3
    assert res.grad_norm > 1e-10


def test_flow_method_reaches_the_same_energy():
    h = models.tfim(1.0, 0.5)
    # a symmetry-broken start keeps the flow away from cat states
    start = gs.grow_bond_dimension(product_state([1, 0.1]), 2, rng=0)
    res = gs.find_ground_state(h, gs.GroundSearchConfig(D=2, method="flow", grad_tol=1e-7,
                                                        max_steps=5000, initial=start))
    ref = gs.find_ground_state(h, gs.GroundSearchConfig(D=2, grad_tol=1e-10))
    assert res.converged
    assert abs(res.energy - ref.energy) <= 1e-10


def test_nested_ladder_is_variationally_monotone():
    h = models.tfim(1.0, 1.0)
    results = gs.ground_state_ladder(h, [2, 4, 8], grad_tol=1e-9)
    energies = [r.energy for r in results]
    assert all(b <= a + 1e-10 for a, b in zip(energies, energies[1:]))


def test_growing_the_bond_dimension_preserves_the_state(tfim_ground):
    h, res = tfim_ground
    grown = gs.grow_bond_dimension(res.state, 12, rng=0)
    assert grown.D == 12
    assert abs(umps.energy_density(grown, h) - res.energy) <= 1e-7
    with pytest.raises(ValueError):
        gs.grow_bond_dimension(res.state, 4)


# ------------------------------------------------------------ degenerate partners

def test_flip_of_up_is_down():
    down = gs.degenerate_partner(product_state([1, 0]), SX)
    assert umps.expectation_one_site(down, SZ).real == pytest.approx(-1.0)


def test_identity_flip_returns_same_state():
    state = umps.random_state(2, 3, np.random.default_rng(0))
    same = gs.degenerate_partner(state, np.eye(2))
    np.testing.assert_allclose(same.A, state.A)


def test_xxz_flip_reverses_order_parameter(xxz_ground):
    h, res = xxz_ground
    partner = gs.degenerate_partner(res.state, SX)
    m0 = umps.expectation_one_site(res.state, SZ).real
    m1 = umps.expectation_one_site(partner, SZ).real
    assert abs(m0) > 1e-3
    assert m1 == pytest.approx(-m0, abs=1e-12)
    assert abs(umps.energy_density(partner, h) - res.energy) <= 1e-10


def test_flip_must_be_unitary():
    with pytest.raises(NotUnitary):
        gs.degenerate_partner(product_state([1, 0]), np.diag([1.0, 2.0]))
    with pytest.raises(DimensionMismatch):
        gs.degenerate_partner(product_state([1, 0]), np.eye(3))


@pytest.mark.parametrize("seed", range(5))
def test_flip_is_an_involution(seed):
    state = umps.random_state(2, 4, np.random.default_rng(seed))
    twice = gs.degenerate_partner(gs.degenerate_partner(state, SX), SX)
    assert np.abs(twice.A - state.A).max() <= 1e-12


# ------------------------------------------------------------ sector pairs

def test_pair_with_itself():
    state = umps.random_state(2, 3, np.random.default_rng(1))
    rep = gs.check_sector_pair(state, state, models.xxz(1.0, 2.0))
    assert rep.equal_energy
    assert rep.overlap_dominant == pytest.approx(1.0, abs=1e-10)


def test_orthogonal_ising_product_states():
    up = product_state([1, 0])
    rep = gs.check_sector_pair(up, gs.degenerate_partner(up, SX), models.tfim(1.0, 0.0))
    assert rep.equal_energy
    assert rep.overlap_dominant == 0.0


def test_flipped_xxz_pair_is_distinct(xxz_ground):
    h, res = xxz_ground
    rep = gs.check_sector_pair(res.state, gs.degenerate_partner(res.state, SX), h)
    assert rep.equal_energy
    assert rep.overlap_dominant < 1 - 1e-6


def test_pair_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        gs.check_sector_pair(product_state([1, 0]), umps.random_state(2, 2, 0), models.tfim())


# ------------------------------------------------------------ spin-1 reference

# D=64 run of this package (gradient 8.0e-11, 68 steps). A three-point
# extrapolation of periodic ED energies at L = 6, 8, 10 agrees to 3e-3.
SPIN1_D64_ENERGY = -1.4014840336546044


@pytest.fixture(scope="module")
def spin1_d12():
    return gs.find_ground_state(models.heisenberg_spin1(), gs.GroundSearchConfig(D=12))


def test_spin1_energy_approaches_high_D_reference(spin1_d12):
    assert spin1_d12.converged
    err = spin1_d12.energy - SPIN1_D64_ENERGY
    # variational: the smaller bond dimension lies above, with the finite-D error of D=12
    assert 0 < err < 2e-4


@pytest.mark.xfail(strict=True, reason="D=12 is 1.0e-4 above the D=64 energy; 1e-6 needs larger D")
def test_spin1_energy_within_1e_6_of_high_D_reference(spin1_d12):
    assert abs(spin1_d12.energy - SPIN1_D64_ENERGY) <= 1e-6


def test_spin1_ed_energies_bracket_the_reference():
    h = models.heisenberg_spin1()
    per_site = [oracle.ed_spectrum(h, L).ground_energy() / L for L in (6, 8)]
    # periodic even chains converge from below
    assert per_site[0] < per_site[1] < SPIN1_D64_ENERGY
