import numpy as np
import pytest

from electroelastic.charges import ChargeSystem, DielectricParams
from electroelastic.mesh import Region
from electroelastic.pbe import (PBEConfig, eval_energy, pbe_residual, solve_linear_component,
                                solve_nonlinear_component, solve_pbe)
from electroelastic.piola import DisplacementField, PiolaFields, compute_piola


def born(q=1.0):
    return ChargeSystem(np.zeros((1, 3)), [q], [1.0], [True])


def at_origin(mesh, values):
    return float(mesh.interpolate(values, np.zeros((1, 3)))[0])


def test_no_charges_gives_zero(coarse_ball):
    empty = ChargeSystem(np.zeros((0, 3)), [], [], [])
    for kappa in (0.0, 1.5):
        d = solve_pbe(coarse_ball, None, empty, DielectricParams(kappa=kappa))
        assert not np.any(d.phi_l) and not np.any(d.phi_n)


def test_homogeneous_medium_has_no_reaction_field(coarse_ball):
    d = solve_pbe(coarse_ball, None, born(), DielectricParams(eps_m=2.0, eps_s=2.0))
    assert np.abs(d.phi_l).max() <= 1e-12
    assert np.abs(d.phi_n).max() <= 1e-12


def test_born_linear_component_near_closed_form(ball):
    phi_l = solve_linear_component(ball, None, born(), DielectricParams())
    assert at_origin(ball, phi_l) == pytest.approx(-0.4875, rel=0.02)


def test_no_salt_means_no_nonlinear_part(coarse_ball):
    d = solve_pbe(coarse_ball, None, born(), DielectricParams(kappa=0.0))
    assert np.abs(d.phi_n).max() <= 1e-10


def test_weak_charge_is_nearly_linear(coarse_ball):
    diel = DielectricParams(kappa=1.0)
    a = at_origin(coarse_ball, solve_pbe(coarse_ball, None, born(0.1), diel).phi_r)
    b = at_origin(coarse_ball, solve_pbe(coarse_ball, None, born(0.1), diel, mode="linearized").phi_r)
    assert abs(a - b) <= 1e-3 * abs(b)


def test_identity_piola_paths_agree_bitwise(coarse_ball):
    diel = DielectricParams(kappa=1.0)
    zero = DisplacementField.zero(coarse_ball)
    runs = [solve_pbe(coarse_ball, None, born(), diel),
            solve_pbe(coarse_ball, PiolaFields.identity(coarse_ball), born(), diel),
            solve_pbe(coarse_ball, compute_piola(coarse_ball, zero), born(), diel, disp=zero)]
    for r in runs[1:]:
        assert np.array_equal(r.phi_l, runs[0].phi_l)
        assert np.array_equal(r.phi_n, runs[0].phi_n)


def test_components_split_cleanly(coarse_ball):
    diel = DielectricParams(kappa=1.0)
    phi_l = solve_linear_component(coarse_ball, None, born(), diel)
    phi_n, trace = solve_nonlinear_component(coarse_ball, None, born(), diel, phi_l)
    d = solve_pbe(coarse_ball, None, born(), diel)
    np.testing.assert_allclose(d.phi_l, phi_l, rtol=0, atol=1e-14)
    np.testing.assert_allclose(d.phi_n, phi_n, rtol=0, atol=1e-14)
    assert len(trace) == len(d.trace)


def test_energy_terms_vanish_without_salt(coarse_ball):
    e = eval_energy(coarse_ball, None, born(), DielectricParams(kappa=0.0), np.zeros(coarse_ball.n_vertices))
    assert e == 0.0


def test_energy_salt_term_bounded_below(coarse_ball):
    kappa = 0.7
    e = eval_energy(coarse_ball, None, born(), DielectricParams(kappa=kappa), np.zeros(coarse_ball.n_vertices))
    solvent = coarse_ball.volumes[coarse_ball.cells_in(Region.SOLVENT)].sum()
    assert e > kappa**2 * solvent


def test_newton_lowers_energy(coarse_ball):
    diel = DielectricParams(kappa=1.0)
    d = solve_pbe(coarse_ball, None, born(), diel)
    e_l = eval_energy(coarse_ball, None, born(), diel, d.phi_l)
    e_r = eval_energy(coarse_ball, None, born(), diel, d.phi_r)
    assert e_r <= e_l
    energies = [s.energy for s in d.trace]
    assert all(b <= a for a, b in zip(energies, energies[1:]))
    assert d.energy == pytest.approx(e_r, rel=1e-10)


def test_residual_vanishes_at_solution(coarse_ball):
    d = solve_pbe(coarse_ball, None, born(), DielectricParams(kappa=1.0))
    r = pbe_residual(d)
    noisy = d.__class__(**{**d.__dict__, "phi_n": d.phi_n + 1e-3})
    assert np.linalg.norm(r) < 1e-3 * np.linalg.norm(pbe_residual(noisy))


def test_reaction_field_shrinks_with_charge(coarse_ball):
    diel = DielectricParams(kappa=1.0)
    norms = [np.abs(solve_pbe(coarse_ball, None, born(s), diel).phi_r).max() for s in (1.0, 0.5, 0.25)]
    assert norms[0] >= norms[1] >= norms[2]


def test_unknown_mode_rejected(coarse_ball):
    with pytest.raises(ValueError):
        solve_pbe(coarse_ball, None, born(), DielectricParams(), mode="cubic")


def test_newton_cap_is_reported(coarse_ball):
    from electroelastic.pbe import NewtonDivergence

    with pytest.raises(NewtonDivergence):
        solve_pbe(coarse_ball, None, born(5.0), DielectricParams(kappa=2.0), PBEConfig(max_newton=1, tol=1e-14))
