import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from electroelastic.charges import ChargeSystem, DielectricParams
from electroelastic.coupled import ionic_shift_scenario, state_forces, two_sphere_scenario
from electroelastic.forces import (ForceSet, assemble_surface_force, build_perturbation_ledger,
                                   charge_site_potential, compute_forces, fit_gaussian, net_forces,
                                   site_force, write_blob_csv, write_face_csv)
from electroelastic.mesh import FaceTag
from electroelastic.pbe import solve_pbe
from electroelastic.piola import DisplacementField, PiolaFields, compute_piola


def born(q=1.0):
    return ChargeSystem(np.zeros((1, 3)), [q], [1.0], [True])


def blob_mass(a, sigma, R):
    return quad(lambda r: 4 * np.pi * r * r * a * np.exp(-r * r / sigma), 0.0, R, epsabs=0, epsrel=1e-13)[0]


# ------------------------------------------------------------------ site values

def test_site_potential_homogeneous_single(coarse_ball):
    d = solve_pbe(coarse_ball, None, born(), DielectricParams(eps_m=2.0, eps_s=2.0))
    assert abs(charge_site_potential(d, 0)) <= 1e-12


def test_site_potential_born(ball):
    d = solve_pbe(ball, None, born(), DielectricParams())
    assert charge_site_potential(d, 0) == pytest.approx(-0.4875, rel=0.02)


def test_site_potential_homogeneous_pair(coarse_ball):
    pos = np.array([[-0.4, 0.0, 0.0], [0.4, 0.0, 0.0]])
    ch = ChargeSystem(pos, [1.0, -0.5], 0.5, True)
    d = solve_pbe(coarse_ball, None, ch, DielectricParams(eps_m=2.0, eps_s=2.0))
    assert charge_site_potential(d, 0) == pytest.approx(-0.5 / (2.0 * 0.8), rel=1e-10)
    assert charge_site_potential(d, 1) == pytest.approx(1.0 / (2.0 * 0.8), rel=1e-10)


def test_born_site_force_vanishes_by_symmetry(coarse_ball):
    d = solve_pbe(coarse_ball, None, born(), DielectricParams(kappa=1.0))
    assert np.linalg.norm(site_force(d, 0)) < 1e-10


# ------------------------------------------------------------------ gaussian blobs

def test_zero_force_gives_zero_blob():
    b = fit_gaussian(0.0, 1.0, 1e-6, 1)
    assert b.a == 0.0
    assert not np.any(b(np.random.default_rng(0).normal(size=(10, 3))))


def test_blob_constraints_by_independent_quadrature():
    b = fit_gaussian(1.0, 1.0, 1e-6, 1)
    assert blob_mass(b.a, b.sigma, 1.0) == pytest.approx(1.0, rel=1e-8)
    assert b.a * np.exp(-1.0 / b.sigma) == pytest.approx(1e-6, rel=1e-8)


def test_doubling_force_doubles_mass():
    b1, b2 = fit_gaussian(1.0, 1.0, 1e-6, 1), fit_gaussian(2.0, 1.0, 1e-6, 1)
    assert blob_mass(b2.a, b2.sigma, 1.0) / blob_mass(b1.a, b1.sigma, 1.0) == pytest.approx(2.0, rel=1e-8)
    assert b2.sigma < b1.sigma  # more mass at fixed edge value means a narrower blob


@given(st.floats(1e-3, 1e3), st.floats(0.5, 2.5), st.integers(1, 10))
def test_blob_conservation_property(A, R, n_f):
    b = fit_gaussian(A, R, 1e-6, n_f)
    assert blob_mass(b.a, b.sigma, R) == pytest.approx(A, rel=1e-6)
    assert b.a * np.exp(-R * R / b.sigma) == pytest.approx(1e-6 / n_f, rel=1e-8)


def test_tiny_force_warns_and_zeroes():
    with pytest.warns(RuntimeWarning, match="zero blob"):
        b = fit_gaussian(1e-9, 1.0, 1e-6, 1)
    assert b.a == 0.0


def test_blob_parameters_validated():
    with pytest.raises(ValueError):
        fit_gaussian(1.0, 1.0, 0.0, 1)


# ------------------------------------------------------------------ assembled forces

def test_homogeneous_medium_has_no_forces(coarse_ball):
    d = solve_pbe(coarse_ball, None, born(), DielectricParams(eps_m=2.0, eps_s=2.0))
    f = compute_forces(d, 1e-6)
    assert np.abs(f.surface).max() <= 1e-12
    assert not np.any(f.body)


def test_born_body_force_is_balanced(coarse_ball):
    f = compute_forces(solve_pbe(coarse_ball, None, born(), DielectricParams()), 1e-6)
    total = np.linalg.norm(f.integrated_body())
    assert total <= 1e-6 * max(f.body_norm(1.0), 1e-300) or total == 0.0


def test_offcentre_charge_blob_conserves_force(coarse_ball):
    ch = ChargeSystem(np.array([[0.3, 0.1, 0.0]]), [1.0], [0.5], [True])
    f = compute_forces(solve_pbe(coarse_ball, None, ch, DielectricParams()), 1e-6)
    b = f.blobs[0]
    assert b.a > 0
    assert blob_mass(b.a, b.sigma, b.radius) == pytest.approx(b.magnitude, rel=1e-6)
    # the blob points along the site force q grad(phi)
    np.testing.assert_allclose(b.direction, site_force(
        solve_pbe(coarse_ball, None, ch, DielectricParams()), 0) / b.magnitude, atol=1e-12)


def test_surface_force_is_normal(coarse_ball):
    d = solve_pbe(coarse_ball, None, born(), DielectricParams(kappa=1.0))
    fs = assemble_surface_force(d, coarse_ball)
    n = coarse_ball.face_geometry[1][coarse_ball.faces_tagged(FaceTag.GAMMA_F)]
    tangential = fs - np.sum(fs * n, axis=1)[:, None] * n
    assert np.abs(tangential).max() <= 1e-15 * np.abs(fs).max()


def test_identity_piola_gives_identical_surface_force(coarse_ball):
    diel = DielectricParams(kappa=1.0)
    zero = DisplacementField.zero(coarse_ball)
    a = assemble_surface_force(solve_pbe(coarse_ball, None, born(), diel), coarse_ball)
    b = assemble_surface_force(solve_pbe(coarse_ball, PiolaFields.identity(coarse_ball), born(), diel,
                                         disp=zero), coarse_ball)
    c = assemble_surface_force(solve_pbe(coarse_ball, compute_piola(coarse_ball, zero), born(), diel,
                                         disp=zero), coarse_ball)
    assert np.array_equal(a, b) and np.array_equal(a, c)


def test_unknown_trace_rejected(coarse_ball):
    d = solve_pbe(coarse_ball, None, born(), DielectricParams())
    with pytest.raises(ValueError):
        assemble_surface_force(d, coarse_ball, trace="average")


# ------------------------------------------------------------------ net forces and ledger

def test_net_of_identical_sets_is_zero(coarse_ball):
    f = compute_forces(solve_pbe(coarse_ball, None, born(), DielectricParams()), 1e-6)
    z = net_forces(f, f)
    assert not np.any(z.body) and not np.any(z.surface)


def test_free_state_has_zero_net_force():
    sc = ionic_shift_scenario(0.1, kappa0=0.1, h=0.5)
    f0, _ = state_forces(sc, 0)
    f4, _ = state_forces(sc, 4, DisplacementField.zero(sc.mesh))
    net = net_forces(f4, f0)
    assert net.body_norm(1.0) <= 1e-8 and net.surface_norm(1.0) <= 1e-8


def test_ledger_of_identical_states_is_zero(coarse_ball):
    f = compute_forces(solve_pbe(coarse_ball, None, born(), DielectricParams()), 1e-6)
    led = build_perturbation_ledger([f] * 5)
    assert all(e.delta.max_abs() == 0.0 for e in led.entries) and led.identity_error == 0.0


def test_ledger_needs_five_states(coarse_ball):
    f = compute_forces(solve_pbe(coarse_ball, None, born(), DielectricParams()), 1e-6)
    with pytest.raises(ValueError):
        build_perturbation_ledger([f] * 4)


def test_ledger_on_three_charge_configuration(rng):
    sc = two_sphere_scenario(1.0, h=0.5, diel=DielectricParams(kappa=0.3, kappa0=0.1))
    flex = rng.uniform(-0.3, 0.3, size=(2, 3))
    pos = np.vstack([flex, [[3.0, 0.0, 0.0]]])
    sc = sc.with_(charges=ChargeSystem(pos, rng.uniform(-1, 1, 3), [0.5, 0.5, 1.0], [True, True, False]))
    states = [state_forces(sc, k)[0] for k in range(4)]
    u = np.zeros((sc.mesh.n_vertices, 3))
    u[sc.mesh.nodes_in(1)] = 1e-3 * rng.normal(size=(len(sc.mesh.nodes_in(1)), 3))
    from electroelastic.piola import harmonic_extend

    disp = harmonic_extend(sc.mesh, u)
    states.append(state_forces(sc, 4, disp, compute_piola(sc.mesh, disp))[0])
    led = build_perturbation_ledger(states)
    assert led.check(1e-12)
    net = net_forces(states[4], states[0])
    summed = sum((e.delta for e in led.entries[1:]), led.entries[0].delta)
    assert np.abs(summed.surface - net.surface).max() <= 1e-12 * max(1.0, net.max_abs())
    assert np.abs(summed.body - net.body).max() <= 1e-12 * max(1.0, net.max_abs())


def test_unchanged_salt_gives_zero_first_delta():
    sc = two_sphere_scenario(0.5, h=0.5, diel=DielectricParams(kappa=0.1, kappa0=0.1))
    states = [state_forces(sc, k)[0] for k in range(4)]
    states.append(state_forces(sc, 4, DisplacementField.zero(sc.mesh))[0])
    led = build_perturbation_ledger(states)
    assert led.entries[0].delta.max_abs() == 0.0
    assert led.entries[1].delta.max_abs() > 0 and led.entries[2].delta.max_abs() > 0


def test_rigid_charge_delta_shrinks_with_charge():
    norms = []
    for q in (0.2, 0.1):
        sc = two_sphere_scenario(q, h=0.5)
        norms.append((state_forces(sc, 3)[0] - state_forces(sc, 2)[0]).surface_norm())
    assert norms[0] / norms[1] >= 1.5


def test_salt_delta_is_linear_in_shift():
    vals = []
    for dk in (0.01, 0.02, 0.04):
        sc = ionic_shift_scenario(0.1 + dk, kappa0=0.1)
        vals.append((state_forces(sc, 1)[0] - state_forces(sc, 0)[0]).surface_norm() / dk)
    mean = np.mean(vals)
    assert all(abs(v - mean) <= 0.2 * mean for v in vals)


def test_force_csv_writers(coarse_ball, tmp_path):
    ch = ChargeSystem(np.array([[0.3, 0.1, 0.0]]), [1.0], [0.5], [True])
    f = compute_forces(solve_pbe(coarse_ball, None, ch, DielectricParams()), 1e-6)
    write_face_csv(f, tmp_path / "faces.csv")
    write_blob_csv(f, tmp_path / "blobs.csv")
    rows = (tmp_path / "faces.csv").read_text().splitlines()
    assert len(rows) == 1 + len(coarse_ball.faces_tagged(FaceTag.GAMMA_F))
    blob = (tmp_path / "blobs.csv").read_text().splitlines()[1].split(",")
    assert float(blob[5]) == f.blobs[0].magnitude
