"""The twelve acceptance criteria, one test each.

Every test records a one-line PASS/FAIL verdict with the measured numbers;
the lines are printed together at the end of the pytest run.
"""

import numpy as np
import pytest

from electroelastic.charges import ChargeSystem, DielectricParams, eval_G
from electroelastic.cli import run_scenario
from electroelastic.config import config_from_dict
from electroelastic.coupled import (FixedPointConfig, ball_mesh, build_ledger, ionic_shift_scenario,
                                    solve_coupled, state_forces, two_sphere_scenario)
from electroelastic.elasticity import (ElasticParams, LoadSet, clamped_face_mask, elastic_energy,
                                       elastic_residual)
from electroelastic.forces import build_perturbation_ledger, compute_forces
from electroelastic.mesh import FaceTag, Region
from electroelastic.pbe import eval_energy, solve_pbe
from electroelastic.piola import DisplacementField, compute_piola, deformation_gradient, harmonic_extend
from electroelastic.quadrature import gauss_legendre_panels
from electroelastic.radial import RadialConfig, solve_radial_pb

RESULTS = {}
SEED = 20240611


def report(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    return ok


def blob_mass(blob, panels=400):
    """Independent radial integral of a blob with 4-point Gauss-Legendre panels."""
    r, w = gauss_legendre_panels(0.0, blob.radius, panels, npts=4)
    return float(np.sum(w * 4 * np.pi * r * r * blob.a * np.exp(-r * r / blob.sigma)))


def born(q=1.0):
    return ChargeSystem(np.zeros((1, 3)), [q], [1.0], [True])


def at_origin(mesh, field):
    return float(mesh.interpolate(field, np.zeros((1, 3)))[0])


# ------------------------------------------------------------------ shared runs

@pytest.fixture(scope="module")
def random_suite():
    """Twenty randomized charge configurations on the coarse ball."""
    rng = np.random.default_rng(SEED)
    mesh = ball_mesh(1.0, 4.0, 0.5)
    runs = []
    for _ in range(20):
        n = int(rng.integers(1, 11))
        d = rng.normal(size=(n, 3))
        pos = d / np.linalg.norm(d, axis=1)[:, None] * 0.7 * rng.uniform(0, 1, (n, 1)) ** (1 / 3)
        ch = ChargeSystem(pos, rng.uniform(-1, 1, n), np.full(n, 0.3), np.ones(n, bool))
        diel = DielectricParams(kappa=float(rng.uniform(0, 2)))
        runs.append((mesh, ch, diel, solve_pbe(mesh, None, ch, diel)))
    return runs


@pytest.fixture(scope="module")
def sweep_states():
    """Two-sphere fixed points at rigid charge scale 0.1, 0.2 and 0.4."""
    return {s: solve_coupled(two_sphere_scenario(s, h=0.5)) for s in (0.1, 0.2, 0.4)}


# ------------------------------------------------------------------ criteria

def test_01_born_oracle_equivalence():
    stated = {0.0: -0.4875, 1.0: -0.496875}
    errors, ok, parts = {}, True, []
    for kappa in (0.0, 1.0):
        ref = float(solve_radial_pb(RadialConfig(kappa=kappa)).phi_r[0])
        errs = []
        for h in (0.5, 0.25, 0.125):
            mesh = ball_mesh(1.0, 4.0, h)
            val = at_origin(mesh, solve_pbe(mesh, None, born(), DielectricParams(kappa=kappa)).phi_r)
            errs.append(abs(val - ref) / abs(ref))
        errors[kappa] = errs
        lit = abs(val - stated[kappa]) / abs(stated[kappa])
        good = errs[2] <= 0.05 and errs[0] > errs[1] > errs[2] and lit <= 0.05
        ok &= good
        parts.append(f"kappa={kappa:g}: oracle {ref:.6f}, h=R/8 value {val:.6f}, "
                     f"errors {errs[0]:.2e}>{errs[1]:.2e}>{errs[2]:.2e}, "
                     f"vs stated {stated[kappa]} {lit:.2%}")
    report(1, ok, "; ".join(parts))
    assert ok


def test_02_linf_bound(random_suite):
    worst, violations = -np.inf, 0
    for mesh, ch, diel, d in random_suite:
        solvent = np.unique(mesh.cells[mesh.cells_in(Region.SOLVENT)])
        G = eval_G(ch, diel.eps_m, mesh.vertices[solvent])
        bound = np.abs(d.phi_l[solvent]).max() + np.abs(G).max() + 1e-8
        gap = np.abs(d.phi_n).max() - bound
        worst = max(worst, gap)
        violations += gap > 0
    ok = violations == 0
    report(2, ok, f"{len(random_suite)} configurations, {violations} violations, "
                  f"largest |phi_n| - bound = {worst:.3e}")
    assert ok


def test_03_energy_monotone(random_suite):
    steps = bad = 0
    drift = 0.0
    for mesh, ch, diel, d in random_suite:
        e = [s.energy for s in d.trace]
        steps += len(e) - 1
        bad += sum(b > a for a, b in zip(e, e[1:]))
        # the recorded energies agree with a fresh evaluation at both ends
        e0 = eval_energy(mesh, None, ch, diel, d.phi_l)
        e1 = eval_energy(mesh, None, ch, diel, d.phi_r)
        drift = max(drift, abs(e[0] - e0) / max(abs(e0), 1e-300), abs(e[-1] - e1) / max(abs(e1), 1e-300))
    ok = bad == 0 and drift <= 1e-9
    report(3, ok, f"{steps} accepted Newton steps, {bad} energy increases, "
                  f"trace vs re-evaluated energy {drift:.1e}")
    assert ok


def test_04_ledger_identity(sweep_states):
    errs = [build_ledger(st).identity_error for st in sweep_states.values()]
    sc = ionic_shift_scenario(0.2, kappa0=0.1, h=0.5)
    f = [state_forces(sc, k)[0] for k in range(4)]
    f.append(state_forces(sc, 4, DisplacementField.zero(sc.mesh))[0])
    errs.append(build_perturbation_ledger(f).identity_error)
    ok = max(errs) <= 1e-12
    report(4, ok, f"{len(errs)} ledgers, max |sum of deltas - (final - reference)| = {max(errs):.1e}")
    assert ok


def test_05_gaussian_conservation(random_suite, sweep_states):
    blobs = []
    for mesh, ch, diel, d in random_suite:
        blobs += compute_forces(d, 1e-6).blobs
    for st in sweep_states.values():
        blobs += st.forces.blobs
    live = [b for b in blobs if b.a > 0]
    worst = max(abs(blob_mass(b) - b.magnitude) / b.magnitude for b in live)
    ok = worst <= 1e-6 and len(live) > 0
    report(5, ok, f"{len(live)} of {len(blobs)} blobs carry force; worst relative mass error {worst:.1e}")
    assert ok


def test_06_zero_perturbation_fixed_point():
    st = solve_coupled(ionic_shift_scenario(0.1, kappa0=0.1, h=0.5))
    ok = st.converged and st.k == 1 and st.u_max <= 1e-10
    report(6, ok, f"converged at k={st.k}, max|u| = {st.u_max:.1e}")
    assert ok


def test_07_contraction_small_regime(sweep_states):
    parts, ok = [], True
    for s, st in sweep_states.items():
        inc = st.increments
        dec = all(b < a for a, b in zip(inc, inc[1:]))
        ok &= dec and st.converged
        parts.append(f"s={s}: {st.k} its, factor {st.contraction_factor:.3f}, max|u| {st.u_max:.2e}")
    c = [sweep_states[s].contraction_factor for s in (0.1, 0.2, 0.4)]
    u = [sweep_states[s].u_max for s in (0.1, 0.2, 0.4)]
    ok &= c[0] < c[1] < c[2] and u[0] < u[1] < u[2]
    report(7, ok, "; ".join(parts))
    assert ok


def test_08_cubic_gap():
    mesh = ball_mesh(1.0, 4.0, 0.5)
    diel = DielectricParams(kappa=1.0)
    scales = np.array([1.0, 0.5, 0.25])
    gaps = []
    for s in scales:
        nl = solve_pbe(mesh, None, born(s), diel).phi_r
        lin = solve_pbe(mesh, None, born(s), diel, mode="linearized").phi_r
        gaps.append(np.abs(nl - lin).max())
    slope = np.polyfit(np.log(scales), np.log(gaps), 1)[0]
    ok = abs(slope - 3.0) <= 0.3
    report(8, ok, f"gaps {', '.join(f'{g:.2e}' for g in gaps)}; log-log slope {slope:.3f}")
    assert ok


def test_09_elastic_residual_is_energy_gradient():
    mesh = ball_mesh(1.0, 4.0, 0.5)
    rng = np.random.default_rng(SEED)
    params = ElasticParams(10.0, 10.0)
    n = mesh.face_geometry[1][mesh.faces_tagged(FaceTag.GAMMA_F)]
    zero = LoadSet.zero(mesh)
    traction = -0.05 * n
    traction[clamped_face_mask(mesh)] = 0.0
    loads = LoadSet(mesh, zero.body + 0.01, traction, zero.order)
    mf = mesh.nodes_in(Region.MF)
    clamp = mesh.nodes_on(FaceTag.GAMMA_F0)
    worst = 0.0
    for _ in range(5):
        u = np.zeros((mesh.n_vertices, 3))
        u[mf] = rng.normal(size=(len(mf), 3))
        u[clamp] = 0.0
        g = np.abs(deformation_gradient(mesh, DisplacementField(mesh, u)) - np.eye(3)).max()
        u *= 0.1 / g
        v = np.zeros_like(u)
        v[mf] = rng.normal(size=(len(mf), 3))
        v[clamp] = 0.0
        # unit gradient scale keeps the central-difference truncation at h^2
        v /= np.abs(deformation_gradient(mesh, DisplacementField(mesh, v)) - np.eye(3)).max()
        r = elastic_residual(mesh, u, loads, params).reshape(-1, 3)
        exact = float(np.sum(r * v[mf]))
        h = 1e-5
        fd = (elastic_energy(mesh, u + h * v, loads, params)
              - elastic_energy(mesh, u - h * v, loads, params)) / (2 * h)
        worst = max(worst, abs(fd - exact) / abs(exact))
    ok = worst <= 1e-6
    report(9, ok, f"5 random admissible displacements, worst relative directional mismatch {worst:.1e}")
    assert ok


def test_10_piola_invariants():
    mesh = ball_mesh(1.0, 4.0, 0.5)
    rng = np.random.default_rng(SEED)
    P0 = compute_piola(mesh, DisplacementField.zero(mesh))
    exact = bool(np.all(P0.F == np.eye(3)) and np.all(P0.J == 1.0))
    asym, min_eig = 0.0, np.inf
    for size in np.linspace(0.02, 0.2, 10):
        u = np.zeros((mesh.n_vertices, 3))
        mf = mesh.nodes_in(Region.MF)
        u[mf] = rng.normal(size=(len(mf), 3))
        disp = harmonic_extend(mesh, u)
        g = np.abs(deformation_gradient(mesh, disp) - np.eye(3)).max()
        disp = DisplacementField(mesh, disp.values * size / g)
        P = compute_piola(mesh, disp)
        asym = max(asym, float(np.abs(P.F - P.F.transpose(0, 2, 1)).max()))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(P.F).min()))
    ok = exact and asym <= 1e-12 and min_eig > 0
    report(10, ok, f"F(0)=I and J(0)=1 exactly: {exact}; 10 fields with |grad u| <= 0.2: "
                   f"max asymmetry {asym:.1e}, min eigenvalue {min_eig:.3f}")
    assert ok


def test_11_determinism(tmp_path):
    doc = {"scenario": "two_spheres", "seed": 3, "geometry": {"h_A": 0.5},
           "charges": {"rigid_scale": 0.1}, "fixed_point": {"tol": 1e-6}}
    names = ("trace.csv", "ledger.csv", "estimates.csv", "faces.csv")
    a = run_scenario(config_from_dict(doc), tmp_path / "a")
    b = run_scenario(config_from_dict(doc), tmp_path / "b")
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    ok = a.exit_code == b.exit_code == 0 and all(same)
    report(11, ok, f"{sum(same)} of {len(names)} CSV traces byte-identical across two runs")
    assert ok


def _net_surface(sc):
    zero = DisplacementField.zero(sc.mesh)
    return (state_forces(sc, 4, zero)[0] - state_forces(sc, 0)[0]).surface_norm()


def test_12_scaling_diagnostics():
    k = [_net_surface(ionic_shift_scenario(0.1 + dk, kappa0=0.1)) for dk in (0.01, 0.02, 0.04)]
    rk = [k[1] / k[0], k[2] / k[1]]
    diel = DielectricParams(kappa=0.1, kappa0=0.1)
    v = []
    for r in (1.0, 2.0 ** (1 / 3)):
        sc = two_sphere_scenario(0.0, radius_r=r, distance=5.0, split=1.5, diel=diel)
        vol = float(sc.mesh.volumes[sc.mesh.cells_in(Region.MR)].sum())
        v.append((vol, _net_surface(sc)))
    rv = v[1][1] / v[0][1]
    ok = all(1.5 <= x <= 2.5 for x in rk + [rv])
    report(12, ok, f"|kappa - kappa0| doubling: factors {rk[0]:.3f}, {rk[1]:.3f}; "
                   f"cavity volume {v[0][0]:.3f} -> {v[1][0]:.3f}: factor {rv:.3f}")
    assert ok
