import numpy as np
import pytest
from hypothesis import given, strategies as st

from electroelastic.charges import DielectricParams
from electroelastic.coupled import FixedPointConfig, solve_coupled, two_sphere_scenario
from electroelastic.mesh import Region
from electroelastic.norms import broken_norm, estimate_report, h1_norm, region_norms

from conftest import single_tet_mesh


def test_constant_field_on_one_cell():
    m = single_tet_mesh()
    n = region_norms(m, np.full(4, 3.0), np.array([0]), p=2.0)
    vol = 1.0 / 6.0
    assert n.lp == pytest.approx(3.0 * np.sqrt(vol), rel=1e-14)
    assert n.linf == 3.0
    assert n.h1_semi == 0.0
    assert n.h1 == pytest.approx(n.lp, rel=1e-14)


def test_linear_field_on_one_cell():
    m = single_tet_mesh()
    v = m.vertices @ np.array([1.0, 2.0, 3.0])  # gradient (1, 2, 3)
    n = region_norms(m, v, np.array([0]), p=2.0)
    vol = 1.0 / 6.0
    assert n.h1_semi == pytest.approx(np.sqrt(14.0 * vol), rel=1e-14)
    # int over the reference tet of (x + 2y + 3z)^2 = (1 + 4 + 9 + 2 + 3 + 6) / 60
    assert n.lp == pytest.approx(np.sqrt(25.0 / 60.0), rel=1e-12)
    assert n.linf == 3.0


def test_linear_field_has_no_curvature(coarse_ball):
    v = coarse_ball.vertices @ np.array([0.5, -1.0, 2.0])
    inner = coarse_ball.cells_in(Region.MF)
    n = region_norms(coarse_ball, v, inner, p=4.0)
    g = n.surrogate - n.lp - (float(np.sum(coarse_ball.volumes[inner])) * np.sqrt(5.25) ** 4) ** 0.25
    assert abs(g) <= 1e-9


def test_broken_norm_is_additive(coarse_ball, rng):
    f = rng.normal(size=coarse_ball.n_vertices)
    b = broken_norm(f, coarse_ball, p=2.0)
    whole = region_norms(coarse_ball, f, np.arange(coarse_ball.n_cells), p=2.0)
    assert b.total.lp == pytest.approx(whole.lp, rel=1e-12)
    assert b.total.h1 == pytest.approx(whole.h1, rel=1e-12)
    assert b.total.linf == whole.linf
    assert set(b.per_region) == {Region.MF, Region.SOLVENT}


@given(st.floats(-10.0, 10.0).filter(lambda c: c == 0 or abs(c) > 1e-6))
def test_norms_are_absolutely_homogeneous(c):
    m = single_tet_mesh()
    f = np.array([0.3, -1.0, 2.0, 0.5])
    a, b = region_norms(m, c * f, np.array([0]), 4.0), region_norms(m, f, np.array([0]), 4.0)
    for name in ("lp", "linf", "h1", "h1_semi", "surrogate"):
        assert getattr(a, name) == pytest.approx(abs(c) * getattr(b, name), rel=1e-12, abs=1e-300)


@given(st.integers(0, 2**31))
def test_triangle_inequality(seed):
    m = single_tet_mesh()
    r = np.random.default_rng(seed)
    f, g = r.normal(size=4), r.normal(size=4)
    cells = np.array([0])
    for p in (2.0, 4.0):
        nf, ng, ns = (region_norms(m, x, cells, p) for x in (f, g, f + g))
        assert ns.lp <= nf.lp + ng.lp + 1e-12
        assert ns.h1 <= nf.h1 + ng.h1 + 1e-12


def test_vector_field_norm_matches_components(coarse_ball, rng):
    cells = coarse_ball.cells_in(Region.MF)
    u = rng.normal(size=(coarse_ball.n_vertices, 3))
    total = h1_norm(coarse_ball, u, cells)
    parts = [h1_norm(coarse_ball, u[:, i], cells) for i in range(3)]
    assert total == pytest.approx(np.sqrt(sum(p * p for p in parts)), rel=1e-12)


def test_empty_cell_set():
    m = single_tet_mesh()
    assert region_norms(m, np.ones(4), np.array([], dtype=int)).h1 == 0.0


def test_estimate_report_at_zero_perturbation():
    sc = two_sphere_scenario(0.0, h=0.5, diel=DielectricParams(kappa=0.1, kappa0=0.1,
                                                                  rigid_cavity=False))
    row = estimate_report(solve_coupled(sc, FixedPointConfig(tol=1e-6)))[0]
    assert row["kappa_shift"] == 0.0 and row["rigid_volume"] == 0.0 and row["added_charge"] == 0.0
    assert row["piola_norm"] == 0.0 and row["jacobian_dev"] == 0.0
    assert row["body_force_norm"] == 0.0 and row["surface_force_norm"] == 0.0
