import itertools
from math import factorial

import numpy as np
import pytest

from electroelastic.quadrature import gauss_legendre_panels, tet_rule, tri_rule


def _tet_monomial(a, b, c):
    # integral of x^a y^b z^c over the unit simplex
    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)


def _tri_monomial(a, b):
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("order", [1, 2, 3, 4, 5, 6, 7])
def test_tet_rule_exact_on_monomials(order):
    x, w = tet_rule(order)
    bary = np.asarray(x)
    pts = bary[:, 1:] if bary.shape[1] == 4 else bary
    for a, b, c in itertools.product(range(order + 1), repeat=3):
        if a + b + c > order:
            continue
        # weights sum to one, so scale by the simplex volume 1/6
        got = np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b * pts[:, 2] ** c) / 6.0
        assert got == pytest.approx(_tet_monomial(a, b, c), rel=1e-12, abs=1e-16)


@pytest.mark.parametrize("order", [1, 2, 3, 4, 5])
def test_tri_rule_exact_on_monomials(order):
    x, w = tri_rule(order)
    bary = np.asarray(x)
    pts = bary[:, 1:] if bary.shape[1] == 3 else bary
    for a, b in itertools.product(range(order + 1), repeat=2):
        if a + b > order:
            continue
        got = np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b) / 2.0
        assert got == pytest.approx(_tri_monomial(a, b), rel=1e-12, abs=1e-16)


@pytest.mark.parametrize("order", [2, 4, 5])
def test_low_order_tet_rules_are_permutation_symmetric(order):
    x, w = tet_rule(order)
    key = {tuple(np.round(p, 12)): wi for p, wi in zip(np.asarray(x), w)}
    for p, wi in zip(np.asarray(x), w):
        for perm in itertools.permutations(range(4)):
            q = tuple(np.round(p[list(perm)], 12))
            assert q in key and key[q] == pytest.approx(wi)


def test_gauss_legendre_panels_integrates_cubic():
    x, w = gauss_legendre_panels(0.0, 2.0, 4)
    assert np.sum(w * x**5) == pytest.approx(64.0 / 6.0, rel=1e-13)
