from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from blowup_lab import basis
from blowup_lab.basis import HermiteIndex, make_grid, make_quad
from blowup_lab.errors import PreconditionError


def rho1(x):
    return np.exp(-x * x / 4.0) / np.sqrt(4.0 * np.pi)


def test_hermite_eval_examples():
    assert basis.hermite_eval(0, 3.7) == 1.0
    assert basis.hermite_eval(2, 1.5) == pytest.approx(0.25, abs=1e-15)
    assert basis.hermite_eval(4, 0.0) == 12.0
    assert basis.hermite_eval(6, 1.0) == 31.0


def test_low_degree_closed_forms():
    assert basis.hermite_coeffs(2) == (-2, 0, 1)
    assert basis.hermite_coeffs(4) == (12, 0, -12, 0, 1)
    assert basis.hermite_coeffs(6) == (-120, 0, 180, 0, -30, 0, 1)


@pytest.mark.parametrize("n", range(21))
def test_horner_matches_recurrence(n):
    xi = np.linspace(-10.0, 10.0, 201)
    exact = basis.hermite_eval(n, xi)
    rec = basis.hermite_eval_recurrence(n, xi)
    scale = np.maximum(np.abs(exact), 1.0)
    # relative to the polynomial's local size; absolute near its roots
    assert np.max(np.abs(exact - rec) / scale) < 1e-12 * max(1.0, float(np.max(np.abs(exact))) / 1e12)


def test_horner_matches_recurrence_relative():
    xi = np.array([-10.0, -3.3, 0.7, 5.0, 10.0])
    for n in range(21):
        exact = basis.hermite_eval(n, xi)
        rec = basis.hermite_eval_recurrence(n, xi)
        big = np.abs(exact) > 1e-3 * np.max(np.abs(exact))
        np.testing.assert_allclose(rec[big], exact[big], rtol=1e-12)


@pytest.mark.parametrize("n,expected", [(0, 1), (2, 8), (3, 48)])
def test_norm_sq_examples(n, expected):
    assert basis.hermite_norm_sq(n) == expected


@pytest.mark.parametrize("n", range(8))
def test_norm_sq_against_adaptive_quadrature(n):
    val, _ = quad(lambda x: basis.hermite_eval(n, x) ** 2 * rho1(x), -np.inf, np.inf, epsabs=1e-12)
    assert val == pytest.approx(basis.hermite_norm_sq(n), rel=1e-9)


def test_make_quad_examples():
    q = make_quad(20)
    assert q.integrate(np.ones(20)) == pytest.approx(1.0, abs=1e-14)
    assert q.integrate(q.nodes**2) == pytest.approx(2.0, rel=1e-13)
    h2h4 = basis.hermite_eval(2, q.nodes) * basis.hermite_eval(4, q.nodes)
    assert abs(q.integrate(h2h4)) < 1e-11


@pytest.mark.parametrize("order", [1, 5, 20, 48, 64])
def test_quad_invariants(order):
    q = make_quad(order)
    assert abs(q.weights.sum() - 1.0) < 1e-12
    assert np.all(q.weights > 0)
    # even moments of a variance-2 Gaussian: (2k-1)!! 2^k
    for k in range(order):
        deg = 2 * k
        if deg > 2 * order - 1:
            break
        exact = float(np.prod(np.arange(1.0, deg, 2.0))) * 2.0**k if k else 1.0
        assert q.integrate(q.nodes**deg) == pytest.approx(exact, rel=1e-12 * max(1, k))


def test_quad_cap():
    assert make_quad(basis.MAX_QUAD_ORDER).order == basis.MAX_QUAD_ORDER
    with pytest.raises(PreconditionError):
        make_quad(basis.MAX_QUAD_ORDER + 1)
    with pytest.raises(PreconditionError):
        make_quad(0)


def test_orthogonality_to_twelve():
    q = make_quad(32)
    for m in range(13):
        hm = basis.hermite_eval(m, q.nodes)
        for n in range(13):
            hn = basis.hermite_eval(n, q.nodes)
            target = basis.hermite_norm_sq(m) if m == n else 0.0
            scale = float(basis.hermite_norm_sq(m) * basis.hermite_norm_sq(n)) ** 0.5
            assert abs(q.integrate(hm * hn) - target) <= 1e-10 * scale


def test_project_examples():
    g = make_grid(48, 16)
    y1, y2 = g.mesh
    h22 = basis.hermite_eval(2, y1) * basis.hermite_eval(2, y2)
    assert basis.project(h22, HermiteIndex(4, 2), g) == pytest.approx(1.0, abs=1e-12)
    assert basis.project(y1**2, HermiteIndex(0, 0), g) == pytest.approx(2.0, abs=1e-12)
    assert abs(basis.project(np.ones_like(y1), HermiteIndex(2, 0), g)) < 1e-13


def test_project_index_errors():
    g = make_grid(20, 10)
    with pytest.raises(PreconditionError):
        basis.project(np.zeros((20, 20)), HermiteIndex(2, 3), g)
    with pytest.raises(PreconditionError):
        basis.project(np.zeros((20, 20)), HermiteIndex(11, 0), g)


def test_hermite_index_convention():
    idx = HermiteIndex(6, 2)
    assert idx.degrees == (4, 2)
    assert idx.eigenvalue == -2.0
    assert HermiteIndex.from_degrees(4, 2) == idx


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=40))
def test_project_reconstruct_identity(vals):
    g = make_grid(32, 12)
    a = np.arange(13)
    coeffs = np.zeros((13, 13))
    flat = [(i, j) for i in range(13) for j in range(13) if i + j <= 12]
    for (i, j), v in zip(flat, vals):
        coeffs[i, j] = v / np.sqrt(2.0 ** (i + j) * np.prod(np.arange(1, i + 1)) * np.prod(np.arange(1, j + 1)))
    back = g.project(g.reconstruct(coeffs))
    np.testing.assert_allclose(back, coeffs, atol=1e-10 * max(1.0, np.abs(coeffs).max()))
    assert a.size == 13


def test_project_reconstruct_polynomial_degree_limit():
    # a polynomial of degree <= 2*order-1 in each variable is integrated exactly
    g = make_grid(24, 20)
    y1, y2 = g.mesh
    f = 1 + y1**3 * y2**2 - 0.5 * y1**8 + y2**10
    c = g.project(f)
    np.testing.assert_allclose(g.reconstruct(c), f, rtol=1e-9, atol=1e-9)


def test_product_in_basis_examples():
    assert basis.product_in_basis(2, 2) == {4: 1, 2: 8, 0: 8}
    for n in range(8):
        assert basis.product_in_basis(0, n) == {n: 1}
    assert basis.product_in_basis(1, 1) == {2: 1, 0: 2}


def test_product_in_basis_against_quadrature():
    q = make_quad(40)
    x = q.nodes
    for m in range(13):
        for n in range(13 - m):
            exact = basis.product_in_basis(m, n)
            prod = basis.hermite_eval(m, x) * basis.hermite_eval(n, x)
            for k in range(m + n + 1):
                nk = float(basis.hermite_norm_sq(k))
                coeff = q.integrate(prod * basis.hermite_eval(k, x)) / nk
                # error scale of the normalized inner product
                scale = float(basis.hermite_norm_sq(m) * basis.hermite_norm_sq(n)) ** 0.5 / nk**0.5
                assert abs(coeff - float(exact.get(k, 0))) <= 1e-10 * max(1.0, scale)


def test_product_in_basis_exact_types():
    for v in basis.product_in_basis(3, 5).values():
        assert isinstance(v, (int, Fraction))


def test_monomial_expansion():
    assert dict(basis.monomial_in_hermite(2)) == {2: 1, 0: 2}
    assert dict(basis.monomial_in_hermite(4)) == {4: 1, 2: 12, 0: 12}
    for n in range(10):
        c = [0] * n + [1]
        back = basis.poly_to_hermite(c)
        x = np.linspace(-2, 2, 7)
        total = sum(float(v) * basis.hermite_eval(k, x) for k, v in back.items())
        np.testing.assert_allclose(total, x**n, atol=1e-10)


def test_abs_moment_of_rho():
    # int |y| rho(y) dy over R^2 equals sqrt(pi), not 1
    g = make_grid(64, 4)
    y1, y2 = g.mesh
    val = g.integrate(np.sqrt(y1**2 + y2**2))
    assert val == pytest.approx(np.sqrt(np.pi), rel=1e-3)
