import time
from fractions import Fraction

import json
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowup_lab import basis
from blowup_lab.errors import PreconditionError
from blowup_lab.series import (
    BiPoly, EpsSeries, Scalar, SeriesCapError, apply_L, certify, expand_profile,
    expand_remainder, profile_polynomials, reduce_kappa, series_pow,
)

p, kap, dlt = Scalar.p(), Scalar.kappa(), Scalar.delta()


def y1(c=1):
    return BiPoly.monomial(1, 0, c)


# --- scalars -----------------------------------------------------------------

def test_reduce_kappa_examples():
    assert reduce_kappa(Scalar.kappa_p(1)) == kap * Scalar.pm1(-1)
    assert reduce_kappa(Scalar.kappa_p(1) * Scalar.kappa(-2)) == Scalar.pm1(-1) * Scalar.kappa(-1)
    assert reduce_kappa(Scalar.kappa(0)) == Scalar.const(1)


def test_reduce_kappa_leaves_integer_powers():
    x = kap * 3 + Scalar.kappa(-2) * p
    assert reduce_kappa(x) == x
    # the rewrite is never implicit
    assert Scalar.kappa_p(1) != kap * Scalar.pm1(-1)


def test_scalar_canonical_form():
    # (p-1)/(p-1) and kappa/kappa collapse to one
    assert Scalar.pm1(1) * Scalar.pm1(-1) == 1
    assert kap * Scalar.kappa(-1) == 1
    assert (p - 1) * Scalar.pm1(-1) == 1
    assert (p * p - 1) * Scalar.pm1(-1) == p + 1
    assert (kap - kap).is_zero()


@pytest.mark.parametrize("pv", [1.5, 2.0, 3.0, 7.25])
def test_scalar_evaluate(pv):
    k = (pv - 1) ** (-1 / (pv - 1))
    assert kap.evaluate(pv) == pytest.approx(k, rel=1e-15)
    assert reduce_kappa(Scalar.kappa_p(1)).evaluate(pv) == pytest.approx(Scalar.kappa_p(1).evaluate(pv), rel=1e-13)
    x = (p * 6 - 2) * Scalar.kappa(-1) + dlt * Scalar.pm1(-2)
    assert x.evaluate(pv, 100.0) == pytest.approx((6 * pv - 2) / k + 100 / (pv - 1) ** 2, rel=1e-14)


scalars = st.builds(
    lambda c0, c1, c2, e: (Scalar.const(c0) + p * c1 + dlt * c2) * Scalar.kappa(e),
    st.fractions(max_denominator=5), st.integers(-3, 3), st.integers(-3, 3), st.integers(-2, 2),
)


@settings(max_examples=50, deadline=None)
@given(scalars, scalars, scalars)
def test_scalar_ring_axioms(a, b, c):
    assert a + b == b + a
    assert a * b == b * a
    assert (a * b) * c == a * (b * c)
    assert a * (b + c) == a * b + a * c


# --- series arithmetic -------------------------------------------------------

def test_series_mul_example():
    a = EpsSeries.from_terms(2, {0: BiPoly.const(1), 1: y1()})
    b = EpsSeries.from_terms(2, {0: BiPoly.const(1), 1: y1(-1)})
    assert a * b == EpsSeries.from_terms(2, {0: BiPoly.const(1), 2: BiPoly.monomial(2, 0, -1)})


def test_series_times_zero():
    a = EpsSeries.from_terms(2, {0: BiPoly.const(3), 1: y1()})
    zero = EpsSeries.from_terms(2, {})
    assert a * zero == zero


def test_series_square_of_profile_numerator():
    P, _ = profile_polynomials()
    a = EpsSeries.from_terms(2, {0: BiPoly.const(1), 1: P})
    direct = EpsSeries.from_terms(2, {0: BiPoly.const(1), 1: P * 2, 2: P * P})
    assert a * a == direct


def test_truncation_to_min_order():
    a = EpsSeries.from_terms(3, {0: BiPoly.const(1), 3: y1()})
    b = EpsSeries.from_terms(1, {0: BiPoly.const(1)})
    assert (a * b).order == 1
    assert (a + b).order == 1


def test_order_and_degree_caps():
    with pytest.raises(SeriesCapError):
        EpsSeries.from_terms(4, {})
    with pytest.raises(SeriesCapError):
        EpsSeries.from_terms(1, {1: BiPoly.monomial(11, 0)})
    with pytest.raises(SeriesCapError):
        expand_remainder(3)


small_series = st.builds(
    lambda c1, c2, e: EpsSeries.from_terms(
        2, {0: BiPoly.const(1), 1: BiPoly.monomial(e, 2, c1) + BiPoly.const(p), 2: BiPoly.monomial(2, e, c2)}),
    st.integers(-4, 4), st.integers(-4, 4), st.integers(0, 4),
)


@settings(max_examples=25, deadline=None)
@given(small_series, small_series, small_series)
def test_series_ring_axioms(a, b, c):
    assert a * b == b * a
    assert (a * b) * c == a * (b * c)
    assert (a + b) + c == a + (b + c)


# --- series_pow --------------------------------------------------------------

def test_series_pow_of_one():
    one = EpsSeries.const(2, 1)
    for alpha in (p, Scalar.pm1(-1), -Scalar.pm1(-1)):
        assert series_pow(one, alpha) == one


def test_series_pow_first_order():
    h22 = BiPoly.hermite(2, 2)
    base = EpsSeries.from_terms(1, {0: BiPoly.const(1), 1: h22})
    assert series_pow(base, p) == EpsSeries.from_terms(1, {0: BiPoly.const(1), 1: h22 * p})


def test_series_pow_second_order_coefficient():
    u1, u2 = BiPoly.hermite(2, 2), BiPoly.monomial(1, 3, 2)
    base = EpsSeries.from_terms(2, {0: BiPoly.const(1), 1: u1, 2: u2})
    a = -Scalar.pm1(-1)
    got = series_pow(base, a).coeffs[2]
    assert got == u1 * u1 * (a * (a - 1) / 2) + u2 * a


@pytest.mark.parametrize("pv", [2, 3, 4, 5, 6])
def test_series_pow_reciprocal_consistency(pv):
    base = EpsSeries.from_terms(
        3, {0: BiPoly.const(1), 1: BiPoly.hermite(2, 2), 2: BiPoly.monomial(1, 0, p), 3: BiPoly.monomial(0, 4, 3)})
    root = series_pow(base, -Scalar.pm1(-1)).subs_p(pv)
    prod = EpsSeries.const(3, 1)
    for _ in range(pv - 1):
        prod = prod * root
    assert prod == series_pow(base, -1).subs_p(pv)
    assert prod * base.subs_p(pv) == EpsSeries.const(3, 1)


def test_series_pow_rejects_nonunit_constant():
    with pytest.raises(PreconditionError):
        series_pow(EpsSeries.const(2, 2), p)
    with pytest.raises(PreconditionError):
        series_pow(EpsSeries.const(2, 1), kap)


# --- L on polynomials --------------------------------------------------------

def test_apply_L_examples():
    assert apply_L(BiPoly.const(1)) == BiPoly.const(1)
    assert apply_L(BiPoly.monomial(2, 0)) == BiPoly.const(2)
    assert apply_L(BiPoly.hermite(6, 0)) == BiPoly.hermite(6, 0) * -2


def test_apply_L_on_hermite_products_is_diagonal():
    for a in range(13):
        for b in range(13 - a):
            h = BiPoly.hermite(a, b)
            assert apply_L(h) == h * Fraction(2 - a - b, 2)


# --- profile and remainder ---------------------------------------------------

def test_profile_expansion_targets():
    phi = expand_profile(2)
    herm = phi.to_hermite()
    assert herm[0] == {(0, 0): kap}
    assert herm[1] == {(2, 2): Scalar.const(-1)}
    assert herm[2][(4, 4)] == p * Scalar.kappa(-1) / 2
    assert herm[2][(6, 0)] == -dlt
    assert herm[2][(0, 6)] == -dlt
    gamma = (p * 6 - 2) * Scalar.kappa(-1)
    assert herm[2] == {(6, 0): -dlt, (0, 6): -dlt, (4, 2): gamma, (2, 4): gamma,
                       (4, 4): p * Scalar.kappa(-1) / 2}


def test_Q_has_degree_four_with_chosen_gamma():
    P, Q = profile_polynomials()
    assert P.degree == 2
    assert Q.degree == 4
    _, Q_bad = profile_polynomials((p * 6 - 2) * Scalar.kappa(-1) + 1)
    assert Q_bad.degree == 6


def test_P_simplified_form():
    P, _ = profile_polynomials()
    c = Scalar.pm1(1) * Scalar.kappa(-1) * 2
    assert P == (BiPoly.monomial(2, 0) + BiPoly.monomial(0, 2) - 2) * c


def test_remainder_low_orders_vanish():
    R = expand_remainder(2)
    assert R.coeffs[0].is_zero()
    assert R.coeffs[1].is_zero()


def test_remainder_second_order_coefficients():
    t0 = time.perf_counter()
    herm = expand_remainder(2).to_hermite()[2]
    c = p * Scalar.kappa(-1)
    expected = {(0, 0): 32, (2, 0): 32, (0, 2): 32, (4, 0): 4, (0, 4): 4,
                (2, 2): 32, (4, 2): 4, (2, 4): 4}
    assert herm == {k: c * v for k, v in expected.items()}
    assert herm[(4, 2)] == c * 4
    assert time.perf_counter() - t0 < 10


def test_remainder_has_no_kappa_p_after_reduction():
    for coeff in expand_remainder(2).coeffs:
        assert all(not v.has_kappa_p() for v in coeff.terms.values())


def test_certificate_default_and_order_zero():
    cert = certify(2)
    assert cert.ok
    assert cert.headline_counts() == {"remainder": 5, "profile": 3}
    payload = json.loads(cert.to_json())
    assert payload["ok"] is True
    assert "PASS" in cert.to_text().splitlines()[-1]
    cert0 = certify(0)
    assert cert0.ok
    assert {c.order for c in cert0.checks} == {0}


def test_certificate_tampered_gamma_localizes():
    gamma = (p * 6 - 2) * Scalar.kappa(-1) + 1
    cert = certify(2, gamma)
    assert not cert.ok
    assert {(c.series, c.mode) for c in cert.failures} == {("profile", (4, 2)), ("profile", (2, 4))}


def test_profile_series_numeric_value_at_origin():
    # phi(0, s) = kappa E(0, s)^(1/(p-1)) with E(0) = 1 + eps P(0) + eps^2 Q(0)
    phi = expand_profile(3)
    _, Q = profile_polynomials()
    pv, dv, s = 2.0, 100.0, 10.0
    eps = np.exp(-s)
    E0 = 1 + eps * (-4.0) + eps**2 * Q.evaluate(0.0, 0.0, pv, dv)
    assert phi.evaluate(0.0, 0.0, s, pv, dv) == pytest.approx(E0, rel=1e-12)


@pytest.mark.parametrize("s", [12.0, 10.0])
def test_series_matches_float_profile(s):
    # order-3 truncation; at s = 10 the first omitted term (delta eps^2 y^6)^2 is
    # about 2e-8 on the axis at |y| = 3, so the 1e-8 agreement is out of reach there
    from blowup_lab.profile import Params, eval_phi

    prm = Params(p=2.0, delta=100.0)
    phi3 = expand_profile(3)
    r = np.linspace(0.0, 3.0, 7)
    th = np.linspace(0.0, 2 * np.pi, 25)
    worst = 0.0
    for rr in r:
        for t in th:
            a, b = rr * np.cos(t), rr * np.sin(t)
            exact = float(eval_phi(a, b, s, prm))
            worst = max(worst, abs(phi3.evaluate(a, b, s, 2.0, 100.0) - exact) / exact)
    assert worst <= 1e-8
