import itertools
import math

import numpy as np
import pytest

from blowup_lab import profile as pr
from blowup_lab.errors import DivergesAtOrigin, NonpositiveBracket, NonpositiveE, PreconditionError
from blowup_lab.profile import Params
from blowup_lab.series import profile_polynomials

P0 = Params()


def grid(r, n):
    ax = np.linspace(-r, r, n)
    return np.meshgrid(ax, ax, indexing="ij")


# --- Params ------------------------------------------------------------------

@pytest.mark.parametrize("p", [1.1, 1.5, 2.0, 3.0, 5.0])
def test_params_derived_fields(p):
    prm = Params(p=p)
    assert abs(prm.kappa ** (p - 1) * (p - 1) - 1) <= 1e-14
    assert prm.gamma == pytest.approx((6 * p - 2) / prm.kappa, rel=1e-15)


@pytest.mark.parametrize("kw", [dict(p=1.0), dict(delta=0.5), dict(A=0.5), dict(d=(3, 0, 0, 0, 0)),
                                dict(d=(0, 0, 0))])
def test_params_rejects_invalid(kw):
    with pytest.raises(PreconditionError):
        Params(**kw)


# --- P and Q -----------------------------------------------------------------

@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_P_examples_and_forms(p):
    prm = Params(p=p)
    assert pr.eval_P(0, 0, prm) == pytest.approx(-4 * (p - 1) / prm.kappa, rel=1e-14)
    assert pr.eval_P(1, 1, prm) == pytest.approx(0.0, abs=1e-14)
    Y1, Y2 = grid(6, 25)
    np.testing.assert_allclose(pr.eval_P(Y1, Y2, prm), pr.eval_P_simplified(Y1, Y2, prm), atol=1e-12)


@pytest.mark.parametrize("p,delta", [(2.0, 100.0), (1.5, 10.0), (3.0, 50.0)])
def test_Q_two_routes_and_exact_series(p, delta):
    prm = Params(p=p, delta=delta)
    Y1, Y2 = grid(4, 17)
    q = pr.eval_Q(Y1, Y2, prm)
    np.testing.assert_allclose(q, pr.eval_Q_hermite(Y1, Y2, prm), rtol=1e-11, atol=1e-9)
    _, Q = profile_polynomials()
    for a, b in [(0.0, 0.0), (1.3, -0.4), (2.0, 3.0)]:
        assert pr.eval_Q(a, b, prm) == pytest.approx(Q.evaluate(a, b, p, delta), rel=1e-11, abs=1e-9)


def test_Q_leading_term_along_diagonal():
    # along y1 = y2 the y1^2 y2^2 part of Q also scales like y^4, so the ratio to
    # the axis leading term tends to (2 c40 + c22) / (2 c_lead), which is 1 - O(1/delta)
    _, Q = profile_polynomials()
    for delta in (100.0, 1e4):
        prm = P0.with_(delta=delta)
        lead = 30 * delta * (prm.p - 1) / prm.kappa
        c40 = Q.terms[(4, 0)].evaluate(prm.p, delta)
        c22 = Q.terms[(2, 2)].evaluate(prm.p, delta)
        limit = (2 * c40 + c22) / (2 * lead)
        ratios = [pr.eval_Q(y, y, prm) / (2 * lead * y**4) for y in (1e2, 1e3, 1e4)]
        assert abs(ratios[-1] - limit) < 1e-7
        assert abs(ratios[-1] - limit) < abs(ratios[0] - limit)
        assert abs(limit - 1) < 2.0 / delta


def test_Q_lower_bound_beyond_scanned_radius():
    r0 = pr.lowQ_radius(P0)
    assert r0 < 50
    c = 15 * P0.delta * (P0.p - 1) / P0.kappa
    th = np.linspace(0, 2 * np.pi, 73)
    for r in (r0, 2 * r0, 10 * r0, 1e3):
        y1, y2 = r * np.cos(th), r * np.sin(th)
        assert np.all(pr.eval_Q(y1, y2, P0) >= c * (y1**4 + y2**4))


# --- phi ---------------------------------------------------------------------

@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("s", [6.0, 10.0, 12.0])
def test_phi_at_origin(p, s):
    prm = Params(p=p)
    _, Q = profile_polynomials()
    eps = math.exp(-s)
    E0 = 1 + eps * (-4 * (p - 1) / prm.kappa) + eps**2 * Q.evaluate(0.0, 0.0, p, prm.delta)
    assert pr.eval_phi(0.0, 0.0, s, prm) == pytest.approx(prm.kappa * E0 ** (1 / (p - 1)), rel=1e-14)


def test_phi_tends_to_kappa():
    Y1, Y2 = grid(2, 21)
    assert np.abs(pr.eval_phi(Y1, Y2, 30.0, P0) - P0.kappa).max() <= 1e-8


def test_phi_excess_consistent():
    Y1, Y2 = grid(5, 21)
    for s in (10.0, 20.0, 35.0):
        ex = pr.eval_phi_excess(Y1, Y2, s, P0)
        np.testing.assert_allclose(P0.kappa + ex, pr.eval_phi(Y1, Y2, s, P0), rtol=1e-15, atol=0)
    # relative accuracy of the small excess survives at large s
    y = 1.0
    eps = math.exp(-35.0)
    first_order = eps * (pr.eval_P(y, 0.0, P0) - 0.0) * P0.kappa / (P0.p - 1)
    assert pr.eval_phi_excess(y, 0.0, 35.0, P0) == pytest.approx(first_order, rel=1e-10)


def test_grad_phi_against_finite_differences():
    Y1, Y2 = grid(5, 21)
    s, h = 10.0, 1e-5
    g1, g2 = pr.eval_grad_phi(Y1, Y2, s, P0)
    f1 = (pr.eval_phi(Y1 + h, Y2, s, P0) - pr.eval_phi(Y1 - h, Y2, s, P0)) / (2 * h)
    f2 = (pr.eval_phi(Y1, Y2 + h, s, P0) - pr.eval_phi(Y1, Y2 - h, s, P0)) / (2 * h)
    scale = np.hypot(g1, g2).max()
    assert np.abs(f1 - g1).max() <= 1e-6 * scale
    assert np.abs(f2 - g2).max() <= 1e-6 * scale


def test_laplacian_and_time_derivative_against_finite_differences():
    Y1, Y2 = grid(5, 21)
    s = 10.0
    h = 1e-3
    f = lambda a, b: pr.eval_phi(a, b, s, P0)
    fd = (f(Y1 + h, Y2) + f(Y1 - h, Y2) + f(Y1, Y2 + h) + f(Y1, Y2 - h) - 4 * f(Y1, Y2)) / h**2
    lap = pr.eval_lap_phi(Y1, Y2, s, P0)
    assert np.abs(fd - lap).max() <= 1e-5 * np.abs(lap).max()
    dt = 1e-4
    fs = (pr.eval_phi(Y1, Y2, s + dt, P0) - pr.eval_phi(Y1, Y2, s - dt, P0)) / (2 * dt)
    ds = pr.eval_dphi_ds(Y1, Y2, s, P0)
    assert np.abs(fs - ds).max() <= 1e-6 * np.abs(ds).max()


def test_nonpositive_E_is_reported():
    with pytest.raises(NonpositiveE) as exc:
        pr.eval_phi(*grid(3, 41), 1.0, P0)
    assert exc.value.value <= 0
    assert exc.value.s == 1.0


def test_D_at_least_p_minus_one():
    Y1, Y2 = grid(50, 101)
    for s in (0.0, 5.0, 12.0):
        assert np.all(pr.eval_D(Y1, Y2, s, P0) >= P0.p - 1)


# --- Phi, psi ----------------------------------------------------------------

def test_Phi_examples():
    for s in (5.0, 12.0, 20.0):
        assert pr.eval_Phi(0.0, 0.0, s, P0) == P0.kappa
    prm = Params(p=3.0, delta=7.0)
    k = prm.kappa
    vals = [pr.eval_Phi(math.exp(s / 3), 0.0, s, prm) for s in (4.0, 8.0, 12.0)]
    bracket = (prm.p - 1) + (prm.p - 1) ** 2 * prm.delta / k
    for v in vals:
        assert v == pytest.approx(bracket ** (-1 / (prm.p - 1)), rel=1e-12)
    Y1, Y2 = grid(30, 61)
    for s in (0.0, 3.0, 12.0):
        assert np.all(pr.eval_Phi(Y1, Y2, s, prm) <= k)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_psi_is_an_exact_flat_solution(p):
    prm = Params(p=p)
    res = pr.psi_residual(np.array([-5.0, 0.0, 5.0]), prm)
    assert np.abs(res).max() <= 1e-12
    assert abs(pr.eval_psi(-30.0, prm) - prm.kappa) <= 1e-10
    for sig in (-10.0, -20.0):
        ratio = -pr.eval_dpsi(sig, prm) / (prm.kappa * math.exp(sig) / (p - 1))
        assert ratio == pytest.approx(1.0, abs=10 * math.exp(sig))


def test_psi_time_of_inverts_psi():
    for sig in (-6.0, 0.0, 3.5):
        assert pr.psi_time_of(float(pr.eval_psi(sig, P0)), P0) == pytest.approx(sig, abs=1e-10)
    with pytest.raises(PreconditionError):
        pr.psi_time_of(P0.kappa, P0)


# --- initial data ------------------------------------------------------------

def test_w0_with_zero_d_is_phi_bitwise():
    Y1, Y2 = grid(8, 33)
    assert np.array_equal(pr.eval_w0_init(Y1, Y2, P0), pr.eval_phi(Y1, Y2, P0.s0, P0))


def test_w0_symmetry():
    rng = np.random.default_rng(1)
    prm = P0.with_(d=(1.2, -0.7, 0.3, 1.9, -1.1))
    y1, y2 = rng.uniform(-6, 6, (2, 200))
    w = pr.eval_w0_init(y1, y2, prm)
    for other in (pr.eval_w0_init(y2, y1, prm), pr.eval_w0_init(-y1, y2, prm),
                  pr.eval_w0_init(y1, -y2, prm)):
        np.testing.assert_allclose(other, w, rtol=1e-14, atol=0)


def test_w0_bracket_positive_on_d_corners():
    Y1, Y2 = grid(20, 161)
    for d in itertools.product((-2.0, 2.0), repeat=5):
        b = pr.eval_bracket(Y1, Y2, P0.with_(d=d))
        assert b.min() >= 0.25


def test_w0_bracket_failure_reports_point():
    prm = P0.with_(s0=2.0, d=(-2.0,) * 5)
    with pytest.raises(NonpositiveBracket) as exc:
        pr.eval_w0_init(*grid(20, 81), prm)
    assert exc.value.value <= 0
    assert len(exc.value.y) == 2


# --- original variables ------------------------------------------------------

def test_G0_and_u_star():
    assert pr.eval_G0(0.0, 0.0, P0) == 0.0
    assert pr.eval_G0(0.1, 0.0, P0) == pytest.approx(1e-4, rel=1e-12)
    with pytest.raises(DivergesAtOrigin):
        pr.eval_u_star(0.0, 0.0, P0)
    t = 2.0 ** -np.arange(1, 12)
    u = pr.eval_u_star(t, t, P0)
    assert np.all(np.diff(u) > 0)
    # u* = [(p-1) G0]^(-1/(p-1))
    prm = Params(p=3.0)
    assert pr.eval_u_star(0.3, 0.2, prm) == pytest.approx(
        ((prm.p - 1) * pr.eval_G0(0.3, 0.2, prm)) ** -0.5, rel=1e-14)


# --- certification scans -----------------------------------------------------

def test_lemphi_report_at_working_point():
    rep = pr.certify_lemphi(P0, 12.0)
    assert rep.min_E >= 0.5
    assert rep.finite and rep.ok


def test_lemphi_excess_uniformly_bounded():
    reps = [pr.certify_lemphi(P0, s) for s in (10.0, 12.0, 14.0, 16.0)]
    ex = [r.sup_phi_excess for r in reps]
    gr = [r.sup_grad for r in reps]
    for a, b in zip(ex, ex[1:]):
        assert 0 < b <= 2 * a
    for a, b in zip(gr, gr[1:]):
        assert 0.5 * a <= b <= 2 * a


def test_lemphi_tail_decays_along_axis():
    for s in (10.0, 14.0):
        R = pr.default_scan_radius(s)
        assert pr.eval_phi(R, 0.0, s, P0) <= pr.eval_phi(R / 2, 0.0, s, P0)


def test_lemphi_radius_precondition():
    with pytest.raises(PreconditionError):
        pr.certify_lemphi(P0, 12.0, grid_radius=5.0)


def test_delta_threshold():
    assert pr.delta_threshold(P0, 12.0) is not None
    assert pr.delta_threshold(P0, 12.0) <= 100
    assert pr.delta_threshold(P0, 2.0) is None


def test_phi_minus_Phi_decreases_in_profile_region():
    K = 1.0
    sups = []
    for s in (10.0, 14.0, 18.0, 22.0):
        ax = np.linspace(-1, 1, 401) * 2.0 * math.exp(s / 3)
        Y1, Y2 = np.meshgrid(ax, ax, indexing="ij")
        z = math.exp(-s) * Y1**2 * Y2**2 + P0.delta * math.exp(-2 * s) * (Y1**6 + Y2**6)
        inside = z <= K
        diff = np.abs(pr.eval_phi(Y1, Y2, s, P0) - pr.eval_Phi(Y1, Y2, s, P0))
        sups.append(diff[inside].max())
    assert all(b < a for a, b in zip(sups, sups[1:]))
