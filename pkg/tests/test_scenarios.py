import math

import numpy as np
import pytest

from blowup_lab import constants
from blowup_lab.basis import hermite_eval, make_grid
from blowup_lab.errors import IntegrationOverflow, PreconditionError
from blowup_lab.profile import Params, eval_dpsi, eval_E, eval_Phi, eval_phi, psi_time_of
from blowup_lab.scenarios import (
    calibrate_M0,
    classify,
    descent_check,
    diagonal_point,
    final_profile_closed_form,
    final_profile_consistency,
    final_profile_ode,
    handoff_probe,
    intermediate_profile_check,
    ode_localization_defect,
    probe_psi_stability,
    probe_zero_stability,
    profile_region_mask,
    profile_trajectory,
    region_map,
    region_size_check,
)


@pytest.fixture(scope="module")
def grid():
    return make_grid(48, 16)


@pytest.fixture(scope="module")
def params():
    return Params()


# ---------------------------------------------------------------------------
# regions


def test_origin_is_inner_region(params):
    assert classify((0.0, 0.0), params.s0, params=params).labels == {"R3"}


def test_exact_boundary_carries_both_labels(params):
    M = 10.0
    t = diagonal_point(M * math.exp(-params.s0), params)
    assert t ** 4 + 200 * t ** 6 == pytest.approx(10 * math.exp(-12), rel=1e-13)
    assert classify((t, t), params.s0, M=M, params=params).labels == {"R1", "R2"}


def test_inner_boundary_carries_both_labels(params):
    t = diagonal_point(constants.M_SMALL * math.exp(-params.s0), params)
    assert classify((t, t), params.s0, params=params).labels == {"R2", "R3"}


def test_classification_preconditions(params):
    with pytest.raises(PreconditionError):
        classify((0.1, 0.1), params.s0, m=0.5, M=0.9, params=params)
    with pytest.raises(PreconditionError):
        classify((0.1, 0.1), params.s0, m=0.0, params=params)


def test_partition_never_mixes_outer_and_inner(params):
    rng = np.random.default_rng(3)
    for a in rng.uniform(-0.2, 0.2, size=(300, 2)):
        lab = classify(a, params.s0, params=params)
        assert lab.labels and not {"R1", "R3"} <= lab.labels


def test_default_M_satisfies_its_defining_inequality():
    for p in (1.5, 2.0, 3.0):
        assert constants.region_M_ok(constants.region_M(p), p)


def test_origin_size_bounds(params):
    rep = region_size_check((0.0, 0.0), params)
    assert rep.ok
    assert rep.value == pytest.approx(float(eval_phi(0.0, 0.0, params.s0, params)), rel=1e-15)
    assert rep.value == pytest.approx(params.kappa, rel=1e-4)


def test_deep_outer_point_is_small(params):
    M = constants.region_M(params.p)
    t = diagonal_point(100 * M * math.exp(-params.s0), params)
    rep = region_size_check((t, t), params)
    assert rep.region.labels == {"R1"}
    assert rep.ok
    assert rep.value <= params.kappa * (1 + M) ** (-1 / (params.p - 1)) * 1.1


def test_size_along_diagonal_nonincreasing_up_to_profile_factor(params):
    ts = np.linspace(0.0, 0.1, 200)
    s0 = params.s0
    vals = np.array([region_size_check((t, t), params).value for t in ts])
    y = ts * math.exp(s0 / 2)
    leading = eval_Phi(y, y, s0, params)
    assert np.all(np.diff(leading) < 0)
    slack = params.kappa * np.max(np.abs(eval_E(y, y, s0, params) ** params.a - 1.0))
    assert np.all(np.diff(vals) <= slack)
    assert vals[-1] < vals[0]


def test_region_map_passes_with_frozen_constant(params):
    reps = region_map(params, np.geomspace(0.1, 100.0, 12), np.linspace(0.0, math.pi / 4, 4))
    assert all(r.ok for r in reps)
    assert {lab for r in reps for lab in r.region.labels} == {"R1", "R2", "R3"}


# ---------------------------------------------------------------------------
# stability probes


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_flat_probe_decays_at_the_linear_rate(p, grid):
    rep = probe_zero_stability(0.01, None, 4.0, Params(p=p), grid)
    assert abs(rep.exponent * (p - 1) - 1) < 0.05
    assert rep.ok


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_h2h2_probe_decays_faster_than_flat(p, grid):
    params = Params(p=p)
    flat = probe_zero_stability(0.01, None, 4.0, params, grid)
    shaped = probe_zero_stability(0.01 / 8.0, {(4, 2): 1.0}, 4.0, params, grid)
    assert shaped.sup_ratio <= flat.sup_ratio
    assert shaped.ratios[-1] < 0.05


def test_zero_probe_with_no_perturbation(params, grid):
    rep = probe_zero_stability(0.0, None, 4.0, params, grid)
    assert set(rep.ratios) == {1.0}


def test_zero_probe_preconditions(params, grid):
    with pytest.raises(PreconditionError):
        probe_zero_stability(0.1, None, 1.0, params, grid)
    with pytest.raises(PreconditionError):
        probe_zero_stability(0.05, {(4, 2): 1.0}, 1.0, params, grid)


@pytest.mark.parametrize("sigma1", [-3.0, 0.0, 2.0])
def test_psi_probe_bounded_by_M1(sigma1, params, grid):
    size = 0.5 * abs(float(eval_dpsi(sigma1, params))) / constants.M1
    rep = probe_psi_stability(sigma1, size, None, 5.0, params, grid)
    assert rep.ok
    assert np.all(np.isfinite(rep.ratios))


def test_psi_probe_without_perturbation_tracks_psi(params, grid):
    rep = probe_psi_stability(0.0, 0.0, None, 5.0, params, grid)
    assert max(rep.ratios) == 0.0
    assert max(rep.distances) < 1e-5


def test_psi_probe_needs_smaller_eps_near_kappa(params, grid):
    size = 0.5 * abs(float(eval_dpsi(0.0, params))) / constants.M1
    with pytest.raises(PreconditionError):
        probe_psi_stability(-3.0, size, None, 1.0, params, grid)
    slope = abs(float(eval_dpsi(-3.0, params)))
    exact = params.kappa * math.exp(-3) / (params.p - 1) * (1 + math.exp(-3)) ** (-params.p / (params.p - 1))
    assert slope == pytest.approx(exact, rel=1e-14)
    assert slope == pytest.approx(params.kappa * math.exp(-3) / (params.p - 1), rel=0.1)


def test_M0_calibration_reproduces_frozen_value(grid):
    res = calibrate_M0(grid)
    assert res.value <= constants.M0
    assert res.value > 0.9 * constants.M0


# ---------------------------------------------------------------------------
# descent and handoff


@pytest.fixture(scope="module")
def descent(grid):
    params = Params(s0=16.0)
    return params, descent_check(10.0, 10.0, params=params, grid=grid)


def test_descent_time_is_nonnegative(descent):
    params, rep = descent
    assert rep.s_star - params.s0 == pytest.approx(math.log(constants.ETA_STAR / rep.iota))
    assert rep.s_star >= params.s0


def test_descent_envelope(descent):
    _, rep = descent
    assert rep.envelope_ok


def test_descent_flat_mode_decreases(descent):
    _, rep = descent
    assert rep.monotone


def test_descent_hands_off_to_psi(descent, grid):
    params, rep = descent
    assert rep.handoff_ok
    assert rep.bounded_after(params.kappa)
    assert handoff_probe(rep, params, grid=grid).ok


def test_descent_preconditions(grid):
    params = Params(s0=16.0)
    with pytest.raises(PreconditionError):
        descent_check(5.0, 5.0, params=params, grid=grid)
    with pytest.raises(PreconditionError):
        descent_check(10.0, 10.0, params=Params(s0=12.0), grid=grid)
    with pytest.raises(PreconditionError):
        descent_check(10.0, 10.0, params=params, m=0.2, grid=grid)


def test_sigma_star_solves_psi_equation(params):
    sigma = psi_time_of(params.kappa - constants.ETA_STAR, params)
    from blowup_lab.profile import eval_psi
    assert float(eval_psi(sigma, params)) == pytest.approx(params.kappa - constants.ETA_STAR, rel=1e-14)


# ---------------------------------------------------------------------------
# final profile


def test_final_profile_known_value():
    assert final_profile_ode(1.0, 1.0, 0.9, Params(p=2.0)) == pytest.approx(10.0, rel=1e-10)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("K0", [0.5, 1.0, 5.0])
def test_final_profile_matches_closed_form(p, K0):
    params = Params(p=p)
    u = final_profile_ode(K0, 2.0, 1.7, params)
    assert u == pytest.approx(final_profile_closed_form(K0, 0.3, params), rel=1e-8)


def test_final_profile_ratio_tends_to_one():
    params = Params()
    ratios = [final_profile_ode(K0, 1.0, 0.5, params) / (params.kappa * ((1 + K0) * 0.5) ** -1) for K0 in (1.0, 10.0, 1e3)]
    assert ratios[0] > ratios[1] > ratios[2] > 1.0
    assert ratios[2] == pytest.approx(1.0, abs=2e-3)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_final_profile_consistent_with_limit_profile(p):
    ode, star = final_profile_consistency((0.1, 0.05), 1.0, 1.0, Params(p=p))
    assert ode == pytest.approx(star, rel=1e-8)


def test_final_profile_preconditions():
    with pytest.raises(PreconditionError):
        final_profile_ode(0.0, 1.0, 0.5)
    with pytest.raises(PreconditionError):
        final_profile_ode(1.0, 1.0, 1.0)


def test_ode_localization_on_flat_solution(params):
    assert ode_localization_defect(params) < 1e-3


# ---------------------------------------------------------------------------
# intermediate profile


@pytest.fixture(scope="module")
def best_trajectory(params, grid):
    return profile_trajectory(params, 3.0, grid)


def test_intermediate_profile_error_decreases(params, grid, best_trajectory):
    s_list = [params.s0 + k for k in range(4)]
    rep = intermediate_profile_check(1.0, s_list, params, best_trajectory, grid)
    assert rep.decreasing
    assert min(rep.counts) > 0


def test_intermediate_profile_at_start_is_direct_comparison(params, grid, best_trajectory):
    rep = intermediate_profile_check(1.0, [params.s0], params, best_trajectory, grid)
    y1, y2 = grid.mesh
    mask = profile_region_mask(grid, params.s0, 1.0, params)
    direct = np.max(np.abs(eval_phi(y1, y2, params.s0, params) - eval_Phi(y1, y2, params.s0, params))[mask])
    assert rep.errors[0] == pytest.approx(direct, rel=1e-6)


def test_intermediate_profile_at_origin_triangle(params, best_trajectory):
    s = params.s0 + 2
    c = best_trajectory.states[s].field.with_coeffs().coeffs
    h0 = np.array([hermite_eval(n, 0.0) for n in range(c.shape[0])])
    w_origin = float(h0 @ c @ h0) + float(eval_phi(0.0, 0.0, s, params))
    phi_origin = float(eval_Phi(0.0, 0.0, s, params))
    assert phi_origin == params.kappa
    assert abs(w_origin - phi_origin) <= abs(w_origin - params.kappa) + abs(params.kappa - phi_origin)


def test_intermediate_profile_requires_trajectory(params):
    with pytest.raises(PreconditionError):
        intermediate_profile_check(1.0, [params.s0], params, None)
