"""Control of ``w_a`` away from the origin: regions, stability probes, descent.

Points ``a`` are sorted by the size of ``G_0(a)`` against ``e^{-s0}`` into
three regions, where ``w_a`` starts near ``0``, near the heteroclinic orbit
``psi`` or near ``kappa``.  The probes integrate the equation of ``w`` from
perturbed versions of these explicit solutions and measure how far they
drift.  The last helpers integrate the ODE ``u' = u^p`` that gives the
final profile, and compare the trapped solution with the intermediate
profile ``Phi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import constants
from .basis import Grid, HermiteIndex, make_grid
from .dynamics import (
    CORE_RADIUS,
    SpectralState,
    Trajectory,
    core_mask,
    evolve_w,
    iota,
    profile_samples,
    run,
)
from .errors import IntegrationOverflow, PreconditionError
from .operators import SpectralField
from .profile import Params, eval_dpsi, eval_G0, eval_Phi, eval_psi, eval_u_star, eval_w0_init, psi_time_of

REGIONS = ("R1", "R2", "R3")


# ---------------------------------------------------------------------------
# regions


@dataclass(frozen=True)
class RegionLabel:
    labels: frozenset
    m: float
    M: float
    G0_value: float

    @property
    def label(self) -> str:
        """The region name; boundary points report the lower-numbered region."""
        return min(self.labels)

    @property
    def on_boundary(self) -> bool:
        return len(self.labels) > 1


def classify(a, s0: float, m: float = constants.M_SMALL, M: float | None = None,
             params: Params | None = None, rel_tol: float = 1e-12) -> RegionLabel:
    """Place ``a`` in the regions by comparing ``G_0(a)`` with ``m e^{-s0}`` and ``M e^{-s0}``.

    Comparisons are made with a relative tolerance so that a point computed to
    sit on a boundary carries both labels.
    """
    params = params or Params(s0=s0)
    M = constants.region_M(params.p) if M is None else M
    if not 0 < m < 1 <= M:
        raise PreconditionError("need 0 < m < 1 <= M")
    g = float(eval_G0(a[0], a[1], params))
    lo, hi = m * math.exp(-s0), M * math.exp(-s0)

    def ge(x, y):
        return x >= y * (1 - rel_tol)

    def le(x, y):
        return x <= y * (1 + rel_tol)

    labels = set()
    if ge(g, hi):
        labels.add("R1")
    if ge(g, lo) and le(g, hi):
        labels.add("R2")
    if le(g, lo):
        labels.add("R3")
    return RegionLabel(frozenset(labels), m, M, g)


def diagonal_point(G_target: float, params: Params, t_max: float = 10.0) -> float:
    """``t > 0`` with ``G_0(t, t) = G_target`` (the map is increasing in ``t``)."""
    return brentq(lambda t: float(eval_G0(t, t, params)) - G_target, 0.0, t_max, xtol=1e-300, rtol=1e-15)


@dataclass(frozen=True)
class RegionSizeReport:
    a: tuple
    region: RegionLabel
    value: float
    lower: float
    upper: float

    @property
    def ok(self) -> bool:
        return self.lower <= self.value <= self.upper


def region_bounds(label: str, params: Params, m: float, M: float, C: float) -> tuple[float, float]:
    k, e = params.kappa, C * math.exp(-params.s0 / 3.0)
    big = k * (1 + M) ** (-params.a)
    small = k * (1 + m) ** (-params.a)
    return {"R1": (0.0, big + e), "R2": (big - e, small + e), "R3": (small - e, k + e)}[label]


def region_size_check(a, params: Params, m: float = constants.M_SMALL, M: float | None = None,
                      C: float = constants.C_REGION) -> RegionSizeReport:
    """Check ``w_0(a e^{s0/2}, s0)`` against the size bounds of its region.

    Boundary points must satisfy the bounds of every region they belong to.
    """
    M = constants.region_M(params.p) if M is None else M
    lab = classify(a, params.s0, m, M, params)
    y = np.asarray(a, float) * math.exp(params.s0 / 2.0)
    value = float(eval_w0_init(y[0], y[1], params, check=False))
    lo = max(region_bounds(r, params, m, M, C)[0] for r in lab.labels)
    hi = min(region_bounds(r, params, m, M, C)[1] for r in lab.labels)
    return RegionSizeReport(tuple(float(x) for x in a), lab, value, lo, hi)


def region_map(params: Params, radii: Iterable[float], angles: Iterable[float], m: float = constants.M_SMALL,
               M: float | None = None) -> list[RegionSizeReport]:
    """Region size reports on a polar grid of ``a`` (radii in units of ``e^{-s0/2}``)."""
    out = []
    for r in radii:
        for th in angles:
            a = (r * math.cos(th) * math.exp(-params.s0 / 2), r * math.sin(th) * math.exp(-params.s0 / 2))
            out.append(region_size_check(a, params, m, M))
    return out


# ---------------------------------------------------------------------------
# stability probes


def _shape_field(shape, grid: Grid) -> SpectralField:
    if isinstance(shape, SpectralField):
        return shape
    if isinstance(shape, dict):
        return SpectralField.from_modes(shape, grid, symmetric=True)
    return SpectralField.from_samples(np.asarray(shape, float), grid, symmetric=True)


def flat_shape(grid: Grid) -> SpectralField:
    return SpectralField.from_modes({HermiteIndex(0, 0): 1.0}, grid, symmetric=True)


# sup guards of the stability probes: beyond this box the degree-16 projection
# of |w|^(p-1) w (not a polynomial once w changes sign) is off by more than 1%
PROBE_RADIUS = 5.0
# outside this box the probe runs drop the power term at nodes where |w| > 2 kappa
# (unbounded polynomial tails); bounded states see the full equation
REACTION_RADIUS = 6.0


def _guard_sup(f: SpectralField, radius: float = PROBE_RADIUS) -> float:
    return float(np.max(np.abs(f.with_samples().samples[core_mask(f.grid, radius)])))


@dataclass(frozen=True)
class DecayReport:
    times: tuple
    norms: tuple
    ratios: tuple
    exponent: float
    bound: float

    @property
    def sup_ratio(self) -> float:
        return max(self.ratios)

    @property
    def ok(self) -> bool:
        return self.sup_ratio <= self.bound


def _fit_exponent(times, norms) -> float:
    t, n = np.asarray(times), np.asarray(norms)
    keep = n > 0
    if keep.sum() < 2:
        return float("nan")
    return float(-np.polyfit(t[keep], np.log(n[keep]), 1)[0])


def probe_zero_stability(eps: float, shape=None, window: float = 4.0, params: Params | None = None,
                         grid: Grid | None = None, ds: float = 0.01, s1: float = 0.0,
                         M0: float = constants.M0) -> DecayReport:
    """Integrate ``w`` from ``eps * shape`` and measure its decay against ``e^{-s/(p-1)}``.

    ``exponent`` is the least-squares decay rate of ``||w(s)||``; the ratios
    are ``||w(s)|| e^{(s-s1)/(p-1)} / ||w(s1)||`` and must stay below ``M0``.
    """
    params = params or Params()
    grid = grid or make_grid()
    shape = flat_shape(grid) if shape is None else _shape_field(shape, grid)
    w0 = SpectralField.from_coeffs(eps * shape.with_coeffs().coeffs, grid, True)
    n0 = w0.norm()
    if n0 > constants.eps0(params.kappa) * (1 + 1e-12):
        raise PreconditionError(f"||w(s1)|| = {n0:.3g} exceeds eps0 = {constants.eps0(params.kappa):.3g}")
    if _guard_sup(w0) > 2 * params.kappa:
        raise PreconditionError("sup|w(s1)| exceeds 2 kappa on the core box")
    if n0 == 0:
        times = tuple(float(t) for t in s1 + ds * np.arange(int(round(window / ds)) + 1))
        return DecayReport(times, (0.0,) * len(times), (1.0,) * len(times), float("nan"), M0)
    times, fields = evolve_w(w0, s1, window, params, ds, keep_every=10, guard_radius=PROBE_RADIUS,
                             reaction_radius=REACTION_RADIUS)
    norms = [f.norm() for f in fields]
    ratios = [nv * math.exp((t - s1) / (params.p - 1.0)) / n0 for t, nv in zip(times, norms)]
    return DecayReport(tuple(times), tuple(norms), tuple(ratios), _fit_exponent(times, norms), M0)


@dataclass(frozen=True)
class PsiReport:
    sigma1: float
    times: tuple
    distances: tuple
    ratios: tuple
    bound: float

    @property
    def sup_ratio(self) -> float:
        return max(self.ratios)

    @property
    def ok(self) -> bool:
        return self.sup_ratio <= self.bound


def psi_admissible(sigma1: float, size: float, params: Params, M1: float = constants.M1) -> bool:
    return size <= abs(float(eval_dpsi(sigma1, params))) / M1


def probe_psi_stability(sigma1: float, eps: float, shape=None, window: float = 5.0, params: Params | None = None,
                        grid: Grid | None = None, ds: float = 0.01, M1: float = constants.M1) -> PsiReport:
    """Integrate ``w`` from ``psi(sigma1) + eps * shape`` and compare with ``psi(s + sigma1)``.

    Ratios are ``||w(s) - psi(s+sigma1)|| |psi'(sigma1)| / (||w(0) - psi(sigma1)|| |psi'(s+sigma1)|)``;
    with ``eps = 0`` they are identically zero.
    """
    params = params or Params()
    grid = grid or make_grid()
    shape = flat_shape(grid) if shape is None else _shape_field(shape, grid)
    pert = eps * shape.with_coeffs().coeffs
    n0 = SpectralField.from_coeffs(pert, grid).norm()
    if not psi_admissible(sigma1, n0, params, M1):
        raise PreconditionError(f"||w(0) - psi(sigma1)|| = {n0:.3g} exceeds |psi'(sigma1)|/M1")
    c = pert.copy()
    c[0, 0] += float(eval_psi(sigma1, params))
    w = SpectralField.from_coeffs(c, grid, True)
    if _guard_sup(w) > 2 * params.kappa:
        raise PreconditionError("sup|w(0)| exceeds 2 kappa on the core box")
    times, fields = evolve_w(w, 0.0, window, params, ds, keep_every=10, guard_radius=PROBE_RADIUS,
                             reaction_radius=REACTION_RADIUS)
    dists, ratios = [], []
    d0 = abs(float(eval_dpsi(sigma1, params)))
    for t, f in zip(times, fields):
        diff = f.with_coeffs().coeffs.copy()
        diff[0, 0] -= float(eval_psi(t + sigma1, params))
        dist = SpectralField.from_coeffs(diff, grid).norm()
        dists.append(dist)
        ratios.append(0.0 if n0 == 0 else dist * d0 / (n0 * abs(float(eval_dpsi(t + sigma1, params)))))
    return PsiReport(float(sigma1), tuple(times), tuple(dists), tuple(ratios), M1)


# ---------------------------------------------------------------------------
# descent from kappa to kappa - eta*


@dataclass(frozen=True)
class DescentReport:
    K: float
    L: float
    iota: float
    s_star: float
    times: tuple
    errors: tuple             # ||w_a(s) - (kappa - e^{s-s0} iota)|| on [s0, s*]
    envelopes: tuple          # the matching right-hand sides without M
    h00: tuple                # h0h0 coefficient of w_a on [s0, s*]
    handoff_distance: float   # ||w_a(s*) - psi(sigma*)||
    handoff_limit: float      # |psi'(sigma*)| / M1
    later_norms: tuple        # ||w_a(s)|| after s*
    M: float

    @property
    def envelope_ratio(self) -> float:
        return max(e / v for e, v in zip(self.errors, self.envelopes))

    @property
    def envelope_ok(self) -> bool:
        return self.envelope_ratio <= self.M

    @property
    def monotone(self) -> bool:
        return all(b < a for a, b in zip(self.h00, self.h00[1:]))

    @property
    def handoff_ok(self) -> bool:
        return self.handoff_distance <= self.handoff_limit

    def bounded_after(self, kappa: float, factor: float = 1.5) -> bool:
        return max(self.later_norms) <= factor * kappa

    @property
    def ok(self) -> bool:
        return self.envelope_ok and self.handoff_ok and self.monotone


def descent_check(K: float, L: float, eta_star: float = constants.ETA_STAR, params: Params | None = None,
                  m: float | None = None, grid: Grid | None = None, ds: float = 0.01, after: float = 5.0,
                  M: float = constants.M_DESCENT, M1: float = constants.M1) -> DescentReport:
    """Follow ``w_a`` for ``a = (K, L) e^{-s0/2}`` from ``kappa - iota`` down to ``kappa - eta*``.

    ``m`` defaults to ``0.8 eta* (p-1)/kappa``, inside the admissible range.
    After ``s*`` the integration goes on for ``after`` more units.
    """
    params = params or Params()
    grid = grid or make_grid()
    k, p = params.kappa, params.p
    m = 0.8 * eta_star * (p - 1) / k if m is None else m
    if not 0 <= K <= L or K + L < params.A:
        raise PreconditionError("need 0 <= K <= L and K + L >= A")
    if not 0 < m < min(1.0, eta_star * (p - 1) / k):
        raise PreconditionError("need 0 < m < min(1, eta* (p-1)/kappa)")
    if not 0 < eta_star < k:
        raise PreconditionError("need 0 < eta* < kappa")
    io = iota(K, L, params)
    if not io <= m * k / (p - 1):
        raise PreconditionError(f"a is not in the inner region (iota = {io:.3g} > m kappa/(p-1))")
    s0 = params.s0
    s_star = s0 + math.log(eta_star / io)
    y1, y2 = grid.mesh
    w = SpectralField.from_samples(eval_w0_init(y1 + K, y2 + L, params), grid)
    n = int(math.ceil((s_star - s0) / ds))
    h = (s_star - s0) / n
    times, fields = evolve_w(w, s0, s_star - s0, params, h, guard_radius=CORE_RADIUS)
    errors, env, h00 = [], [], []
    for t, f in zip(times, fields):
        c = f.with_coeffs().coeffs.copy()
        h00.append(float(c[0, 0]))
        c[0, 0] -= k - math.exp(t - s0) * io
        errors.append(SpectralField.from_coeffs(c, grid).norm())
        env.append((eta_star + 1.0 / params.A) * math.exp(t - s0) * io + math.exp(-s0 / 3.0))
    sigma_star = psi_time_of(k - eta_star, params)
    c = fields[-1].with_coeffs().coeffs.copy()
    c[0, 0] -= k - eta_star
    handoff = SpectralField.from_coeffs(c, grid).norm()
    limit = abs(float(eval_dpsi(sigma_star, params))) / M1
    _, later = evolve_w(fields[-1], s_star, after, params, ds, keep_every=10, guard_radius=CORE_RADIUS)
    return DescentReport(K, L, io, s_star, tuple(times), tuple(errors), tuple(env), tuple(h00),
                         handoff, limit, tuple(f.norm() for f in later), M)


def handoff_probe(report: DescentReport, params: Params, window: float = 5.0, grid: Grid | None = None,
                  M1: float = constants.M1) -> PsiReport:
    """Run the heteroclinic probe from the descent's terminal distance, as a flat perturbation."""
    grid = grid or make_grid()
    sigma_star = psi_time_of(params.kappa - constants.ETA_STAR, params)
    return probe_psi_stability(sigma_star, report.handoff_distance, None, window, params, grid, M1=M1)


# ---------------------------------------------------------------------------
# final profile


def final_profile_closed_form(K0: float, T_minus_t: float, params: Params) -> float:
    return params.kappa * (K0 * T_minus_t) ** (-params.a)


def final_profile_ode(K0: float, T: float, t_star: float, params: Params | None = None,
                      rtol: float = 1e-13) -> float:
    """Integrate ``u' = u^p`` from ``u(t*) = kappa [(1+K0)(T-t*)]^{-1/(p-1)}`` to ``T``.

    The solution is finite on ``[t*, T]`` and blows up at ``T + K0 (T - t*)``.
    The integration runs in ``v = u^{-(p-1)}`` only for the event check; the
    returned value comes from the adaptive integration of ``u`` itself.
    """
    params = params or Params()
    if not K0 > 0:
        raise PreconditionError("K0 must be positive")
    if not 0 <= t_star < T:
        raise PreconditionError("need 0 <= t* < T")
    p = params.p
    dt = T - t_star
    u0 = params.kappa * ((1.0 + K0) * dt) ** (-params.a)
    # time to blow-up from u0 is u0^{-(p-1)}/(p-1) = (1 + K0) dt
    if u0 ** (-(p - 1.0)) / (p - 1.0) <= dt:
        raise IntegrationOverflow(T, float("inf"))
    # integrate in tau = (t - t*)/dt so the step control does not depend on the scale of dt
    sol = solve_ivp(lambda tau, u: dt * u**p, (0.0, 1.0), [u0], method="DOP853", rtol=rtol, atol=0.0)
    if not sol.success:
        raise IntegrationOverflow(T, float("nan"))
    return float(sol.y[0, -1])


def t_star_of(a, K0: float, T: float, params: Params) -> float:
    """``t*(a)`` from ``a1^2 a2^2 + delta (a1^6 + a2^6) = K0 kappa (T - t*) / (p-1)``."""
    g = a[0] ** 2 * a[1] ** 2 + params.delta * (a[0] ** 6 + a[1] ** 6)
    t = T - (params.p - 1.0) * g / (K0 * params.kappa)
    if not 0 <= t < T:
        raise PreconditionError("a is too large for this T (t* < 0)")
    return t


def final_profile_consistency(a, K0: float, T: float, params: Params) -> tuple[float, float]:
    """``(u(T) from the ODE, u*(a))``; equal by construction of ``t*``."""
    ts = t_star_of(a, K0, T, params)
    return final_profile_ode(K0, T, ts, params), float(eval_u_star(a[0], a[1], params))


def ode_localization_defect(params: Params, sigma: float = 0.0, window: float = 3.0, ds: float = 0.01,
                            grid: Grid | None = None) -> float:
    """``max |u_t / u^p - 1|`` on the flat solution started at ``psi(sigma)``.

    In similarity variables ``u_t / u^p = (w/(p-1) + w_s) / w^p``, evaluated
    from the integrated ``h0h0`` coefficient with centred differences.
    """
    grid = grid or make_grid()
    w = SpectralField.from_modes({HermiteIndex(0, 0): float(eval_psi(sigma, params))}, grid, True)
    times, fields = evolve_w(w, 0.0, window, params, ds)
    v = np.array([f.coeffs[0, 0] for f in fields])
    dv = (v[2:] - v[:-2]) / (2 * ds)
    mid = v[1:-1]
    return float(np.max(np.abs((mid / (params.p - 1.0) + dv) / mid**params.p - 1.0)))


# ---------------------------------------------------------------------------
# intermediate profile


@dataclass(frozen=True)
class ProfileTrend:
    K: float
    s_values: tuple
    errors: tuple
    counts: tuple

    @property
    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))


def profile_region_mask(grid: Grid, s: float, K: float, params: Params) -> np.ndarray:
    y1, y2 = grid.mesh
    g = math.exp(-s) * y1**2 * y2**2 + params.delta * math.exp(-2 * s) * (y1**6 + y2**6)
    return g < K


def intermediate_profile_check(K: float, s_list, params: Params, trajectory: Trajectory | None = None,
                               grid: Grid | None = None) -> ProfileTrend:
    """``sup |w_0 - Phi|`` over ``{e^{-s} y1^2 y2^2 + delta e^{-2s}(y1^6 + y2^6) < K}`` on the nodes.

    ``w_0 = q + phi`` is read from the trajectory's kept states; a trajectory
    that recorded none of the requested times is an error.
    """
    if trajectory is None:
        raise PreconditionError("intermediate_profile_check needs a trajectory")
    grid = grid or make_grid()
    y1, y2 = grid.mesh
    errors, counts = [], []
    for s in s_list:
        st = _state_at(trajectory, s)
        w = st.samples + profile_samples(params, grid, st.s).phi
        mask = profile_region_mask(grid, st.s, K, params)
        errors.append(float(np.max(np.abs(w - eval_Phi(y1, y2, st.s, params))[mask])))
        counts.append(int(mask.sum()))
    return ProfileTrend(K, tuple(float(s) for s in s_list), tuple(errors), tuple(counts))


def _state_at(traj: Trajectory, s: float) -> SpectralState:
    for k, st in traj.states.items():
        if abs(k - s) < 1e-9:
            return st
    raise PreconditionError(f"trajectory has no state kept at s = {s}")


def profile_trajectory(params: Params, window: float = 3.0, grid: Grid | None = None, ds: float = 0.01):
    """Integrate ``d`` over the window (past any exit) keeping the states at integer offsets."""
    keep = [params.s0 + k for k in range(int(window) + 1)]
    return run(params, window, grid or make_grid(), ds, keep_at=keep)


# ---------------------------------------------------------------------------
# calibration


@dataclass
class CalibrationResult:
    name: str
    value: float
    detail: dict = field(default_factory=dict)


def calibrate_M0(grid: Grid | None = None, ps=(1.5, 2.0, 3.0)) -> CalibrationResult:
    grid = grid or make_grid()
    shapes = {"h0h0": {(0, 0): 1.0}, "h2h0+h0h2": {(2, 0): 1.0, (2, 2): 1.0}, "h2h2": {(4, 2): 1.0},
              "h4h0+h0h4": {(4, 0): 1.0, (4, 4): 1.0}, "mixed": {(0, 0): 1.0, (2, 0): 0.3, (2, 2): 0.3, (4, 2): 0.1}}
    worst, detail = 0.0, {}
    for p in ps:
        params = Params(p=p)
        for name, modes in shapes.items():
            f = SpectralField.from_modes(modes, grid, True)
            eps = 0.9 * constants.eps0(params.kappa) / f.norm()
            while _guard_sup(SpectralField.from_coeffs(eps * f.coeffs, grid)) > 2 * params.kappa:
                eps /= 2
            rep = probe_zero_stability(eps, f, 4.0, params, grid, M0=math.inf)
            detail[(p, name)] = rep.sup_ratio
            worst = max(worst, rep.sup_ratio)
    return CalibrationResult("M0", worst, detail)


def calibrate_region_C(grid_radii=None, s0s=(12.0, 14.0, 16.0), m: float = constants.M_SMALL) -> CalibrationResult:
    radii = grid_radii or list(np.geomspace(0.05, 200.0, 60))
    angles = list(np.linspace(0.0, math.pi / 4, 7))
    worst, detail = 0.0, {}
    for s0 in s0s:
        for d in ((0.0,) * 5, (1.0,) * 5, (-1.0,) * 5):
            params = Params(s0=s0, d=d)
            for rep in region_map(params, radii, angles, m, None):
                lo = max(region_bounds(r, params, m, rep.region.M, 0.0)[0] for r in rep.region.labels)
                hi = min(region_bounds(r, params, m, rep.region.M, 0.0)[1] for r in rep.region.labels)
                excess = max(lo - rep.value, rep.value - hi, 0.0) * math.exp(s0 / 3.0)
                if excess > worst:
                    worst = excess
                    detail = {"s0": s0, "d": d, "a": rep.a, "region": sorted(rep.region.labels)}
    return CalibrationResult("C_REGION", worst, detail)


def calibrate_M_descent(params: Params | None = None, sums=(20.0, 24.0, 28.0), grid: Grid | None = None) -> CalibrationResult:
    params = params or Params(s0=14.0)
    grid = grid or make_grid()
    worst, detail = 0.0, {}
    for total in sums:
        for frac in (0.0, 0.25, 0.5):
            K, L = frac * total, (1 - frac) * total
            try:
                rep = descent_check(K, L, params=params, grid=grid, after=0.1, M=math.inf)
            except PreconditionError:
                continue
            detail[(K, L)] = rep.envelope_ratio
            worst = max(worst, rep.envelope_ratio)
    return CalibrationResult("M_DESCENT", worst, detail)


def calibration_sweeps(grid: Grid | None = None) -> list[CalibrationResult]:
    """Re-run the sweeps behind the frozen constants (slow; for audits only)."""
    grid = grid or make_grid()
    return [calibrate_M0(grid), calibrate_region_C(), calibrate_M_descent(grid=grid)]
