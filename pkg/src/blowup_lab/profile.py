"""Floating-point evaluation of the explicit functions of the construction.

All evaluators are vectorized over ``(y1, y2)`` (numpy broadcasting).  The
profile is written as

    phi = kappa * (E / D')^(1/(p-1)),   D' = D / (p-1),

and evaluated as ``kappa * exp(log1p(X) / (p-1))`` with ``X = (E - D') / D'``.
``E - D'`` is assembled from polynomials in which the large cancelling terms
have been removed exactly, so ``phi - kappa`` keeps full relative accuracy
even when ``exp(-s)`` is tiny.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.signal import convolve2d
from scipy.special import expit

from .basis import hermite_coeffs
from .errors import DivergesAtOrigin, NonpositiveBracket, NonpositiveE, PreconditionError

D_LABELS = ("d00", "d20", "d40", "d42", "d60")
DELTA_LADDER = (1, 2, 5, 10, 20, 50, 100)


@dataclass(frozen=True)
class Params:
    """Scalar configuration; ``kappa`` and ``gamma`` are always derived from ``p``."""

    p: float = 2.0
    delta: float = 100.0
    A: float = 20.0
    s0: float = 12.0
    d: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(float(x) for x in self.d))
        if not self.p > 1:
            raise PreconditionError(f"p must exceed 1, got {self.p}")
        if not self.delta >= 1:
            raise PreconditionError(f"delta must be >= 1, got {self.delta}")
        if not self.A >= 1:
            raise PreconditionError(f"A must be >= 1, got {self.A}")
        if len(self.d) != 5:
            raise PreconditionError("d needs five components (d00, d20, d40, d42, d60)")
        if any(abs(x) > 2 for x in self.d):
            raise PreconditionError(f"d must lie in [-2, 2]^5, got {self.d}")

    @property
    def kappa(self) -> float:
        return (self.p - 1.0) ** (-1.0 / (self.p - 1.0))

    @property
    def gamma(self) -> float:
        return (6.0 * self.p - 2.0) / self.kappa

    @property
    def a(self) -> float:
        """The exponent ``1/(p-1)``."""
        return 1.0 / (self.p - 1.0)

    def with_(self, **kw) -> "Params":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return {"p": self.p, "delta": self.delta, "A": self.A, "s0": self.s0, "d": list(self.d),
                "kappa": self.kappa, "gamma": self.gamma}


# ---------------------------------------------------------------------------
# polynomial coefficient arrays, c[i, j] multiplies y1^i y2^j


def _h(n: int) -> np.ndarray:
    return np.array(hermite_coeffs(n), dtype=float)


def _hh(a: int, b: int) -> np.ndarray:
    return np.outer(_h(a), _h(b))


def _mono(i: int, j: int) -> np.ndarray:
    c = np.zeros((i + 1, j + 1))
    c[i, j] = 1.0
    return c


def _add(*arrays) -> np.ndarray:
    n = max(a.shape[0] for a in arrays)
    m = max(a.shape[1] for a in arrays)
    out = np.zeros((n, m))
    for a in arrays:
        out[: a.shape[0], : a.shape[1]] += a
    return out


def _trim_degree(c: np.ndarray, deg: int, scale: float) -> np.ndarray:
    i, j = np.indices(c.shape)
    high = (i + j) > deg
    if np.any(np.abs(c[high]) > 1e-9 * scale):
        raise AssertionError("high-degree terms of Q failed to cancel")
    return np.where(high, 0.0, c)[: deg + 1, : deg + 1]


@dataclass(frozen=True)
class ProfilePolys:
    """Coefficient arrays of ``P``, ``Q`` and of the cancellation-free pieces."""

    P: np.ndarray
    Q: np.ndarray
    Pt: np.ndarray  # P - c y1^2 y2^2 = -c h2 h2
    Qt: np.ndarray  # Q - c delta (y1^6 + y2^6)
    grads: dict = field(repr=False)


def _derivs(c: np.ndarray) -> dict:
    d1 = npoly.polyder(c, axis=0) if c.shape[0] > 1 else np.zeros((1, 1))
    d2 = npoly.polyder(c, axis=1) if c.shape[1] > 1 else np.zeros((1, 1))
    lap = _add(
        npoly.polyder(c, 2, axis=0) if c.shape[0] > 2 else np.zeros((1, 1)),
        npoly.polyder(c, 2, axis=1) if c.shape[1] > 2 else np.zeros((1, 1)),
    )
    return {"d1": d1, "d2": d2, "lap": lap}


@lru_cache(maxsize=64)
def profile_polys(p: float, delta: float, gamma: float | None = None) -> ProfilePolys:
    kappa = (p - 1.0) ** (-1.0 / (p - 1.0))
    default_gamma = gamma is None
    if default_gamma:
        gamma = (6.0 * p - 2.0) / kappa
    c = (p - 1.0) / kappa
    y22 = _mono(2, 2)
    P = c * _add(y22, -_hh(2, 2))
    inner = _add(
        convolve2d(P, y22) / (p - 1.0),
        kappa * (p - 2.0) / (2.0 * (p - 1.0) ** 2) * convolve2d(P, P),
        delta * _add(_mono(6, 0), -_hh(6, 0)),
        delta * _add(_mono(0, 6), -_hh(0, 6)),
        p / (2.0 * kappa) * _add(_hh(4, 4), -_mono(4, 4)),
        gamma * _add(_hh(4, 2), _hh(2, 4)),
    )
    Q = c * inner
    if default_gamma:
        Q = _trim_degree(Q, 4, scale=float(np.max(np.abs(Q))))
    Pt = -c * _hh(2, 2)
    Qt = _add(Q, -c * delta * _add(_mono(6, 0), _mono(0, 6)))
    grads = {"P": _derivs(P), "Q": _derivs(Q)}
    return ProfilePolys(P=P, Q=Q, Pt=Pt, Qt=Qt, grads=grads)


def _polys(params: Params) -> ProfilePolys:
    return profile_polys(float(params.p), float(params.delta))


def _val(c, y1, y2):
    y1, y2 = np.broadcast_arrays(np.asarray(y1, float), np.asarray(y2, float))
    return npoly.polyval2d(y1, y2, c)


# ---------------------------------------------------------------------------
# P, Q, E, D


def eval_P(y1, y2, params: Params):
    return _val(_polys(params).P, y1, y2)


def eval_P_simplified(y1, y2, params: Params):
    """The reduced form ``2(p-1)/kappa (y1^2 + y2^2 - 2)``."""
    y1, y2 = np.asarray(y1, float), np.asarray(y2, float)
    return 2.0 * (params.p - 1.0) / params.kappa * (y1**2 + y2**2 - 2.0)


def eval_Q(y1, y2, params: Params):
    return _val(_polys(params).Q, y1, y2)


def eval_Q_hermite(y1, y2, params: Params):
    """``Q`` straight from its defining combination of Hermite products."""
    from .basis import hermite_eval

    p, k, dl, g = params.p, params.kappa, params.delta, params.gamma
    y1, y2 = np.asarray(y1, float), np.asarray(y2, float)
    h = hermite_eval
    P = eval_P(y1, y2, params)
    inner = (P * y1**2 * y2**2 / (p - 1) + k * (p - 2) / (2 * (p - 1) ** 2) * P**2
             + dl * (y1**6 - h(6, y1)) + dl * (y2**6 - h(6, y2))
             + p / (2 * k) * (h(4, y1) * h(4, y2) - y1**4 * y2**4)
             + g * (h(4, y1) * h(2, y2) + h(2, y1) * h(4, y2)))
    return (p - 1) / k * inner


def eval_E(y1, y2, s, params: Params):
    pol = _polys(params)
    eps = math.exp(-s)
    return 1.0 + eps * _val(pol.P, y1, y2) + eps * eps * _val(pol.Q, y1, y2)


def _dnorm_excess(y1, y2, s, params: Params):
    """``D' - 1 = ((p-1)/kappa)(eps y1^2 y2^2 + delta eps^2 (y1^6 + y2^6))``."""
    y1, y2 = np.asarray(y1, float), np.asarray(y2, float)
    eps = math.exp(-s)
    c = (params.p - 1.0) / params.kappa
    return c * (eps * y1**2 * y2**2 + params.delta * eps * eps * (y1**6 + y2**6))


def eval_D(y1, y2, s, params: Params):
    return (params.p - 1.0) * (1.0 + _dnorm_excess(y1, y2, s, params))


def _worst(y1, y2, values):
    y1b, y2b, vb = np.broadcast_arrays(np.asarray(y1, float), np.asarray(y2, float), values)
    k = int(np.argmin(vb))
    return (float(y1b.flat[k]), float(y2b.flat[k])), float(vb.flat[k])


def _check_E(E, y1, y2, s):
    if np.any(~(E > 0)):
        y, v = _worst(y1, y2, E)
        raise NonpositiveE(y, s, v)


@dataclass
class ProfileFields:
    """``phi`` and the auxiliary quantities used by the dynamics, on one set of points.

    ``X = E/D' - 1`` so that ``phi^(p-1) = (1 + X)/(p-1)``.
    """

    y1: np.ndarray
    y2: np.ndarray
    s: float
    E: np.ndarray
    Dn: np.ndarray
    X: np.ndarray
    phi: np.ndarray


def profile_fields(y1, y2, s, params: Params, check: bool = True) -> ProfileFields:
    pol = _polys(params)
    y1, y2 = np.asarray(y1, float), np.asarray(y2, float)
    eps = math.exp(-s)
    E = 1.0 + eps * _val(pol.P, y1, y2) + eps * eps * _val(pol.Q, y1, y2)
    if check:
        _check_E(E, y1, y2, s)
    Dn = 1.0 + _dnorm_excess(y1, y2, s, params)
    X = (eps * _val(pol.Pt, y1, y2) + eps * eps * _val(pol.Qt, y1, y2)) / Dn
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = params.kappa * np.exp(np.log1p(X) / (params.p - 1.0))
    return ProfileFields(y1, y2, s, E, Dn, X, phi)


def eval_phi(y1, y2, s, params: Params):
    return profile_fields(y1, y2, s, params).phi


def eval_phi_excess(y1, y2, s, params: Params):
    """``phi - kappa`` without cancellation."""
    f = profile_fields(y1, y2, s, params)
    return params.kappa * np.expm1(np.log1p(f.X) / (params.p - 1.0))


def _grad_logs(y1, y2, s, params: Params):
    """Gradients and Laplacians of ``E`` and ``D'`` plus their values."""
    pol = _polys(params)
    y1, y2 = np.asarray(y1, float), np.asarray(y2, float)
    eps = math.exp(-s)
    gP, gQ = pol.grads["P"], pol.grads["Q"]
    E = 1.0 + eps * _val(pol.P, y1, y2) + eps * eps * _val(pol.Q, y1, y2)
    E1 = eps * _val(gP["d1"], y1, y2) + eps * eps * _val(gQ["d1"], y1, y2)
    E2 = eps * _val(gP["d2"], y1, y2) + eps * eps * _val(gQ["d2"], y1, y2)
    EL = eps * _val(gP["lap"], y1, y2) + eps * eps * _val(gQ["lap"], y1, y2)
    c = (params.p - 1.0) / params.kappa
    dl = params.delta
    Dn = 1.0 + c * (eps * y1**2 * y2**2 + dl * eps * eps * (y1**6 + y2**6))
    D1 = c * (2 * eps * y1 * y2**2 + 6 * dl * eps * eps * y1**5)
    D2 = c * (2 * eps * y1**2 * y2 + 6 * dl * eps * eps * y2**5)
    DL = c * (2 * eps * (y1**2 + y2**2) + 30 * dl * eps * eps * (y1**4 + y2**4))
    return E, (E1, E2), EL, Dn, (D1, D2), DL


def eval_grad_phi(y1, y2, s, params: Params):
    """``grad phi = (phi/(p-1)) (grad E / E - grad D / D)`` as a pair of arrays."""
    E, (E1, E2), _, Dn, (D1, D2), _ = _grad_logs(y1, y2, s, params)
    _check_E(E, y1, y2, s)
    phi = eval_phi(y1, y2, s, params)
    a = params.a
    return a * phi * (E1 / E - D1 / Dn), a * phi * (E2 / E - D2 / Dn)


def eval_lap_phi(y1, y2, s, params: Params):
    """Analytic Laplacian of ``phi`` from the logarithmic derivative."""
    E, (E1, E2), EL, Dn, (D1, D2), DL = _grad_logs(y1, y2, s, params)
    _check_E(E, y1, y2, s)
    phi = eval_phi(y1, y2, s, params)
    a = params.a
    g1, g2 = E1 / E - D1 / Dn, E2 / E - D2 / Dn
    div_g = EL / E - (E1**2 + E2**2) / E**2 - DL / Dn + (D1**2 + D2**2) / Dn**2
    return phi * (a * a * (g1**2 + g2**2) + a * div_g)


def eval_dphi_ds(y1, y2, s, params: Params):
    """``d phi / ds`` at fixed ``y``."""
    pol = _polys(params)
    y1, y2 = np.asarray(y1, float), np.asarray(y2, float)
    eps = math.exp(-s)
    P, Q = _val(pol.P, y1, y2), _val(pol.Q, y1, y2)
    E = 1.0 + eps * P + eps * eps * Q
    _check_E(E, y1, y2, s)
    Es = -eps * P - 2 * eps * eps * Q
    c = (params.p - 1.0) / params.kappa
    Dn = 1.0 + c * (eps * y1**2 * y2**2 + params.delta * eps * eps * (y1**6 + y2**6))
    Ds = -c * (eps * y1**2 * y2**2 + 2 * params.delta * eps * eps * (y1**6 + y2**6))
    phi = eval_phi(y1, y2, s, params)
    return params.a * phi * (Es / E - Ds / Dn)


# ---------------------------------------------------------------------------
# intermediate profile, heteroclinic orbit


def eval_Phi(y1, y2, s, params: Params):
    """The intermediate profile; never exceeds ``kappa``."""
    return params.kappa * np.exp(-np.log1p(_dnorm_excess(y1, y2, s, params)) / (params.p - 1.0))


def eval_psi(s, params: Params):
    """``psi(s) = kappa (1 + e^s)^(-1/(p-1))``."""
    return params.kappa * np.exp(-np.logaddexp(0.0, s) / (params.p - 1.0))


def eval_dpsi(s, params: Params):
    return -params.a * eval_psi(s, params) * expit(s)


def psi_residual(s, params: Params):
    """``psi' + psi/(p-1) - psi^p``; zero for the exact orbit."""
    psi = eval_psi(s, params)
    return eval_dpsi(s, params) + psi / (params.p - 1.0) - psi**params.p


def psi_time_of(value: float, params: Params) -> float:
    """The time ``sigma`` with ``psi(sigma) = value`` for ``0 < value < kappa``."""
    if not 0 < value < params.kappa:
        raise PreconditionError("psi takes values in (0, kappa)")
    # (kappa/value)^(p-1) = 1 + e^sigma
    return float(np.log(np.expm1((params.p - 1.0) * np.log(params.kappa / value))))


# ---------------------------------------------------------------------------
# initial data


def eval_S(y1, y2, params: Params):
    from .basis import hermite_eval as h

    d00, d20, d40, d42, _ = params.d
    y1, y2 = np.asarray(y1, float), np.asarray(y2, float)
    return (d00 + d20 * (h(2, y1) + h(2, y2)) + d40 * (h(4, y1) + h(4, y2))
            + d42 * h(2, y1) * h(2, y2))


def eval_Sbar(y1, y2, params: Params):
    from .basis import hermite_eval as h

    return params.d[4] * (h(6, np.asarray(y1, float)) + h(6, np.asarray(y2, float)))


def _perturbation(y1, y2, params: Params):
    """``A e^(-2 s0) S + A s0^2 e^(-3 s0) Sbar`` (the time in the second term is ``s0``)."""
    s0, A = params.s0, params.A
    return (A * math.exp(-2 * s0) * eval_S(y1, y2, params)
            + A * s0 * s0 * math.exp(-3 * s0) * eval_Sbar(y1, y2, params))


def eval_bracket(y1, y2, params: Params):
    """``E + (p-1)/(kappa D) Z`` at ``s = s0``; must stay positive."""
    s0 = params.s0
    E = eval_E(y1, y2, s0, params)
    if not any(params.d):
        return E
    D = eval_D(y1, y2, s0, params)
    return E + (params.p - 1.0) / (params.kappa * D) * _perturbation(y1, y2, params)


def eval_w0_init(y1, y2, params: Params, check: bool = True):
    """Initial data at ``s0``; identical to ``phi(., s0)`` (same code path) when ``d = 0``."""
    f = profile_fields(y1, y2, params.s0, params, check=False)
    X = f.X
    if any(params.d):
        D = (params.p - 1.0) * f.Dn
        extra = (params.p - 1.0) / (params.kappa * D) * _perturbation(y1, y2, params)
        if check:
            bracket = f.E + extra
            if np.any(~(bracket > 0)):
                y, v = _worst(y1, y2, bracket)
                raise NonpositiveBracket(y, v)
        X = X + extra / f.Dn
    elif check:
        _check_E(f.E, y1, y2, params.s0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return params.kappa * np.exp(np.log1p(X) / (params.p - 1.0))


def eval_w0_excess(y1, y2, params: Params, check: bool = True):
    """``w0(., s0) - phi(., s0)`` without cancellation.

    The bracket factors as ``E (1 + extra / E)``, so the difference is
    ``phi * expm1(log1p(extra / E) / (p-1))``; exactly zero when ``d = 0``.
    """
    f = profile_fields(y1, y2, params.s0, params, check=check)
    if not any(params.d):
        return np.zeros(np.broadcast(f.y1, f.y2).shape)
    D = (params.p - 1.0) * f.Dn
    extra = (params.p - 1.0) / (params.kappa * D) * _perturbation(y1, y2, params)
    if check and np.any(~(f.E + extra > 0)):
        y, v = _worst(y1, y2, f.E + extra)
        raise NonpositiveBracket(y, v)
    with np.errstate(invalid="ignore", divide="ignore"):
        return f.phi * np.expm1(np.log1p(extra / f.E) / (params.p - 1.0))


# ---------------------------------------------------------------------------
# original variables


def eval_G0(a1, a2, params: Params):
    a1, a2 = np.asarray(a1, float), np.asarray(a2, float)
    return (params.p - 1.0) / params.kappa * (a1**2 * a2**2 + params.delta * (a1**6 + a2**6))


def eval_u_star(a1, a2, params: Params):
    a1, a2 = np.asarray(a1, float), np.asarray(a2, float)
    if np.any((a1 == 0) & (a2 == 0)):
        raise DivergesAtOrigin("u* is infinite at a = 0")
    g = (params.p - 1.0) * eval_G0(a1, a2, params)
    return np.exp(-np.log(g) / (params.p - 1.0))


# ---------------------------------------------------------------------------
# certification scans


@dataclass
class LemphiReport:
    s: float
    radius: float
    min_E: float
    sup_phi_excess: float
    sup_grad: float
    tail_value: float
    tail_tolerance: float

    @property
    def E_ok(self) -> bool:
        return self.min_E >= 0.5

    @property
    def tail_ok(self) -> bool:
        return self.tail_value <= self.tail_tolerance

    @property
    def finite(self) -> bool:
        return all(np.isfinite([self.min_E, self.sup_phi_excess, self.sup_grad, self.tail_value]))

    @property
    def ok(self) -> bool:
        return self.finite and self.E_ok and self.tail_ok


def graded_axis(radius: float, core: float = 10.0, n_core: int = 401, n_tail: int = 80) -> np.ndarray:
    """Uniform points on ``[-core, core]`` plus geometric tails out to ``radius``."""
    if radius < core:
        raise PreconditionError(f"scan radius must be >= {core}")
    mid = np.linspace(-core, core, n_core)
    if radius == core:
        return mid
    tail = np.geomspace(core, radius, n_tail)[1:]
    return np.concatenate([-tail[::-1], mid, tail])


def tail_tolerance(radius: float, kappa: float = 1.0) -> float:
    """Allowed boundary value of ``phi``; decreasing in the radius."""
    return 5.0 * kappa / radius


def default_scan_radius(s: float) -> float:
    """``30 e^(s/6)``: beyond the gradient peak, which moves out like ``e^(s/6)``."""
    return 30.0 * math.exp(s / 6.0)


def certify_lemphi(params: Params, s: float, grid_radius: float | None = None) -> LemphiReport:
    """Scan a graded grid for the four profile properties at time ``s``.

    The grid is uniform on ``[-10, 10]^2`` with geometric tails out to
    ``grid_radius`` (default ``30 e^(s/6)``).  ``sup_phi_excess`` and
    ``sup_grad`` are rescaled by ``e^(s/3)`` and ``e^(s/6)``.
    """
    if grid_radius is None:
        grid_radius = default_scan_radius(s)
    ax = graded_axis(grid_radius)
    Y1, Y2 = np.meshgrid(ax, ax, indexing="ij")
    E = eval_E(Y1, Y2, s, params)
    min_E = float(E.min())
    if min_E <= 0:
        nan = float("nan")
        return LemphiReport(s, grid_radius, min_E, nan, nan, nan,
                            tail_tolerance(grid_radius, params.kappa))
    excess = eval_phi_excess(Y1, Y2, s, params)
    g1, g2 = eval_grad_phi(Y1, Y2, s, params)
    grad = np.hypot(g1, g2)
    phi = params.kappa + excess
    border = np.concatenate([phi[0, :], phi[-1, :], phi[:, 0], phi[:, -1]])
    return LemphiReport(
        s=s, radius=grid_radius, min_E=min_E,
        sup_phi_excess=float(excess.max()) * math.exp(s / 3.0),
        sup_grad=float(grad.max()) * math.exp(s / 6.0),
        tail_value=float(border.max()),
        tail_tolerance=tail_tolerance(grid_radius, params.kappa),
    )


def delta_threshold(params: Params, s: float, grid_radius: float | None = None,
                    ladder=DELTA_LADDER) -> float | None:
    """Smallest ``delta`` on the ladder giving ``min E >= 1/2`` at time ``s``."""
    ax = graded_axis(grid_radius or default_scan_radius(s))
    Y1, Y2 = np.meshgrid(ax, ax, indexing="ij")
    for dl in ladder:
        if float(eval_E(Y1, Y2, s, params.with_(delta=float(dl))).min()) >= 0.5:
            return float(dl)
    return None


def lowQ_radius(params: Params, r_max: float = 200.0, n: int = 400) -> float:
    """Smallest scanned radius beyond which ``Q >= 15 delta (p-1)/kappa (y1^4 + y2^4)``."""
    radii = np.geomspace(0.5, r_max, n)
    theta = np.linspace(0.0, np.pi / 2, 181)
    c = 15.0 * params.delta * (params.p - 1.0) / params.kappa
    ok = np.empty(n, dtype=bool)
    for k, r in enumerate(radii):
        y1, y2 = r * np.cos(theta), r * np.sin(theta)
        ok[k] = np.all(eval_Q(y1, y2, params) >= c * (y1**4 + y2**4))
    if not ok[-1]:
        raise PreconditionError("lower bound on Q not reached within the scan")
    bad = np.nonzero(~ok)[0]
    return float(radii[bad[-1] + 1]) if bad.size else float(radii[0])


def axis_profile(params: Params, s: float, r_end: float, n: int = 400):
    """``(r, phi(r, 0, s))`` on ``[0, r_end]``."""
    r = np.linspace(0.0, r_end, n)
    return r, eval_phi(r, 0.0, s, params)
