"""Pseudo-spectral integration of the perturbation equation.

The perturbation ``q = w - phi`` of the profile obeys

    dq/ds = (L + V) q + B(q) + R,

with ``V = p phi^(p-1) - p/(p-1)``, ``B`` the superlinear part of
``|w|^(p-1) w`` and ``R`` the residual of ``phi`` itself.  Time stepping is a
Strang splitting: the linear part is exact on Hermite coefficients, the
reaction ``V q + B + R`` is evaluated on quadrature nodes, re-projected and
advanced with Heun's method.

Also here: the projections ``q_{i,j}``, the shrinking-set margins, the sign of
the flow on its boundary, and the shooting search over the five initial-data
parameters.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

from . import kernels
from .basis import Grid, HermiteIndex, hermite_norm_sq, make_grid
from .errors import IntegrationOverflow, OutOfHull, PreconditionError
from .operators import SpectralField
from .profile import (
    D_LABELS,
    Params,
    eval_dphi_ds,
    eval_grad_phi,
    eval_lap_phi,
    eval_psi,
    eval_w0_excess,
    eval_w0_init,
    profile_fields,
)

MAX_DS = 0.1
OVERFLOW_FACTOR = 10.0
# (sup phi - kappa) e^(s/3) measured <= 0.052 for s >= 10 on the certification scan
PHI_EXCESS_C = 0.1

# the five components steered by d00, d20, d40, d42, d60
OUTGOING = (HermiteIndex(0, 0), HermiteIndex(2, 0), HermiteIndex(4, 0), HermiteIndex(4, 2), HermiteIndex(6, 0))
INGOING = ("q62", "q_minus")
MIRROR = {(2, 2): (2, 0), (4, 4): (4, 0), (6, 6): (6, 0), (6, 4): (6, 2)}


def _name(i: int, j: int) -> str:
    return f"q{i}{j}"


CORE = tuple((i, j) for i in (0, 2, 4) for j in range(0, i + 1, 2))
SIX_CORNER = ((6, 0), (6, 6))
SIX_MID = ((6, 2), (6, 4))
CONSTRAINTS = tuple(_name(*ij) for ij in CORE + SIX_CORNER + SIX_MID) + ("q_minus", "linf")


def canonical(name: str) -> str:
    """Map a mirror constraint to its representative (``q22 -> q20``)."""
    if name.startswith("q") and name[1:].isdigit():
        ij = (int(name[1]), int(name[2]))
        return _name(*MIRROR.get(ij, ij))
    return name


OUTGOING_NAMES = tuple(_name(*ij) for ij in OUTGOING)


# ---------------------------------------------------------------------------
# pointwise terms


def eval_V(y1, y2, s, params: Params):
    """``p phi^(p-1) - p/(p-1) = p X / (p-1)``."""
    f = profile_fields(y1, y2, s, params)
    return params.p * f.X / (params.p - 1.0)


def eval_B(y1, y2, s, q, params: Params):
    phi = profile_fields(y1, y2, s, params).phi
    return kernels.nonlinear_b(phi, np.broadcast_to(q, np.shape(phi)), params.p)


def eval_R(y1, y2, s, params: Params):
    """``-d_s phi + (L - 1) phi - phi/(p-1) + phi^p``.

    ``phi^p - phi/(p-1)`` equals ``phi X/(p-1)``, so every term is small and
    only the final sum cancels (to ``O(e^(-2s))``).
    """
    y1, y2 = np.asarray(y1, float), np.asarray(y2, float)
    f = profile_fields(y1, y2, s, params)
    g1, g2 = eval_grad_phi(y1, y2, s, params)
    return (-eval_dphi_ds(y1, y2, s, params) + eval_lap_phi(y1, y2, s, params)
            - 0.5 * (y1 * g1 + y2 * g2) + f.phi * f.X / (params.p - 1.0))


@dataclass(frozen=True)
class ProfileSamples:
    phi: np.ndarray
    V: np.ndarray
    R: np.ndarray


@lru_cache(maxsize=1500)
def _profile_samples(p: float, delta: float, order: int, s: float) -> ProfileSamples:
    grid = make_grid(order, 0)
    params = Params(p=p, delta=delta)
    y1, y2 = grid.mesh
    f = profile_fields(y1, y2, s, params)
    out = ProfileSamples(f.phi, params.p * f.X / (params.p - 1.0), eval_R(y1, y2, s, params))
    for a in (out.phi, out.V, out.R):
        a.setflags(write=False)
    return out


def profile_samples(params: Params, grid: Grid, s: float) -> ProfileSamples:
    """``phi``, ``V`` and ``R`` on the grid nodes (cached across trajectories)."""
    return _profile_samples(params.p, params.delta, grid.order, float(s))


# ---------------------------------------------------------------------------
# state and stepping


@dataclass(frozen=True)
class Flow:
    """Which terms of the right-hand side are active."""

    V: bool = True
    B: bool = True
    R: bool = True

    @property
    def full(self) -> bool:
        return self.V and self.B and self.R


FULL = Flow()
LINEAR = Flow(False, False, False)


@dataclass(frozen=True)
class SpectralState:
    """``q`` at time ``s`` as coefficients and node samples."""

    s: float
    field: SpectralField

    @property
    def grid(self) -> Grid:
        return self.field.grid

    @property
    def coeffs(self) -> np.ndarray:
        return self.field.coeffs

    @property
    def samples(self) -> np.ndarray:
        return self.field.samples

    @classmethod
    def from_coeffs(cls, s: float, coeffs, grid: Grid, symmetric: bool = True) -> "SpectralState":
        return cls(float(s), SpectralField.from_coeffs(coeffs, grid, symmetric))

    @classmethod
    def from_samples(cls, s: float, samples, grid: Grid, symmetric: bool = True) -> "SpectralState":
        return cls(float(s), SpectralField.from_samples(samples, grid, symmetric))

    @classmethod
    def zero(cls, s: float, grid: Grid) -> "SpectralState":
        return cls.from_coeffs(s, np.zeros((grid.nmax + 1,) * 2), grid)


def build_initial(params: Params, grid: Grid | None = None) -> SpectralState:
    """``q(s0) = w0(., s0) - phi(., s0)`` sampled and projected."""
    grid = grid or make_grid()
    y1, y2 = grid.mesh
    return SpectralState.from_samples(params.s0, eval_w0_excess(y1, y2, params), grid)


def reaction_samples(q: np.ndarray, s: float, params: Params, grid: Grid, flow: Flow = FULL) -> np.ndarray:
    prof = profile_samples(params, grid, s)
    if flow.full:
        return kernels.reaction(prof.phi, q, prof.V, prof.R, params.p)
    out = np.zeros_like(q)
    if flow.V:
        out = out + prof.V * q
    if flow.B:
        out = out + kernels.nonlinear_b(prof.phi, q, params.p)
    if flow.R:
        out = out + prof.R
    return out


def strang_step(c: np.ndarray, s: float, ds: float, grid: Grid,
                rhs: Callable[[np.ndarray, float], np.ndarray], shift: float = 0.0) -> np.ndarray:
    """One Strang step for ``c' = (Lambda + shift) c + rhs(c, s)`` on coefficients.

    ``rhs`` maps coefficients to coefficients; the reaction substep is Heun's
    method over ``[s, s + ds]``.
    """
    half = np.where(grid.mask, np.exp((grid.eigenvalues + shift) * (0.5 * ds)), 0.0)
    c = c * half
    k1 = rhs(c, s)
    k2 = rhs(c + ds * k1, s + ds)
    c = c + (0.5 * ds) * (k1 + k2)
    return c * half


def _check_overflow(q: np.ndarray, s: float, params: Params, grid: Grid):
    w = q + profile_samples(params, grid, s).phi
    sup = float(np.max(np.abs(w)))
    if not sup <= OVERFLOW_FACTOR * params.kappa:
        raise IntegrationOverflow(s, sup)


def step(state: SpectralState, s: float | None, ds: float, params: Params, flow: Flow = FULL) -> SpectralState:
    """Advance ``q`` from ``s`` (default ``state.s``) to ``s + ds``."""
    if not 0 < ds <= MAX_DS:
        raise PreconditionError(f"ds must lie in (0, {MAX_DS}]")
    s = state.s if s is None else float(s)
    grid = state.grid

    def rhs(c, t):
        return grid.project(reaction_samples(grid.reconstruct(c), t, params, grid, flow))

    if flow == LINEAR:
        c = state.coeffs * np.where(grid.mask, np.exp(grid.eigenvalues * ds), 0.0)
    else:
        c = strang_step(state.coeffs, s, ds, grid, rhs)
    new = SpectralState(s + ds, SpectralField(grid, c, grid.reconstruct(c), state.field.symmetric))
    _check_overflow(new.samples, new.s, params, grid)
    return new


def time_lattice(s_start: float, window: float, ds: float) -> np.ndarray:
    """``s_start + k ds`` for ``k = 0..n``; the same floats for every trajectory."""
    n = int(round(window / ds))
    if n * ds < window - 1e-12:
        n += 1
    return s_start + ds * np.arange(n + 1)


# ---------------------------------------------------------------------------
# decomposition and the shrinking set


@dataclass(frozen=True)
class QDecomposition:
    qij: dict
    q_minus_norm: float
    s: float
    q_norm: float = 0.0
    sup_w: float = float("nan")

    def __getitem__(self, idx) -> float:
        return self.qij[HermiteIndex(*idx)]


def decompose_coeffs(c: np.ndarray, grid: Grid, s: float, sup_w: float = float("nan")) -> QDecomposition:
    nrm = np.outer(grid.norms, grid.norms)
    chat = c * nrm
    qij = {}
    for i in range(min(7, grid.nmax) + 1):
        for j in range(i + 1):
            qij[HermiteIndex(i, j)] = float(c[i - j, j])
    a = np.arange(c.shape[0])
    high = (a[:, None] + a[None, :]) >= 8
    return QDecomposition(qij, float(np.sqrt(np.sum(chat[high] ** 2))), s,
                          float(np.sqrt(np.sum(chat**2))), sup_w)


def sup_w_on_grid(q: np.ndarray, s: float, params: Params, grid: Grid) -> float:
    """Grid sup of ``|q + phi|`` combined with the analytic tail bound of ``phi``."""
    w = q + profile_samples(params, grid, s).phi
    tail = params.kappa + PHI_EXCESS_C * math.exp(-s / 3.0)
    return max(float(np.max(np.abs(w))), tail)


def decompose(state: SpectralState, params: Params | None = None) -> QDecomposition:
    sup = float("nan") if params is None else sup_w_on_grid(state.samples, state.s, params, state.grid)
    return decompose_coeffs(state.coeffs, state.grid, state.s, sup)


def q_minus_by_subtraction(state: SpectralState) -> float:
    """``||q||^2 - sum q_ij^2 ||h h||^2`` from samples (clamped); cross-check of Parseval."""
    dec = decompose(state)
    total = state.grid.integrate(state.samples**2)
    low = sum(v * v * hermite_norm_sq(i - j) * hermite_norm_sq(j) for (i, j), v in dec.qij.items())
    return math.sqrt(max(total - low, 0.0))


def bounds(s: float, A: float) -> dict[str, float]:
    e2, e3 = math.exp(-2 * s), math.exp(-3 * s)
    return {"core": A * e2, "six_corner": A * s * s * e3, "six_mid": A * s * e2,
            "minus": A * A * s * s * e3, "linf": None}


def bound_rates(s: float, A: float) -> dict[str, float]:
    """``d/ds`` of each bound."""
    e2, e3 = math.exp(-2 * s), math.exp(-3 * s)
    return {"core": -2 * A * e2, "six_corner": A * e3 * (2 * s - 3 * s * s),
            "six_mid": A * e2 * (1 - 2 * s), "minus": A * A * e3 * (2 * s - 3 * s * s)}


def _group(name: str) -> str:
    if name in ("q_minus", "linf"):
        return {"q_minus": "minus", "linf": "linf"}[name]
    ij = (int(name[1]), int(name[2]))
    if ij in SIX_CORNER:
        return "six_corner"
    if ij in SIX_MID:
        return "six_mid"
    return "core"


@dataclass(frozen=True)
class VAReport:
    s: float
    margins: dict

    def inside(self) -> bool:
        return all(m >= 0 for m in self.margins.values())

    def exit_constraint(self) -> str | None:
        if self.inside():
            return None
        return min(self.margins, key=lambda k: self.margins[k])

    def exit_component(self) -> str | None:
        """Exit constraint mapped to its representative (``q44 -> q40``)."""
        name = self.exit_constraint()
        return None if name is None else canonical(name)

    def min_margin(self) -> float:
        return min(self.margins.values())


def va_check(dec: QDecomposition, params: Params) -> VAReport:
    b = bounds(dec.s, params.A)
    margins = {}
    for name in CONSTRAINTS:
        g = _group(name)
        if g == "minus":
            margins[name] = b["minus"] - dec.q_minus_norm
        elif g == "linf":
            margins[name] = 2 * params.kappa - dec.sup_w
        else:
            i, j = int(name[1]), int(name[2])
            margins[name] = b[g] - abs(dec.qij[HermiteIndex(i, j)])
    return VAReport(dec.s, margins)


def relative_margins(report: VAReport, params: Params) -> dict[str, float]:
    """Margins divided by their bound (``linf`` by ``2 kappa``)."""
    b = bounds(report.s, params.A)
    out = {}
    for name, m in report.margins.items():
        g = _group(name)
        out[name] = m / (2 * params.kappa if g == "linf" else b[g])
    return out


def small_norm_check(dec: QDecomposition, params: Params, C: float = 10.0) -> bool:
    """``||q|| <= C A s e^(-2s)`` (meaningful for states inside the set)."""
    return dec.q_norm <= C * params.A * dec.s * math.exp(-2 * dec.s)


# ---------------------------------------------------------------------------
# boundary flow


@dataclass(frozen=True)
class FlowSign:
    name: str
    value: float
    rate: float
    bound_rate: float
    outgoing: bool
    margin_rate: float      # outward speed relative to |bound'(s)|
    margin_bound: float     # outward speed relative to the bound itself

    @property
    def expected_outgoing(self) -> bool:
        return self.name != "q_minus" and canonical(self.name) != "q62"

    @property
    def agrees(self) -> bool:
        return self.outgoing == self.expected_outgoing


def boundary_flow(state: SpectralState, s: float | None, params: Params, h: float = 1e-4,
                  flow: Flow = FULL, names: Iterable[str] | None = None) -> dict[str, FlowSign]:
    """Sign of the flow through each face, by one small step of size ``h``.

    A component is outgoing when its outward speed ``sign(q) q' - bound'``
    is positive; for ``q_minus`` the speed is ``d||q_-||/ds - bound'``.
    """
    s = state.s if s is None else s
    later = step(state, s, h, params, flow)
    d0, d1 = decompose(state), decompose(later)
    b, br = bounds(s, params.A), bound_rates(s, params.A)
    out = {}
    for name in names or CONSTRAINTS[:-1]:
        g = _group(name)
        if g == "minus":
            value = d0.q_minus_norm
            rate = (d1.q_minus_norm - d0.q_minus_norm) / h
            speed = rate - br[g]
        else:
            idx = HermiteIndex(int(name[1]), int(name[2]))
            value = d0.qij[idx]
            rate = (d1.qij[idx] - value) / h
            speed = math.copysign(1.0, value) * rate - br[g]
        out[name] = FlowSign(name, value, rate, br[g], speed > 0, speed / abs(br[g]), speed / b[g])
    return out


def boundary_state(s: float, params: Params, grid: Grid | None = None, modes: dict | None = None,
                   q_minus: float | None = None, q_minus_mode=(8, 0)) -> SpectralState:
    """State with prescribed low modes and, optionally, a symmetric high mode of norm ``q_minus``."""
    grid = grid or make_grid()
    c = np.zeros((grid.nmax + 1,) * 2)
    for ij, v in (modes or {}).items():
        a, b = HermiteIndex(*ij).degrees
        c[a, b] = v
    if q_minus:
        a, b = q_minus_mode
        shape = np.zeros_like(c)
        shape[a, b] = shape[b, a] = 1.0
        nrm = math.sqrt(float(np.sum((shape * np.outer(grid.norms, grid.norms)) ** 2)))
        c = c + q_minus * shape / nrm
    return SpectralState.from_coeffs(s, c, grid)


FACES = ("q00", "q20", "q40", "q42", "q60", "q62", "q_minus")


@dataclass(frozen=True)
class FaceRow:
    face: str
    sign: float
    flow: FlowSign

    @property
    def margin(self) -> float:
        """Speed in the expected direction, relative to ``|bound'(s)|``."""
        m = self.flow.margin_rate
        return m if self.flow.expected_outgoing else -m


def boundary_sign_table(params: Params, s: float, grid: Grid | None = None, h: float = 1e-4) -> list[FaceRow]:
    """Flow through each representative face from a symmetric state sitting on it.

    The state carries the face component (and its mirror) at ``+-`` its bound
    and nothing else; the ``q_minus`` face uses a degree-8 mode.
    """
    grid = grid or make_grid()
    b = bounds(s, params.A)
    rows = []
    for face in FACES:
        if face == "q_minus":
            st = boundary_state(s, params, grid, q_minus=b["minus"])
            rows.append(FaceRow(face, 1.0, boundary_flow(st, s, params, h, names=[face])[face]))
            continue
        ij = (int(face[1]), int(face[2]))
        mirror = {v: k for k, v in MIRROR.items()}.get(ij)
        for sign in (1.0, -1.0):
            v = sign * b[_group(face)]
            modes = {ij: v} if mirror is None else {ij: v, mirror: v}
            st = boundary_state(s, params, grid, modes)
            rows.append(FaceRow(face, sign, boundary_flow(st, s, params, h, names=[face])[face]))
    return rows


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    params: Params
    s: list = field(default_factory=list)
    decs: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    states: dict = field(default_factory=dict)
    first_exit: tuple | None = None          # (s, constraint name)
    component_exits: dict = field(default_factory=dict)   # representative -> (s, sign)
    overflow: float | None = None
    final: SpectralState | None = None

    @property
    def s_start(self) -> float:
        return self.s[0]

    @property
    def trapped_window(self) -> float:
        end = self.first_exit[0] if self.first_exit else self.s[-1]
        return end - self.s[0]

    def to_csv(self) -> str:
        return trajectory_csv(self)


def run(params: Params, window: float, grid: Grid | None = None, ds: float = 0.01, flow: Flow = FULL,
        stop_on_exit: bool = False, keep_at: Iterable[float] = (), initial: SpectralState | None = None,
        record: bool = True) -> Trajectory:
    """Integrate from ``s0`` (or ``initial``) over ``window``, tracking V_A."""
    grid = grid or make_grid()
    state = initial if initial is not None else build_initial(params, grid)
    times = time_lattice(state.s, window, ds)
    keep = sorted(float(k) for k in keep_at)
    traj = Trajectory(params)

    def observe(st):
        dec = decompose(st, params)
        rep = va_check(dec, params)
        if record:
            traj.s.append(st.s)
            traj.decs.append(dec)
            traj.reports.append(rep)
        elif not traj.s:
            traj.s.append(st.s)
        for k in keep:
            if abs(st.s - k) < 0.5 * ds and k not in traj.states:
                traj.states[k] = st
        if not rep.inside():
            if traj.first_exit is None:
                traj.first_exit = (st.s, rep.exit_constraint())
            for name, m in rep.margins.items():
                rep_name = canonical(name)
                if m < 0 and rep_name in OUTGOING_NAMES and rep_name not in traj.component_exits:
                    i, j = int(name[1]), int(name[2])
                    traj.component_exits[rep_name] = (st.s, math.copysign(1.0, dec.qij[HermiteIndex(i, j)]))
        return rep

    rep = observe(state)
    for k in range(1, len(times)):
        if stop_on_exit and not rep.inside():
            break
        try:
            state = step(state, times[k - 1], times[k] - times[k - 1], params, flow)
        except IntegrationOverflow as exc:
            traj.overflow = exc.s
            break
        state = SpectralState(float(times[k]), state.field)
        rep = observe(state)
    if not record:
        traj.s.append(state.s)
    traj.final = state
    return traj


# ---------------------------------------------------------------------------
# shooting


@dataclass
class ShootResult:
    best_d: tuple
    window: float
    target: float
    runs: int
    trajectory: Trajectory
    history: list

    @property
    def success(self) -> bool:
        return self.window >= self.target - 1e-9

    @property
    def exit_component(self) -> str | None:
        fe = self.trajectory.first_exit
        return None if fe is None else canonical(fe[1])


def _scaled(name: str, value: float, s: float) -> float:
    return value * math.exp((3.0 if name == "q60" else 2.0) * s)


def _drift_signs(traj: Trajectory) -> dict[str, float]:
    """Sign of the change of each scaled outgoing component over the run."""
    first, last = traj.decs[0], traj.decs[-1]
    out = {}
    for name, idx in zip(OUTGOING_NAMES, OUTGOING):
        drift = _scaled(name, last.qij[idx], last.s) - _scaled(name, first.qij[idx], first.s)
        if drift != 0:
            out[name] = math.copysign(1.0, drift)
    return out


def shoot(params: Params, window: float, search_budget: int = 2000, grid: Grid | None = None,
          ds: float = 0.01, flow: Flow = FULL, box: float = 2.0, tol: float = 1e-13,
          patience: int = 60, refine: int = 0) -> ShootResult:
    """Deterministic per-component bisection over ``d`` in ``[-box, box]^5``.

    Each run integrates over the whole window (past the first exit) and
    records, for every outgoing component, the side through which it first
    left.  Leaving through the top means that component's ``d`` was too large,
    so its bracket's upper end moves down (and vice versa).  All exited
    components are updated after every run; the run with the latest first
    exit is kept.  The search stops when a run stays inside for the whole
    window, when the budget is spent, or after ``patience`` runs without a
    longer window.

    With ``refine > 0`` the search goes on for up to ``refine`` more runs
    after the first trapped one.  Each outgoing component is then steered by
    the sign of its drift over the window, measured on the scaled value
    ``q e^(2s)`` (``q e^(3s)`` for ``q60``), which is what grows away from the
    component's fixed point.  The bisection converges there, so the latest
    trapped run is kept.
    """
    if window > 6:
        raise PreconditionError("window must be <= 6")
    if search_budget < 100:
        raise PreconditionError("search budget must be >= 100")
    grid = grid or make_grid()
    lo = [-box] * 5
    hi = [box] * 5
    d = [0.0] * 5
    best = None
    history = []
    runs = 0
    stale = 0
    trapped_runs = 0
    if window <= 0:
        traj = run(params.with_(d=tuple(d)), 0.0, grid, ds, flow)
        return ShootResult(tuple(d), 0.0, window, 1, traj, [])
    while runs < search_budget:
        p = params.with_(d=tuple(d))
        traj = run(p, window, grid, ds, flow, record=True)
        runs += 1
        history.append((tuple(d), traj.trapped_window, traj.first_exit))
        if traj.first_exit is None and trapped_runs < refine:
            trapped_runs += 1
            best = (tuple(d), traj)
            if trapped_runs >= refine:
                break
            hits = _drift_signs(traj)
        else:
            if best is None or traj.trapped_window > best[1].trapped_window + 1e-12:
                best = (tuple(d), traj)
                stale = 0
            else:
                stale += 1
            if traj.first_exit is None or stale >= patience:
                break
            hits = {c: h[1] for c, h in traj.component_exits.items()}
        moved = False
        for k, comp in enumerate(OUTGOING_NAMES):
            sign = hits.get(comp)
            if sign is None:
                continue
            width = hi[k] - lo[k]
            if width < tol:
                # bracket exhausted but the component still leaves: widen on that side
                if sign > 0:
                    lo[k] -= max(width, tol) * 4
                else:
                    hi[k] += max(width, tol) * 4
            if sign > 0:
                hi[k] = d[k]
            else:
                lo[k] = d[k]
            new = 0.5 * (lo[k] + hi[k])
            moved = moved or new != d[k]
            d[k] = new
        if not moved:
            break
    d_best, traj = best
    return ShootResult(d_best, traj.trapped_window, window, runs, traj, history)


@dataclass(frozen=True)
class ExitRecord:
    A: float
    window: float
    exit_component: str | None
    exit_s: float | None
    best_d: tuple

    @property
    def outgoing(self) -> bool:
        """True when the run stayed inside or left through an outgoing component."""
        return self.exit_component is None or self.exit_component in OUTGOING_NAMES


def exit_analysis(params: Params, A_values: Iterable[float], window: float, search_budget: int = 2000,
                  grid: Grid | None = None, ds: float = 0.01) -> list[ExitRecord]:
    """Shoot at each ``A`` (in the given order) and record which constraint the best run leaves by."""
    grid = grid or make_grid()
    out = []
    for A in A_values:
        res = shoot(params.with_(A=float(A)), window, search_budget, grid, ds)
        fe = res.trajectory.first_exit
        out.append(ExitRecord(float(A), res.window, res.exit_component, None if fe is None else fe[0], res.best_d))
    return out


def linear_exit_component(d, params: Params, window: float = 6.0, grid: Grid | None = None,
                          ds: float = 0.05) -> str | None:
    """First exit under the linear toy flow (``V = B = R = 0``)."""
    traj = run(params.with_(d=tuple(d)), window, grid or make_grid(), ds, LINEAR, stop_on_exit=True)
    return None if traj.first_exit is None else canonical(traj.first_exit[1])


# ---------------------------------------------------------------------------
# flat w-dynamics (shared with the scenario probes)


def evolve_w(w: SpectralField, s_start: float, window: float, params: Params, ds: float = 0.01,
             keep_every: int = 1, guard_radius: float | None = None, reaction_radius: float | None = None,
             reaction_cap: float = 2.0):
    """Integrate ``dw/ds = (L - p/(p-1)) w + |w|^(p-1) w`` (the equation of ``w`` itself).

    Returns ``(times, fields)`` recorded every ``keep_every`` steps.  The
    overflow guard looks at every node, or only at ``max(|y1|, |y2|) <=
    guard_radius`` when given (polynomial perturbations are unbounded).
    With ``reaction_radius`` the power term is switched off at nodes outside
    that box where ``|w| > reaction_cap * kappa``; a polynomial state is
    unbounded there and the true far field of such data blows up at once,
    which would otherwise feed back through the projection.  Bounded states
    (flat data, ``psi``) see the full equation.
    """
    grid = w.grid
    guard = np.ones((grid.order,) * 2, bool) if guard_radius is None else core_mask(grid, guard_radius)
    p = params.p
    times = time_lattice(s_start, window, ds)
    shift = -p / (p - 1.0)

    inner = None if reaction_radius is None else core_mask(grid, reaction_radius)
    cap = reaction_cap * params.kappa

    def rhs(c, t):
        v = grid.reconstruct(c)
        f = np.abs(v) ** (p - 1.0) * v
        if inner is not None:
            f = np.where(inner | (np.abs(v) <= cap), f, 0.0)
        return grid.project(f)

    c = w.with_coeffs().coeffs
    out_t, out_f = [times[0]], [w.with_samples()]
    for k in range(1, len(times)):
        c = strang_step(c, times[k - 1], times[k] - times[k - 1], grid, rhs, shift)
        if not np.all(np.isfinite(c)):
            raise IntegrationOverflow(times[k], float("inf"))
        if k % keep_every == 0 or k == len(times) - 1:
            f = SpectralField(grid, c, grid.reconstruct(c), w.symmetric)
            sup = float(np.max(np.abs(f.samples[guard])))
            if sup > OVERFLOW_FACTOR * params.kappa:
                raise IntegrationOverflow(times[k], sup)
            out_t.append(float(times[k]))
            out_f.append(f)
    return out_t, out_f


def psi_state(sigma: float, s: float, params: Params, grid: Grid) -> SpectralState:
    """``q = psi(sigma) - phi(., s)``: the flat solution written as a perturbation."""
    y1, y2 = grid.mesh
    phi = profile_samples(params, grid, s).phi
    return SpectralState.from_samples(s, eval_psi(sigma, params) - phi, grid)


CORE_RADIUS = 10.0


def core_mask(grid: Grid, radius: float = CORE_RADIUS) -> np.ndarray:
    """Nodes with ``max(|y1|, |y2|) <= radius``.

    The outermost Gauss nodes (up to ``|y| ~ 18`` at order 48) carry the
    truncation error of any non-polynomial field already at the initial time.
    """
    y1, y2 = grid.mesh
    return np.maximum(np.abs(y1), np.abs(y2)) <= radius


@dataclass(frozen=True)
class TrackingReport:
    times: tuple
    core_errors: tuple
    node_errors: tuple
    l2_errors: tuple

    @property
    def sup_core(self) -> float:
        return max(self.core_errors)

    @property
    def sup_nodes(self) -> float:
        return max(self.node_errors)


def psi_tracking(params: Params, window: float = 3.0, grid: Grid | None = None, ds: float = 0.01,
                 radius: float = CORE_RADIUS) -> TrackingReport:
    """Evolve ``q = psi(s0) - phi`` with the full flow and compare ``q + phi`` with ``psi(s)``."""
    grid = grid or make_grid()
    mask = core_mask(grid, radius)
    state = psi_state(params.s0, params.s0, params, grid)
    times = time_lattice(params.s0, window, ds)
    core, nodes, l2 = [], [], []
    for k in range(len(times)):
        if k:
            state = step(state, times[k - 1], times[k] - times[k - 1], params)
            state = SpectralState(float(times[k]), state.field)
        err = state.samples + profile_samples(params, grid, state.s).phi - eval_psi(state.s, params)
        core.append(float(np.max(np.abs(err[mask]))))
        nodes.append(float(np.max(np.abs(err))))
        l2.append(grid.norm(err))
    return TrackingReport(tuple(float(t) for t in times), tuple(core), tuple(nodes), tuple(l2))


def integrator_order(params: Params, window: float = 1.0, ds: float = 0.04, grid: Grid | None = None) -> float:
    """``log2`` of the error ratio at ``ds`` and ``ds/2`` against a ``ds/4`` reference (flat-psi run)."""
    grid = grid or make_grid()

    def final(h):
        st = psi_state(params.s0, params.s0, params, grid)
        times = time_lattice(params.s0, window, h)
        for k in range(1, len(times)):
            st = step(st, times[k - 1], times[k] - times[k - 1], params)
        return st.coeffs

    ref = final(ds / 4)
    e1 = np.sqrt(np.sum(((final(ds) - ref) * np.outer(grid.norms, grid.norms)) ** 2))
    e2 = np.sqrt(np.sum(((final(ds / 2) - ref) * np.outer(grid.norms, grid.norms)) ** 2))
    return math.log2(e1 / e2)


# ---------------------------------------------------------------------------
# recentering


def hull_radius(grid: Grid) -> float:
    return float(np.max(np.abs(grid.x)))


def recenter(state_w: SpectralField | None, a, s: float, y1, y2, params: Params | None = None,
             closed_form: bool = False):
    """Samples of ``w_a(y, s) = w_0(y + a e^(s/2), s)`` at the points ``(y1, y2)``.

    With ``closed_form`` (only at ``s = s0``) the initial data are evaluated
    directly; otherwise the Hermite expansion of ``state_w`` is evaluated at
    the shifted points, which must stay inside the node hull.
    """
    shift = np.asarray(a, float) * math.exp(s / 2.0)
    y1, y2 = np.asarray(y1, float), np.asarray(y2, float)
    z1, z2 = y1 + shift[0], y2 + shift[1]
    if closed_form:
        if params is None or abs(s - params.s0) > 1e-12:
            raise PreconditionError("closed-form recentering is only available at s = s0")
        return eval_w0_init(z1, z2, params)
    if state_w is None:
        raise PreconditionError("need samples of w or closed_form=True")
    grid = state_w.grid
    hull = hull_radius(grid)
    if np.max(np.abs(z1)) > hull or np.max(np.abs(z2)) > hull:
        raise OutOfHull(f"shifted points reach {max(np.max(np.abs(z1)), np.max(np.abs(z2))):.3g} > hull {hull:.3g}")
    from .basis import _normalized_table

    c = state_w.with_coeffs().coeffs * np.outer(grid.norms, grid.norms)
    t1 = _normalized_table(z1.ravel(), grid.nmax)
    t2 = _normalized_table(z2.ravel(), grid.nmax)
    vals = np.einsum("ka,ab,kb->k", t1, c, t2)
    return vals.reshape(np.broadcast(z1, z2).shape)


def flatness_defect(a, params: Params, grid: Grid | None = None) -> float:
    """``||w_a(., s0) - w_0(a e^(s0/2), s0)||_{L^2_rho}`` by direct evaluation."""
    grid = grid or make_grid()
    y1, y2 = grid.mesh
    wa = recenter(None, a, params.s0, y1, y2, params, closed_form=True)
    shift = np.asarray(a, float) * math.exp(params.s0 / 2.0)
    centre = float(eval_w0_init(shift[0], shift[1], params))
    return grid.norm(wa - centre)


# ---------------------------------------------------------------------------
# expansion of w_a for large a


def iota(K: float, L: float, params: Params) -> float:
    s0 = params.s0
    return math.exp(-s0) * K * K * L * L + params.delta * math.exp(-2 * s0) * (K**6 + L**6)


@dataclass(frozen=True)
class ModeRow:
    mode: HermiteIndex
    projected: float
    predicted: float

    @property
    def residual(self) -> float:
        return self.projected - self.predicted


@dataclass(frozen=True)
class ExpansionTable:
    K: float
    L: float
    iota: float
    scale: float          # iota/A + iota^2
    rows: tuple

    def row(self, idx) -> ModeRow:
        idx = HermiteIndex(*idx)
        return next(r for r in self.rows if r.mode == idx)

    def worst_ratio(self) -> float:
        return max(abs(r.residual) for r in self.rows) / self.scale


def wa_expansion_check(K: float, L: float, params: Params, m: float = 0.05,
                       grid: Grid | None = None) -> ExpansionTable:
    """Project ``w_a(., s0)`` for ``a = (K, L) e^(-s0/2)`` onto the modes ``i <= 2``.

    Predictions: ``kappa - iota`` on ``h0h0``; ``-2 K L^2 e^(-s0)`` on
    ``h1h0``, ``-2 K^2 L e^(-s0)`` on ``h0h1``, ``-L^2 e^(-s0)`` on ``h2h0``,
    ``-K^2 e^(-s0)`` on ``h0h2``, ``-4 K L e^(-s0)`` on ``h1h1``.
    """
    if not (0 <= K <= L and K + L >= params.A):
        raise PreconditionError("need 0 <= K <= L and K + L >= A")
    io = iota(K, L, params)
    if not io <= m * params.kappa / (params.p - 1.0):
        raise PreconditionError(f"a = (K, L) e^(-s0/2) is not in the inner region (iota = {io:.3g})")
    grid = grid or make_grid()
    y1, y2 = grid.mesh
    wa = eval_w0_init(y1 + K, y2 + L, params)
    c = grid.project(wa)
    e = math.exp(-params.s0)
    pred = {(0, 0): params.kappa - io, (1, 0): -2 * K * L * L * e, (0, 1): -2 * K * K * L * e,
            (2, 0): -L * L * e, (1, 1): -4 * K * L * e, (0, 2): -K * K * e}
    rows = tuple(ModeRow(HermiteIndex.from_degrees(a, b), float(c[a, b]), v) for (a, b), v in pred.items())
    return ExpansionTable(K, L, io, io / params.A + io * io, rows)


def nonlinear_exponent(params: Params, q_fields: Iterable[np.ndarray], s: float, grid: Grid) -> float:
    """Least-squares slope of ``log sup|B|`` against ``log sup|q|`` over the given samples.

    ``|B| <= C |q|^pbar`` with ``pbar = min(p, 2)``; a slope below
    ``pbar`` signals a defect in the nonlinear kernel.
    """
    phi = profile_samples(params, grid, s).phi
    xs, ys = [], []
    for q in q_fields:
        b = kernels.nonlinear_b(phi, q, params.p)
        xs.append(math.log(float(np.max(np.abs(q)))))
        ys.append(math.log(float(np.max(np.abs(b)))))
    return float(np.polyfit(xs, ys, 1)[0])


# ---------------------------------------------------------------------------
# logs


def fmt(x) -> str:
    return format(float(x), ".17g")


LOG_MODES = tuple(HermiteIndex(i, j) for i in range(0, 8) for j in range(i + 1) if i % 2 == 0 and j % 2 == 0)


def trajectory_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["s"] + [f"q_{i}_{j}" for i, j in LOG_MODES] + ["q_minus", "sup_w"] + [f"margin_{n}" for n in CONSTRAINTS]
    w.writerow(header)
    for s, dec, rep in zip(traj.s, traj.decs, traj.reports):
        row = [fmt(s)] + [fmt(dec.qij[m]) for m in LOG_MODES] + [fmt(dec.q_minus_norm), fmt(dec.sup_w)]
        row += [fmt(rep.margins[n]) for n in CONSTRAINTS]
        w.writerow(row)
    return buf.getvalue()


def manifest(params: Params, **extra) -> str:
    out = {"params": params.as_dict(), "d_labels": list(D_LABELS), "kernel_backend": kernels.BACKEND}
    out.update(extra)
    return json.dumps(out, indent=2, sort_keys=True, default=str)
