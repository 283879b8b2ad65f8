"""Rescaled Hermite polynomials and Gaussian-weighted quadrature.

The weight is ``rho(y) = exp(-|y|^2/4) / (4 pi)`` on R^2, the product of two
1-D marginals ``rho1(xi) = exp(-xi^2/4) / sqrt(4 pi)``.  The rescaled Hermite
polynomials

    h_n(xi) = sum_{i <= n/2} n! / (i! (n-2i)!) (-1)^i xi^(n-2i)

are orthogonal for ``rho1`` with ``||h_n||^2 = 2^n n!``, and the products
``h_a(y1) h_b(y2)`` are the eigenfunctions of ``L = Delta - y.grad/2 + 1``
with eigenvalue ``1 - (a+b)/2``.

Two-dimensional indices follow the (total degree, second slot) convention:
``HermiteIndex(i, j)`` names ``h_{i-j}(y1) h_j(y2)``.  Coefficient arrays
``c[a, b]`` are indexed by the two slot degrees directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import factorial
from typing import NamedTuple

import numpy as np
from numpy.polynomial import hermite_e

from .errors import PreconditionError

MAX_QUAD_ORDER = 256
EXACT_EVAL_MAX = 20


class HermiteIndex(NamedTuple):
    """Index ``(i, j)``: total degree ``i`` and degree ``j`` in ``y2``."""

    i: int
    j: int

    @property
    def degrees(self) -> tuple[int, int]:
        return (self.i - self.j, self.j)

    @property
    def eigenvalue(self) -> float:
        return eigenvalue(self.i - self.j, self.j)

    @classmethod
    def from_degrees(cls, a: int, b: int) -> "HermiteIndex":
        return cls(a + b, b)


def eigenvalue(a: int, b: int = 0) -> float:
    """Eigenvalue of ``L`` on ``h_a(y1) h_b(y2)``."""
    if a < 0 or b < 0:
        raise PreconditionError("Hermite degrees must be nonnegative")
    return 1.0 - (a + b) / 2.0


@lru_cache(maxsize=None)
def hermite_coeffs(n: int) -> tuple[int, ...]:
    """Monomial coefficients of ``h_n``, lowest degree first (exact integers)."""
    if n < 0:
        raise PreconditionError("degree must be nonnegative")
    c = [0] * (n + 1)
    for i in range(n // 2 + 1):
        c[n - 2 * i] = (-1) ** i * factorial(n) // (factorial(i) * factorial(n - 2 * i))
    return tuple(c)


def hermite_norm_sq(n: int) -> int:
    """``||h_n||^2`` in L^2 of the 1-D marginal weight, i.e. ``2^n n!``."""
    if n < 0:
        raise PreconditionError("degree must be nonnegative")
    return 2**n * factorial(n)


def hermite_eval_recurrence(n: int, xi):
    """Evaluate ``h_n`` by ``h_{k+1} = xi h_k - 2k h_{k-1}``."""
    xi = np.asarray(xi, dtype=float)
    h_prev = np.ones_like(xi)
    if n == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = xi.copy()
    for k in range(1, n):
        h_prev, h = h, xi * h - 2.0 * k * h_prev
    return h if h.ndim else float(h)


def hermite_eval(n: int, xi):
    """Evaluate ``h_n(xi)``; exact-coefficient Horner for ``n <= 20``."""
    if n < 0:
        raise PreconditionError("degree must be nonnegative")
    if n > EXACT_EVAL_MAX:
        return hermite_eval_recurrence(n, xi)
    xi = np.asarray(xi, dtype=float)
    out = np.zeros_like(xi)
    for c in reversed(hermite_coeffs(n)):
        out = out * xi + c
    return out if out.ndim else float(out)


@lru_cache(maxsize=None)
def monomial_in_hermite(n: int) -> tuple[tuple[int, int], ...]:
    """``xi^n = sum_k n!/(k!(n-2k)!) h_{n-2k}(xi)`` as ``((degree, coeff), ...)``."""
    return tuple(
        (n - 2 * k, factorial(n) // (factorial(k) * factorial(n - 2 * k)))
        for k in range(n // 2 + 1)
    )


def poly_to_hermite(coeffs) -> dict[int, Fraction]:
    """Change of basis from monomial coefficients (lowest first) to ``h_k``."""
    out: dict[int, Fraction] = {}
    for n, c in enumerate(coeffs):
        if c == 0:
            continue
        for k, m in monomial_in_hermite(n):
            out[k] = out.get(k, 0) + Fraction(c) * m
    return {k: v for k, v in out.items() if v != 0}


def _polymul_exact(a, b):
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] += x * y
    return out


def product_in_basis(m: int, n: int) -> dict[int, Fraction]:
    """Exact coefficients ``c_k`` with ``h_m h_n = sum_k c_k h_k``."""
    if m < 0 or n < 0:
        raise PreconditionError("degrees must be nonnegative")
    if max(m, n) > 4 * EXACT_EVAL_MAX:
        raise PreconditionError(f"degree above the exact-arithmetic cap {4 * EXACT_EVAL_MAX}")
    return poly_to_hermite(_polymul_exact(hermite_coeffs(m), hermite_coeffs(n)))


@dataclass(frozen=True)
class QuadRule:
    """Gauss rule for ``rho1``: ``sum w f(x) ~ int f rho1``; exact to degree ``2 order - 1``."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@lru_cache(maxsize=32)
def make_quad(order: int) -> QuadRule:
    """Gauss quadrature for ``exp(-xi^2/4)/sqrt(4 pi)``.

    Probabilists' Gauss-Hermite abscissae (weight ``exp(-x^2/2)``) are scaled
    by ``sqrt(2)``; weights are renormalized to sum to one.
    """
    if order < 1:
        raise PreconditionError("quadrature order must be >= 1")
    if order > MAX_QUAD_ORDER:
        raise PreconditionError(f"quadrature order {order} above cap {MAX_QUAD_ORDER}")
    x, w = hermite_e.hermegauss(order)
    nodes = np.sqrt(2.0) * x
    weights = w / w.sum()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadRule(nodes=nodes, weights=weights, order=order)


def _normalized_table(x: np.ndarray, nmax: int) -> np.ndarray:
    """``T[k, a] = h_a(x_k) / sqrt(2^a a!)`` by the stable normalized recurrence."""
    table = np.empty((x.size, nmax + 1))
    table[:, 0] = 1.0
    if nmax >= 1:
        table[:, 1] = x / np.sqrt(2.0)
    for a in range(1, nmax):
        table[:, a + 1] = (x * table[:, a] - np.sqrt(2.0 * a) * table[:, a - 1]) / np.sqrt(
            2.0 * (a + 1)
        )
    return table


@dataclass(frozen=True)
class Grid:
    """Tensor quadrature grid with a total-degree-``nmax`` Hermite truncation.

    Coefficient arrays have shape ``(nmax+1, nmax+1)``; entries with
    ``a + b > nmax`` are kept at zero.  Samples have shape ``(order, order)``
    with ``samples[k, l] = f(x_k, x_l)``.
    """

    quad: QuadRule
    nmax: int
    table: np.ndarray = field(repr=False)
    norms: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)

    @property
    def order(self) -> int:
        return self.quad.order

    @property
    def x(self) -> np.ndarray:
        return self.quad.nodes

    @property
    def w(self) -> np.ndarray:
        return self.quad.weights

    @property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.quad.nodes, self.quad.nodes, indexing="ij")

    @property
    def weights2d(self) -> np.ndarray:
        return np.outer(self.quad.weights, self.quad.weights)

    @property
    def eigenvalues(self) -> np.ndarray:
        a = np.arange(self.nmax + 1)
        return 1.0 - (a[:, None] + a[None, :]) / 2.0

    def project(self, samples: np.ndarray) -> np.ndarray:
        """Coefficients of ``h_a(y1) h_b(y2)``, truncated to ``a + b <= nmax``."""
        wt = self.quad.weights[:, None] * self.table
        chat = wt.T @ samples @ wt
        return np.where(self.mask, chat / np.outer(self.norms, self.norms), 0.0)

    def reconstruct(self, coeffs: np.ndarray) -> np.ndarray:
        chat = coeffs * np.outer(self.norms, self.norms)
        return self.table @ chat @ self.table.T

    def integrate(self, samples: np.ndarray) -> float:
        w = self.quad.weights
        return float(w @ samples @ w)

    def norm(self, samples: np.ndarray, r: float = 2.0) -> float:
        """``L^r_rho`` norm by quadrature."""
        return self.integrate(np.abs(samples) ** r) ** (1.0 / r)

    def coeff_norm(self, coeffs: np.ndarray) -> float:
        """``L^2_rho`` norm of a truncated expansion (Parseval)."""
        chat = coeffs * np.outer(self.norms, self.norms)
        return float(np.sqrt(np.sum(chat**2)))


@lru_cache(maxsize=16)
def make_grid(order: int = 48, nmax: int = 16) -> Grid:
    """Tensorized ``make_quad(order)`` grid carrying degrees ``a + b <= nmax``."""
    if nmax < 0:
        raise PreconditionError("nmax must be nonnegative")
    if nmax > 2 * order - 1:
        raise PreconditionError("nmax exceeds the exactness of the quadrature")
    quad = make_quad(order)
    table = _normalized_table(quad.nodes, nmax)
    norms = np.sqrt([float(hermite_norm_sq(a)) for a in range(nmax + 1)])
    a = np.arange(nmax + 1)
    mask = (a[:, None] + a[None, :]) <= nmax
    for arr in (table, norms, mask):
        arr.setflags(write=False)
    return Grid(quad=quad, nmax=nmax, table=table, norms=norms, mask=mask)


def project(samples: np.ndarray, idx: HermiteIndex, grid: Grid) -> float:
    """``v_{i,j} = int v k_{i-j}(y1) k_j(y2) rho`` with ``k_n = h_n/||h_n||^2``."""
    i, j = idx
    if j < 0 or j > i:
        raise PreconditionError(f"invalid index {idx}: need 0 <= j <= i")
    a, b = i - j, j
    if max(a, b) > 2 * grid.order - 1 or i > grid.nmax:
        raise PreconditionError(f"index {idx} out of range for order {grid.order}, nmax {grid.nmax}")
    wt = grid.quad.weights
    row = wt * grid.table[:, a]
    col = wt * grid.table[:, b]
    return float(row @ samples @ col) / (grid.norms[a] * grid.norms[b])


def hermite_product_samples(a: int, b: int, grid: Grid) -> np.ndarray:
    """Samples of ``h_a(y1) h_b(y2)`` on ``grid``."""
    return np.outer(hermite_eval(a, grid.x), hermite_eval(b, grid.x))
