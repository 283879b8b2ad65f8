"""Pure numpy implementations of the hot kernels.

These are the reference versions; ``_kernels.pyx`` mirrors them loop by loop.
"""
from __future__ import annotations

import numpy as np

# below this |q/phi| the nonlinear term is summed as a binomial series
TAYLOR_CUTOFF = 1e-2
TAYLOR_TERMS = 9


def mehler_matrix(y, x, w, s: float) -> np.ndarray:
    """One-dimensional Mehler quadrature matrix.

    ``M[i, k] = w[k] K(y[i], x[k]) / rho1(x[k])`` with ``K`` the Gaussian of
    mean ``y e^(-s/2)`` and variance ``2 (1 - e^(-s))``, so that
    ``sum_k M[i, k] f(x[k]) ~ int K(y[i], x) f(x) dx``.  The ``e^s`` prefactor
    of the semigroup is left to the caller.
    """
    y = np.asarray(y, float)
    x = np.asarray(x, float)
    w = np.asarray(w, float)
    om = -np.expm1(-s)
    shift = y[:, None] * np.exp(-0.5 * s) - x[None, :]
    expo = 0.25 * x[None, :] ** 2 - shift**2 / (4.0 * om)
    return w[None, :] * np.exp(expo) / np.sqrt(om)


def _binom_coeffs(p: float, n: int) -> np.ndarray:
    c = np.empty(n + 1)
    c[0] = 1.0
    for k in range(1, n + 1):
        c[k] = c[k - 1] * (p - k + 1) / k
    return c


def nonlinear_b(phi, q, p: float) -> np.ndarray:
    """``|phi+q|^(p-1) (phi+q) - phi^p - p phi^(p-1) q`` for ``phi > 0``."""
    phi = np.asarray(phi, float)
    q = np.asarray(q, float)
    r = q / phi
    small = np.abs(r) < TAYLOR_CUTOFF
    c = _binom_coeffs(p, TAYLOR_TERMS)
    series = np.zeros_like(r)
    for k in range(TAYLOR_TERMS, 1, -1):
        series = (series + c[k]) * r
    series *= r
    w = phi + q
    direct = np.abs(w) ** (p - 1.0) * w / phi**p - 1.0 - p * r
    return phi**p * np.where(small, series, direct)


def reaction(phi, q, V, R, p: float) -> np.ndarray:
    """``V q + B(phi, q) + R`` pointwise."""
    return np.asarray(V) * q + nonlinear_b(phi, q, p) + np.asarray(R)
