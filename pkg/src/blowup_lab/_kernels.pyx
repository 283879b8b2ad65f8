# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``."""
import numpy as np

from libc.math cimport exp, expm1, fabs, pow, sqrt

DEF TAYLOR_TERMS = 9
TAYLOR_CUTOFF = 1e-2


def mehler_matrix(y, x, w, double s):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64).ravel()
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64).ravel()
    cdef Py_ssize_t n = yv.shape[0], m = xv.shape[0], i, k
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    cdef double om = -expm1(-s)
    cdef double decay = exp(-0.5 * s)
    cdef double inv4om = 1.0 / (4.0 * om)
    cdef double norm = 1.0 / sqrt(om)
    cdef double sh, xk
    for i in range(n):
        for k in range(m):
            xk = xv[k]
            sh = yv[i] * decay - xk
            o[i, k] = wv[k] * exp(0.25 * xk * xk - sh * sh * inv4om) * norm
    return out


cdef inline double _b_point(double phi, double q, double p, double* c) nogil:
    # phi^p (|t|^(p-1) t - 1 - p r) with t = 1 + r; one pow for phi^p, one for |t|^(p-1)
    cdef double r = q / phi
    cdef double t, acc
    cdef int k
    if fabs(r) < 1e-2:
        acc = 0.0
        for k in range(TAYLOR_TERMS, 1, -1):
            acc = (acc + c[k]) * r
        return (phi * phi if p == 2.0 else pow(phi, p)) * acc * r
    t = 1.0 + r
    if p == 2.0:
        return phi * phi * (fabs(t) * t - 1.0 - 2.0 * r)
    return pow(phi, p) * (pow(fabs(t), p - 1.0) * t - 1.0 - p * r)


cdef void _coeffs(double p, double* c) nogil:
    cdef int k
    c[0] = 1.0
    for k in range(1, TAYLOR_TERMS + 1):
        c[k] = c[k - 1] * (p - k + 1) / k


def nonlinear_b(phi, q, double p):
    a_phi = np.ascontiguousarray(phi, dtype=np.float64)
    shape = np.broadcast_shapes(a_phi.shape, np.shape(q))
    cdef const double[::1] f = np.ascontiguousarray(np.broadcast_to(a_phi, shape)).ravel()
    cdef const double[::1] g = np.ascontiguousarray(np.broadcast_to(np.asarray(q, float), shape)).ravel()
    out = np.empty(f.shape[0])
    cdef double[::1] o = out
    cdef double c[TAYLOR_TERMS + 1]
    cdef Py_ssize_t i
    _coeffs(p, c)
    for i in range(f.shape[0]):
        o[i] = _b_point(f[i], g[i], p, c)
    return out.reshape(shape)


def reaction(phi, q, V, R, double p):
    shape = np.broadcast_shapes(np.shape(phi), np.shape(q), np.shape(V), np.shape(R))
    cdef const double[::1] f = np.ascontiguousarray(np.broadcast_to(np.asarray(phi, float), shape)).ravel()
    cdef const double[::1] g = np.ascontiguousarray(np.broadcast_to(np.asarray(q, float), shape)).ravel()
    cdef const double[::1] v = np.ascontiguousarray(np.broadcast_to(np.asarray(V, float), shape)).ravel()
    cdef const double[::1] rr = np.ascontiguousarray(np.broadcast_to(np.asarray(R, float), shape)).ravel()
    out = np.empty(f.shape[0])
    cdef double[::1] o = out
    cdef double c[TAYLOR_TERMS + 1]
    cdef Py_ssize_t i
    _coeffs(p, c)
    for i in range(f.shape[0]):
        o[i] = v[i] * g[i] + _b_point(f[i], g[i], p, c) + rr[i]
    return out.reshape(shape)
