# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; semantics and arithmetic order match ``_numpy`` exactly.

Keep every floating-point expression in the same order as the numpy
fallback (and build with -ffp-contract=off) so both backends return
bit-identical arrays.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def heston_paths(x0, y0, db, dw, double dt, double kappa, double m,
                 double gamma, double mu):
    """Full-truncation Euler for the variance/log-price pair (see _numpy)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] db_arr = np.ascontiguousarray(db, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dw_arr = np.ascontiguousarray(dw, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x0_arr = np.ascontiguousarray(x0, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y0_arr = np.ascontiguousarray(y0, dtype=np.float64)
    cdef Py_ssize_t steps = db_arr.shape[0]
    cdef Py_ssize_t n = db_arr.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.empty((steps + 1, n))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.empty((steps + 1, n))
    cdef Py_ssize_t k, i
    cdef double xk, xp, vol

    for i in range(n):
        x[0, i] = x0_arr[i]
        y[0, i] = y0_arr[i]
    for k in range(steps):
        for i in range(n):
            xk = x[k, i]
            xp = xk if xk > 0.0 else 0.0
            vol = sqrt(xp)
            x[k + 1, i] = xk + kappa * (m - xp) * dt + gamma * vol * db_arr[k, i]
            y[k + 1, i] = y[k, i] + (mu - 0.5 * xp) * dt + vol * dw_arr[k, i]
    return x, y


def fd_substep(p, a_nodes, b_nodes, double dt, double cell):
    """Conservative forward-Kolmogorov step, zero-flux boundaries (see _numpy)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p_arr = np.ascontiguousarray(p, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a_arr = np.ascontiguousarray(a_nodes, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] b_arr = np.ascontiguousarray(b_nodes, dtype=np.float64)
    cdef Py_ssize_t g = p_arr.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flux = np.empty(g - 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(g)
    cdef double denom = 2.0 * cell
    cdef double coef = dt / cell
    cdef Py_ssize_t i
    cdef double ap_i, ap_ip, bp_i, bp_ip

    for i in range(g - 1):
        ap_i = a_arr[i] * p_arr[i]
        ap_ip = a_arr[i + 1] * p_arr[i + 1]
        bp_i = b_arr[i] * p_arr[i]
        bp_ip = b_arr[i + 1] * p_arr[i + 1]
        flux[i] = 0.5 * (ap_i + ap_ip) - (bp_ip - bp_i) / denom
    out[0] = p_arr[0] - coef * flux[0]
    for i in range(1, g - 1):
        out[i] = p_arr[i] - coef * (flux[i] - flux[i - 1])
    out[g - 1] = p_arr[g - 1] - coef * (0.0 - flux[g - 2])
    return out


def resample_indices(cum_weights, double u0, Py_ssize_t n_out):
    """Systematic-resampling ancestor indices (see _numpy)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cw = np.ascontiguousarray(cum_weights, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.empty(n_out, dtype=np.int64)
    cdef Py_ssize_t n_in = cw.shape[0]
    cdef Py_ssize_t i
    cdef Py_ssize_t j = 0
    cdef double u

    for i in range(n_out):
        u = (i + u0) / n_out
        while j < n_in - 1 and cw[j] < u:
            j += 1
        idx[i] = j
    return idx
