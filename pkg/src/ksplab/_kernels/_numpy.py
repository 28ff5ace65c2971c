"""Pure-numpy implementations of the hot kernels.

These are the reference semantics; the Cython module ``_core`` mirrors
them operation-for-operation (same arithmetic order, no FMA contraction)
so both backends produce bit-identical results.
"""

import numpy as np


def heston_paths(x0, y0, db, dw, dt, kappa, m, gamma, mu):
    """Full-truncation Euler for the variance/log-price pair.

    x0, y0: (n,) initial variance and log price; db, dw: (steps, n) Wiener
    increments (already scaled by sqrt(dt)).  Returns (X, Y) each of shape
    (steps+1, n).  The truncated variance max(x, 0) enters the drift, the
    volatility sqrt, and the log-price drift.
    """
    db = np.asarray(db, dtype=float)
    dw = np.asarray(dw, dtype=float)
    steps, n = db.shape
    x = np.empty((steps + 1, n))
    y = np.empty((steps + 1, n))
    x[0] = x0
    y[0] = y0
    for k in range(steps):
        xp = np.maximum(x[k], 0.0)
        vol = np.sqrt(xp)
        x[k + 1] = x[k] + kappa * (m - xp) * dt + gamma * vol * db[k]
        y[k + 1] = y[k] + (mu - 0.5 * xp) * dt + vol * dw[k]
    return x, y


def fd_substep(p, a_nodes, b_nodes, dt, cell):
    """One conservative forward-Kolmogorov step with zero-flux boundaries.

    Face fluxes J_{i+1/2} = (ap_i + ap_{i+1})/2 - (bp_{i+1} - bp_i)/(2 cell)
    discretize a p - (1/2) d(b p)/dx; the divergence update conserves the
    plain sum of p exactly.
    """
    p = np.asarray(p, dtype=float)
    ap = a_nodes * p
    bp = b_nodes * p
    denom = 2.0 * cell
    flux = 0.5 * (ap[:-1] + ap[1:]) - (bp[1:] - bp[:-1]) / denom
    coef = dt / cell
    out = np.empty_like(p)
    out[0] = p[0] - coef * flux[0]
    out[1:-1] = p[1:-1] - coef * (flux[1:] - flux[:-1])
    out[-1] = p[-1] - coef * (0.0 - flux[-1])
    return out


def resample_indices(cum_weights, u0, n_out):
    """Systematic-resampling ancestor indices.

    cum_weights: nondecreasing cumulative weights with last entry 1;
    u0: single uniform offset in [0, 1).  Index i gets the first atom j
    with cum_weights[j] >= (i + u0)/n_out.
    """
    cw = np.asarray(cum_weights, dtype=float)
    u = (np.arange(n_out) + u0) / n_out
    return np.searchsorted(cw, u, side="left").astype(np.int64)
