"""Exact Polya-Gamma PG(1, c) sampling by the alternating-series method.

A PG(1, c) variate is J*(1, c/2) / 4, where J* is sampled by rejection from
a two-piece proposal: a truncated inverse-Gaussian body on (0, t] and an
exponential tail on (t, inf), with t = 0.64. The accept test evaluates the
alternating series of piecewise coefficients until the partial sums bracket
the decision, so no approximation enters anywhere.

Everything is vectorized over pending-element masks; a scalar draw is a
batch of one.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr

__all__ = ["pg_draw", "pg_draw_batch"]

TRUNC = 0.64
_LOG_4_OVER_PI = np.log(4.0 / np.pi)


def _series_coef(n, x):
    """n-th alternating-series coefficient a_n(x), piecewise in x."""
    nph = n + 0.5
    out = np.empty_like(x)
    small = x <= TRUNC
    xs = x[small]
    out[small] = (
        np.pi * nph * (2.0 / (np.pi * xs)) ** 1.5 * np.exp(-2.0 * nph * nph / xs)
    )
    xl = x[~small]
    out[~small] = np.pi * nph * np.exp(-0.5 * nph * nph * np.pi * np.pi * xl)
    return out


def _right_tail_prob(z, fz):
    """P(exponential tail) for the two-piece proposal, stable for large z."""
    rt = np.sqrt(1.0 / TRUNC)
    x0 = np.log(fz) + fz * TRUNC
    log_b = x0 - z + log_ndtr(rt * (TRUNC * z - 1.0))
    log_a = x0 + z + log_ndtr(-rt * (TRUNC * z + 1.0))
    log_q_over_p = _LOG_4_OVER_PI + np.logaddexp(log_b, log_a)
    return np.exp(-np.logaddexp(0.0, log_q_over_p))


def _truncated_inverse_gaussian(z, rng):
    """Draws from IG(1/z, 1) restricted to (0, TRUNC], elementwise in z."""
    out = np.empty(z.shape)

    # small z: sample the z=0 limit via transformed exponentials, then tilt
    idx = np.flatnonzero(z < 1.0 / TRUNC)
    za = z[idx]
    pending = np.arange(idx.size)
    while pending.size:
        e1 = rng.standard_exponential(pending.size)
        e2 = rng.standard_exponential(pending.size)
        ok = e1 * e1 <= 2.0 * e2 / TRUNC
        x = TRUNC / (1.0 + TRUNC * e1) ** 2
        zi = za[pending]
        keep = ok & (rng.random(pending.size) <= np.exp(-0.5 * zi * zi * x))
        out[idx[pending[keep]]] = x[keep]
        pending = pending[~keep]

    # larger z: plain inverse-Gaussian draws until one lands inside (0, t]
    idx = np.flatnonzero(z >= 1.0 / TRUNC)
    mu = 1.0 / z[idx]
    pending = np.arange(idx.size)
    while pending.size:
        m = mu[pending]
        y = rng.standard_normal(pending.size) ** 2
        my = m * y
        x = m * (1.0 + 0.5 * my - 0.5 * np.sqrt(4.0 * my + my * my))
        flip = rng.random(pending.size) > m / (m + x)
        x[flip] = m[flip] * m[flip] / x[flip]
        keep = x <= TRUNC
        out[idx[pending[keep]]] = x[keep]
        pending = pending[~keep]
    return out


def _series_accept(x, rng):
    """Alternating-series accept test; True where the proposal is kept.

    Odd partial sums are lower bounds and even ones upper bounds, so each
    comparison is exact despite the infinite series.
    """
    s = _series_coef(0, x)
    y = rng.random(x.size) * s
    accept = np.zeros(x.size, dtype=bool)
    open_idx = np.arange(x.size)
    n = 0
    while open_idx.size:
        n += 1
        term = _series_coef(n, x[open_idx])
        if n % 2 == 1:
            s[open_idx] -= term
            done = y[open_idx] <= s[open_idx]
            accept[open_idx[done]] = True
        else:
            s[open_idx] += term
            done = y[open_idx] > s[open_idx]
        open_idx = open_idx[~done]
    return accept


def pg_draw_batch(c, rng):
    """One PG(1, |c_i|) draw per element of c."""
    c = np.asarray(c, dtype=float)
    z = 0.5 * np.abs(c.ravel())
    fz = 0.125 * np.pi * np.pi + 0.5 * z * z
    p_right = _right_tail_prob(z, fz)
    out = np.empty(z.size)
    pending = np.arange(z.size)
    while pending.size:
        zi, fzi = z[pending], fz[pending]
        x = np.empty(pending.size)
        tail = rng.random(pending.size) < p_right[pending]
        x[tail] = TRUNC + rng.standard_exponential(int(tail.sum())) / fzi[tail]
        x[~tail] = _truncated_inverse_gaussian(zi[~tail], rng)
        keep = _series_accept(x, rng)
        out[pending[keep]] = 0.25 * x[keep]
        pending = pending[~keep]
    return out.reshape(c.shape)


def pg_draw(c, rng):
    """One PG(1, |c|) draw."""
    return float(pg_draw_batch(np.array([c]), rng)[0])
