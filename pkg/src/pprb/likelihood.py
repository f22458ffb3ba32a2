"""Intensity evaluation, midpoint quadrature, and point-process likelihoods.

The integrated intensity factorizes as exp(beta0) * Q(beta) with Q the
intercept-free quadrature sum, so intercept updates never re-integrate.
Quadrature uses grid-cell centers as nodes and numpy's pairwise summation,
making every value independent of thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import covariates_at
from .errors import QuadratureOverflowError, StaleCacheError

__all__ = [
    "Coefficients",
    "QuadratureCache",
    "log_intensity",
    "quadrature_q",
    "build_cache",
    "loglik_complete",
    "loglik_conditional",
    "loglik_windowed",
    "logpmf_n",
]

EXP_GUARD = 700.0


@dataclass(frozen=True)
class Coefficients:
    """Log-linear intensity coefficients: log lambda(s) = beta0 + x'(s) beta."""

    beta0: float
    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if not np.isfinite(self.beta0) or not np.isfinite(beta).all():
            raise ValueError("coefficients must be finite")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def zeta(self):
        return math.exp(self.beta0)


@dataclass(frozen=True)
class QuadratureCache:
    """Intercept-free integrals and the observed-point linear sum for one beta.

    q_full covers every cell, q_window the masked cells, q_complement the
    rest; sum_xb is the sum of x'(s_i) beta over observed points. The beta
    that built the cache is retained so stale reuse fails loudly.
    """

    q_full: float
    q_window: float
    q_complement: float
    sum_xb: float
    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        if not (self.q_full > 0 and self.q_window > 0 and self.q_complement >= 0):
            raise ValueError("quadrature integrals must be positive")

    def check_beta(self, beta):
        if not np.array_equal(self.beta, np.asarray(beta, dtype=float).reshape(-1)):
            raise StaleCacheError("cache was built for a different beta")


def log_intensity(x, c):
    """log lambda at covariate vector x: beta0 + x'beta."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != c.beta.shape:
        raise ValueError(f"covariate length {x.shape[0]} != beta length {c.beta.shape[0]}")
    return float(c.beta0 + x @ c.beta)


def quadrature_q(stack, beta, mask=None):
    """Intercept-free integral Q(beta) = sum over cells of exp(x'beta)*area.

    A mask restricts the sum to selected cells. Exponents above EXP_GUARD
    abort with the offending cell named rather than returning infinity.
    """
    beta = np.asarray(beta, dtype=float).reshape(-1)
    xb = stack.values @ beta
    if mask is not None:
        masked = np.where(np.asarray(mask, dtype=bool), xb, -np.inf)
    else:
        masked = xb
    worst = int(np.argmax(masked))
    if masked[worst] > EXP_GUARD:
        raise QuadratureOverflowError(cell_index=worst, exponent=float(masked[worst]))
    # np.sum is pairwise over the contiguous axis, so the value is stable
    return float(np.sum(np.exp(masked)) * stack.grid.cell_area)


def build_cache(stack, beta, pattern=None, mask=None):
    """Assemble the QuadratureCache for one slope vector."""
    beta = np.asarray(beta, dtype=float).reshape(-1)
    q_full = quadrature_q(stack, beta)
    if mask is None:
        q_window, q_complement = q_full, 0.0
    else:
        mask = np.asarray(mask, dtype=bool)
        q_window = quadrature_q(stack, beta, mask)
        q_complement = quadrature_q(stack, beta, ~mask) if (~mask).any() else 0.0
    if pattern is None or pattern.n == 0:
        sum_xb = 0.0
    else:
        sum_xb = float(np.sum(covariates_at(stack, pattern.locations) @ beta))
    return QuadratureCache(q_full, q_window, q_complement, sum_xb, beta)


def loglik_complete(pattern, stack, c, cache):
    """Log-likelihood of the full pattern over the whole domain.

    n*beta0 + sum_i x'(s_i)beta - log(n!) - exp(beta0)*Q(beta).
    """
    cache.check_beta(c.beta)
    n = pattern.n
    return n * c.beta0 + cache.sum_xb - math.lgamma(n + 1) - c.zeta * cache.q_full


def loglik_conditional(pattern, stack, beta, cache):
    """Location log-likelihood given n; the intercept never enters."""
    cache.check_beta(beta)
    n = pattern.n
    if n < 1:
        raise ValueError("conditional likelihood undefined for an empty pattern")
    return cache.sum_xb - n * math.log(cache.q_full)


def loglik_windowed(pattern, stack, c, cache, mask):
    """Complete log-likelihood restricted to the observation windows."""
    cache.check_beta(c.beta)
    if pattern.n > 0 and pattern.window_index is None:
        raise ValueError("windowed likelihood needs window-tagged points")
    n = pattern.n
    return n * c.beta0 + cache.sum_xb - math.lgamma(n + 1) - c.zeta * cache.q_window


def logpmf_n(n, c, q):
    """Poisson log-mass of the count n at rate exp(beta0)*q."""
    if n < 0 or not q > 0:
        raise ValueError("need n >= 0 and q > 0")
    rate = c.zeta * q
    return n * math.log(rate) - rate - math.lgamma(n + 1)
