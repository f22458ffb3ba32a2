"""Two-stage recursive sampler for the windowed point process, end to end.

Stage one (first_stage module) samples slopes given the observed count.
The intermediate stage precomputes, per first-stage draw, the windowed and
complement integrals plus the observed-point linear sum, in parallel. The
second stage then moves over the stored draws, refreshing zeta = exp(beta0)
from its closed-form Gamma update, and every acceptance ratio needs only
cached numbers: the chain resampler keeps the count ratio at the refreshed
intercept, while the two Gaussian corrections fold the intercept into the
move so their ratios depend on the slope weights alone. A tuned
single-stage random-walk sampler over the same posterior serves as the
reference implementation.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .domain import covariates_at
from .errors import QuadratureOverflowError, StaleCacheError
from .first_stage import KIND_GAUSSIAN
from .likelihood import quadrature_q
from .parallel import run_chunked

__all__ = [
    "IntermediateCache",
    "PosteriorDraws",
    "precompute",
    "gibbs_zeta",
    "second_stage_pprb",
    "second_stage_glma",
    "second_stage_glme",
    "single_stage_baseline",
    "run_pipeline",
    "STRATEGIES",
    "DEFAULT_PRIOR_A",
    "DEFAULT_PRIOR_B",
]

STRATEGIES = ("pg", "glm-a", "glm-e", "single-stage")

DEFAULT_PRIOR_A = 0.01
DEFAULT_PRIOR_B = 0.01


@dataclass(frozen=True)
class IntermediateCache:
    """Per-draw precomputed quantities: window integral Q, complement
    integral, and the observed-point sum of x'beta."""

    q_window: np.ndarray
    q_complement: np.ndarray
    sum_xb: np.ndarray

    def __post_init__(self):
        for name in ("q_window", "q_complement", "sum_xb"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite records")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.q_window.size == self.q_complement.size == self.sum_xb.size):
            raise ValueError("cache components must have equal length")
        if self.q_window.size < 1:
            raise ValueError("cache is empty")

    @property
    def n_draws(self):
        return self.q_window.size

    @property
    def q_full(self):
        return self.q_window + self.q_complement


def precompute(sample, stack, mask, pattern, n_threads=None):
    """Integrals and point sums for every first-stage draw, in parallel.

    Each record depends on its draw alone and chunking is fixed, so output
    is bitwise identical for any thread count.
    """
    draws = sample.draws
    n_draws = draws.shape[0]
    x_points = covariates_at(stack, pattern.locations) if pattern.n > 0 else None
    mask_arr = None if mask is None else np.asarray(mask, dtype=bool)
    comp_arr = None if mask_arr is None else ~mask_arr
    has_complement = comp_arr is not None and comp_arr.any()
    q_window = np.empty(n_draws)
    q_complement = np.zeros(n_draws)
    sum_xb = np.zeros(n_draws)

    def work(start, stop):
        for k in range(start, stop):
            try:
                q_window[k] = quadrature_q(stack, draws[k], mask_arr)
                if has_complement:
                    q_complement[k] = quadrature_q(stack, draws[k], comp_arr)
            except QuadratureOverflowError as err:
                raise QuadratureOverflowError(
                    err.cell_index, err.exponent, draw_index=k
                ) from err
            if x_points is not None:
                sum_xb[k] = float(np.sum(x_points @ draws[k]))

    run_chunked(work, n_draws, n_threads=n_threads)
    return IntermediateCache(q_window, q_complement, sum_xb)


@dataclass(frozen=True)
class PosteriorDraws:
    """Joint draws of (beta0, beta) with per-draw window intensity mass.

    source_index tracks which first-stage draw each iteration holds (None
    for the single-stage sampler, which records complement integrals
    directly instead). timings are wall-clock seconds per stage, attached
    by the pipeline that ran the sampler.
    """

    beta0: np.ndarray
    beta: np.ndarray
    lambda_total: np.ndarray
    accepted: np.ndarray
    source_index: np.ndarray | None = field(default=None)
    q_complement: np.ndarray | None = field(default=None)
    timings: dict | None = field(default=None)

    def __post_init__(self):
        beta0 = np.asarray(self.beta0, dtype=float).reshape(-1)
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        lam = np.asarray(self.lambda_total, dtype=float).reshape(-1)
        acc = np.asarray(self.accepted, dtype=np.int8).reshape(-1)
        k = beta0.size
        if not (beta.shape[0] == lam.size == acc.size == k) or k < 1:
            raise ValueError("draw components must share one length >= 1")
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "lambda_total", lam)
        object.__setattr__(self, "accepted", acc)
        if self.source_index is not None:
            src = np.asarray(self.source_index, dtype=np.int64).reshape(-1)
            if src.size != k:
                raise ValueError("source_index length mismatch")
            object.__setattr__(self, "source_index", src)
        if self.q_complement is not None:
            qc = np.asarray(self.q_complement, dtype=float).reshape(-1)
            if qc.size != k:
                raise ValueError("q_complement length mismatch")
            object.__setattr__(self, "q_complement", qc)

    @property
    def n_draws(self):
        return self.beta0.size

    @property
    def n_params(self):
        return self.beta.shape[1]

    @property
    def acceptance_count(self):
        return int(self.accepted.sum())

    @property
    def acceptance_rate(self):
        return self.acceptance_count / self.n_draws

    def with_timings(self, timings):
        return PosteriorDraws(
            self.beta0, self.beta, self.lambda_total, self.accepted,
            self.source_index, self.q_complement, dict(timings),
        )


def gibbs_zeta(a, b, n, q, rng):
    """Closed-form update zeta ~ Gamma(shape a + n, rate b + q)."""
    if a <= 0 or b <= 0 or q <= 0 or n < 0:
        raise ValueError("need a, b, q > 0 and n >= 0")
    return rng.gamma(a + n, 1.0 / (b + q))


def _count_logpmf(n, zeta, q, lgamma_n):
    rate = zeta * q
    return n * math.log(rate) - rate - lgamma_n


class _GaussianDensity:
    """log N(x; mean, cov) evaluated through a fixed Cholesky factor."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        self.lower = cholesky(np.asarray(cov, dtype=float), lower=True)
        self.log_norm = -0.5 * self.mean.size * math.log(2.0 * math.pi) - float(
            np.sum(np.log(np.diag(self.lower)))
        )

    def logpdf(self, x):
        z = solve_triangular(self.lower, x - self.mean, lower=True)
        return self.log_norm - 0.5 * float(z @ z)

    def logpdf_rows(self, xs):
        z = solve_triangular(self.lower, (xs - self.mean).T, lower=True)
        return self.log_norm - 0.5 * np.einsum("ij,ij->j", z, z)


def _zeta_log_terms(zeta, a, b, n, q_cur):
    """Intercept prior and Gibbs-proposal log densities at the current zeta.

    These appear identically in numerator and denominator of the full
    acceptance ratio once the intercept moves by its own Gibbs step; they
    are evaluated anyway when auditing the cancellation.
    """
    log_prior = a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(zeta) - b * zeta
    shape, rate = a + n, b + q_cur
    log_prop = (
        shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(zeta)
        - rate * zeta
    )
    return log_prior + log_prop


def second_stage_pprb(sample, cache, n, a, b, n_iter, rng, audit=None):
    """Resampling second stage: zeta Gibbs + count-ratio Metropolis on beta.

    Proposals are drawn uniformly with replacement from the first-stage
    sample, so the acceptance ratio reduces to the Poisson count ratio at
    the proposed versus current window integral. When ``audit`` is a list
    and the sample carries its Gaussian, each iteration appends
    (reduced, full) log ratios, the full form keeping every prior and
    proposal term that the reduction cancels.
    """
    if cache.n_draws != sample.n_draws:
        raise StaleCacheError(
            f"cache holds {cache.n_draws} records for {sample.n_draws} draws"
        )
    n_first = sample.n_draws
    lgamma_n = math.lgamma(n + 1)
    auditing = audit is not None and sample.mle_mean is not None
    density = _GaussianDensity(sample.mle_mean, sample.mle_cov) if auditing else None

    beta0 = np.empty(n_iter)
    lam = np.empty(n_iter)
    accepted = np.zeros(n_iter, dtype=np.int8)
    source = np.empty(n_iter, dtype=np.int64)
    j = 0
    q_cur = float(cache.q_window[j])
    for k in range(n_iter):
        zeta = gibbs_zeta(a, b, n, q_cur, rng)
        j_star = int(rng.integers(0, n_first))
        q_star = float(cache.q_window[j_star])
        log_reduced = _count_logpmf(n, zeta, q_star, lgamma_n) - _count_logpmf(
            n, zeta, q_cur, lgamma_n
        )
        if auditing:
            shared = _zeta_log_terms(zeta, a, b, n, q_cur)
            cross = density.logpdf(sample.draws[j_star]) + density.logpdf(sample.draws[j])
            log_full = (
                (_count_logpmf(n, zeta, q_star, lgamma_n) + cross + shared)
                - (_count_logpmf(n, zeta, q_cur, lgamma_n) + cross + shared)
            )
            audit.append((log_reduced, log_full))
        if log_reduced >= 0.0 or math.log(rng.random()) < log_reduced:
            j = j_star
            q_cur = q_star
            accepted[k] = 1
        beta0[k] = math.log(zeta)
        lam[k] = zeta * q_cur
        source[k] = j
    return PosteriorDraws(
        beta0, sample.draws[source], lam, accepted, source_index=source,
    )


def second_stage_glma(sample, cache, n, a, b, rng):
    """Approximate-correction second stage on the first-stage pool.

    Iteration k proposes the k-th stored draw (used once each, so no pool
    atom can be revisited and the chain cannot degenerate onto a few
    high-weight draws), with the intercept refresh from its conjugate
    Gamma riding along on each move. The Gamma factors cancel against the
    posterior's intercept terms, so the acceptance ratio is the count
    weight n*log(Q) - (a+n)*log(b+Q) differenced between proposal and
    current. Unlike the exact correction, the first-stage sample itself
    stands in for its own density, so the slope chain targets the
    first-stage law reweighted by the count likelihood.
    """
    if cache.n_draws != sample.n_draws:
        raise StaleCacheError(
            f"cache holds {cache.n_draws} records for {sample.n_draws} draws"
        )
    n_iter = sample.n_draws
    shape = a + n
    q_window = cache.q_window
    log_w = n * np.log(q_window) - shape * np.log(b + q_window)
    beta0 = np.empty(n_iter)
    lam = np.empty(n_iter)
    accepted = np.zeros(n_iter, dtype=np.int8)
    source = np.empty(n_iter, dtype=np.int64)
    j = 0
    q_cur = float(q_window[j])
    w_cur = float(log_w[j])
    for k in range(n_iter):
        log_alpha = float(log_w[k]) - w_cur
        if log_alpha >= 0.0 or math.log(rng.random()) < log_alpha:
            j = k
            q_cur = float(q_window[j])
            w_cur = float(log_w[j])
            accepted[k] = 1
        zeta = gibbs_zeta(a, b, n, q_cur, rng)
        beta0[k] = math.log(zeta)
        lam[k] = zeta * q_cur
        source[k] = j
    return PosteriorDraws(
        beta0, sample.draws[source], lam, accepted, source_index=source,
    )


def second_stage_glme(sample, cache, n, a, b, rng):
    """Exact-correction second stage for the Gaussian first stage.

    Iteration k proposes the k-th stored draw (i.i.d. from the fitted
    Gaussian, used once each) together with an intercept refresh from its
    conjugate Gamma at the proposed integral. The Gamma factors cancel
    against the posterior's intercept terms, leaving an independence
    ratio over cached point sums, window integrals, and proposal
    densities, so mixing is governed by the slope marginal rather than
    the joint with the intercept.
    """
    if sample.kind != KIND_GAUSSIAN:
        raise ValueError("exact correction requires an independent-gaussian sample")
    if cache.n_draws != sample.n_draws:
        raise StaleCacheError(
            f"cache holds {cache.n_draws} records for {sample.n_draws} draws"
        )
    n_iter = sample.n_draws
    density = _GaussianDensity(sample.mle_mean, sample.mle_cov)
    shape = a + n
    q_window = cache.q_window
    log_w = (
        cache.sum_xb
        - shape * np.log(b + q_window)
        - density.logpdf_rows(sample.draws)
    )
    beta0 = np.empty(n_iter)
    lam = np.empty(n_iter)
    accepted = np.zeros(n_iter, dtype=np.int8)
    source = np.empty(n_iter, dtype=np.int64)
    j = 0
    q_cur = float(q_window[j])
    w_cur = float(log_w[j])
    for k in range(n_iter):
        log_alpha = float(log_w[k]) - w_cur
        if log_alpha >= 0.0 or math.log(rng.random()) < log_alpha:
            j = k
            q_cur = float(q_window[j])
            w_cur = float(log_w[j])
            accepted[k] = 1
        zeta = gibbs_zeta(a, b, n, q_cur, rng)
        beta0[k] = math.log(zeta)
        lam[k] = zeta * q_cur
        source[k] = j
    return PosteriorDraws(
        beta0, sample.draws[source], lam, accepted, source_index=source,
    )


def single_stage_baseline(pattern, stack, mask, a, b, n_iter, burn_in, rng,
                          initial_step=0.1):
    """Conventional one-block sampler over the same posterior, for reference.

    Alternates the zeta Gibbs update with an adaptive Gaussian random walk
    on beta under a flat prior. The walk targets acceptance 0.234 by a
    Robbins-Monro recursion on the log step size during burn-in and is
    frozen afterwards, so the retained chain is Markovian. Every proposal
    re-integrates the intensity; that cost is the point of comparison.
    """
    n = pattern.n
    p = stack.n_covariates
    x_points = covariates_at(stack, pattern.locations) if n > 0 else None
    beta = np.zeros(p)
    q_cur = quadrature_q(stack, beta, mask)
    sxb_cur = 0.0 if x_points is None else float(np.sum(x_points @ beta))
    comp_mask = None if mask is None else ~np.asarray(mask, dtype=bool)
    has_complement = comp_mask is not None and comp_mask.any()
    q_comp_cur = quadrature_q(stack, beta, comp_mask) if has_complement else 0.0

    log_step = math.log(initial_step)
    beta0 = np.empty(n_iter)
    out_beta = np.empty((n_iter, p))
    lam = np.empty(n_iter)
    accepted = np.zeros(n_iter, dtype=np.int8)
    q_complement = np.zeros(n_iter)
    stale_complement = False
    for it in range(burn_in + n_iter):
        zeta = gibbs_zeta(a, b, n, q_cur, rng)
        prop = beta + math.exp(log_step) * rng.standard_normal(p)
        try:
            q_prop = quadrature_q(stack, prop, mask)
        except QuadratureOverflowError:
            q_prop = None
        accept = False
        if q_prop is not None:
            sxb_prop = 0.0 if x_points is None else float(np.sum(x_points @ prop))
            log_alpha = (sxb_prop - sxb_cur) - zeta * (q_prop - q_cur)
            accept = log_alpha >= 0.0 or math.log(rng.random()) < log_alpha
        if accept:
            beta, q_cur, sxb_cur = prop, q_prop, sxb_prop
            stale_complement = True
        if it < burn_in:
            gain = 1.0 / (1.0 + it) ** 0.6
            log_step += gain * ((1.0 if accept else 0.0) - 0.234)
        else:
            k = it - burn_in
            if has_complement and stale_complement:
                q_comp_cur = quadrature_q(stack, beta, comp_mask)
                stale_complement = False
            beta0[k] = math.log(zeta)
            out_beta[k] = beta
            lam[k] = zeta * q_cur
            accepted[k] = 1 if accept else 0
            q_complement[k] = q_comp_cur
    return PosteriorDraws(
        beta0, out_beta, lam, accepted, q_complement=q_complement,
    )


def run_pipeline(strategy, pattern, stack, mask, *, k, rng, burn_in=None,
                 background_m=None, prior_a=DEFAULT_PRIOR_A, prior_b=DEFAULT_PRIOR_B,
                 prior_var=None, basis=None, n_threads=None, initial_step=0.1,
                 audit=None):
    """All stages of one strategy, returning (posterior, cache).

    Multi-stage strategies run the first stage, the parallel precompute, and
    a second stage of k iterations; 'single-stage' runs the reference sampler
    (burn_in discarded, k retained) and has no cache. Per-stage wall seconds
    land in posterior.timings.
    """
    from .first_stage import DEFAULT_PRIOR_VAR, default_background_size, run_first_stage

    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy '{strategy}'; choose from {STRATEGIES}")
    if burn_in is None:
        burn_in = k // 2
    n = pattern.n
    if strategy == "single-stage":
        start = time.perf_counter()
        posterior = single_stage_baseline(
            pattern, stack, mask, prior_a, prior_b, k, burn_in, rng,
            initial_step=initial_step,
        )
        elapsed = time.perf_counter() - start
        return posterior.with_timings({"sampling": elapsed, "total": elapsed}), None

    m = default_background_size(n) if background_m is None else int(background_m)
    start = time.perf_counter()
    sample, _ = run_first_stage(
        strategy, pattern, stack, mask,
        m=m,
        n_draws=k,
        burn_in=burn_in if strategy == "pg" else 0,
        prior_var=DEFAULT_PRIOR_VAR if prior_var is None else prior_var,
        rng=rng,
        basis=basis,
    )
    t_first = time.perf_counter() - start
    start = time.perf_counter()
    cache = precompute(sample, stack, mask, pattern, n_threads=n_threads)
    t_mid = time.perf_counter() - start
    start = time.perf_counter()
    if strategy == "glm-e":
        posterior = second_stage_glme(sample, cache, n, prior_a, prior_b, rng)
    elif strategy == "glm-a":
        posterior = second_stage_glma(sample, cache, n, prior_a, prior_b, rng)
    else:
        posterior = second_stage_pprb(
            sample, cache, n, prior_a, prior_b, k, rng, audit=audit
        )
    t_second = time.perf_counter() - start
    timings = {
        "first": t_first,
        "intermediate": t_mid,
        "second": t_second,
        "total": t_first + t_mid + t_second,
    }
    return posterior.with_timings(timings), cache
