"""Transient-posterior sampling for the slope vector given the count.

The point-process likelihood conditioned on n is approximated by logistic
regression on the observed points plus a uniform background sample (the
Berman-Turner device). Three samplers share that design: exact Polya-Gamma
Gibbs, and a Gaussian approximation at the IRLS maximum likelihood estimate
used in both approximate and exact flavors downstream. An optional random
hidden-layer basis (GELU activation) replaces raw covariates.

The logistic intercept absorbs the background sample size and is dropped
from every transient sample; only slopes carry forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, solve_triangular
from scipy.special import erfc, expit

from .domain import covariates_at
from .errors import (
    NotPositiveDefiniteError,
    PprbError,
    SelectionFailureError,
    SeparationError,
    SingularDesignError,
)
from .parallel import run_chunked
from .polya_gamma import pg_draw_batch

__all__ = [
    "KIND_CHAIN",
    "KIND_GAUSSIAN",
    "BtDesign",
    "TransientSample",
    "IrlsFit",
    "ElmBasis",
    "gelu",
    "generate_background",
    "build_bt_design",
    "irls_fit",
    "sample_gaussian_approx",
    "pg_gibbs",
    "elm_build",
    "elm_select",
    "run_first_stage",
]

KIND_CHAIN = "mcmc-chain"
KIND_GAUSSIAN = "independent-gaussian"

DEFAULT_PRIOR_VAR = 100.0
BACKGROUND_FACTOR = 10
BACKGROUND_CAP = 100_000


@dataclass(frozen=True)
class BtDesign:
    """Binary-regression design: n presence rows (label 1) then m background
    rows (label 0), with a leading all-ones intercept column."""

    rows: np.ndarray
    labels: np.ndarray
    locations: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        labels = np.asarray(self.labels, dtype=float).reshape(-1)
        locations = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        if rows.shape[0] != labels.shape[0] or rows.shape[0] != locations.shape[0]:
            raise ValueError("rows, labels, and locations must have equal length")
        n_ones = int(labels.sum())
        if not np.array_equal(labels, np.concatenate([np.ones(n_ones), np.zeros(labels.size - n_ones)])):
            raise ValueError("labels must be n ones followed by m zeros")
        for name, arr in (("rows", rows), ("labels", labels), ("locations", locations)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_presence(self):
        return int(self.labels.sum())

    @property
    def n_background(self):
        return self.labels.size - self.n_presence


@dataclass(frozen=True)
class TransientSample:
    """Slope draws from the conditional-on-n stage.

    kind 'mcmc-chain' marks dependent Gibbs output; 'independent-gaussian'
    marks i.i.d. draws from N(mle_mean, mle_cov), with the Gaussian retained
    for exact proposal-density corrections later.
    """

    draws: np.ndarray
    kind: str
    mle_mean: np.ndarray | None = field(default=None)
    mle_cov: np.ndarray | None = field(default=None)

    def __post_init__(self):
        draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        if draws.shape[0] < 1:
            raise ValueError("need at least one draw")
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)
        if self.kind not in (KIND_CHAIN, KIND_GAUSSIAN):
            raise ValueError(f"unknown sample kind '{self.kind}'")
        if self.kind == KIND_GAUSSIAN:
            if self.mle_mean is None or self.mle_cov is None:
                raise ValueError("independent-gaussian samples need the fitted Gaussian")
            cov = np.asarray(self.mle_cov, dtype=float)
            if not np.allclose(cov, cov.T):
                raise ValueError("mle_cov must be symmetric")
            try:
                cholesky(cov, lower=True)
            except LinAlgError as err:
                raise NotPositiveDefiniteError("mle_cov is not positive definite") from err

    @property
    def n_draws(self):
        return self.draws.shape[0]


@dataclass(frozen=True)
class IrlsFit:
    """Logistic MLE with inverse observed Fisher information."""

    beta: np.ndarray
    cov: np.ndarray
    loglik: float
    n_iter: int


def generate_background(m, grid, mask, rng):
    """m i.i.d. uniform locations over the union of masked cells.

    Cells are equal-area squares, so a uniform cell choice plus a uniform
    offset within the cell is exact.
    """
    if m < 1:
        raise ValueError("background size m must be >= 1")
    cells = np.arange(grid.n_cells) if mask is None else np.flatnonzero(mask)
    if cells.size == 0:
        raise ValueError("background region is empty")
    chosen = cells[rng.integers(0, cells.size, size=m)]
    offsets = rng.random((m, 2))
    col = chosen % grid.n_cols
    row = chosen // grid.n_cols
    x = grid.x_min + (col + offsets[:, 0]) * grid.cell_size
    y = grid.y_min + (row + offsets[:, 1]) * grid.cell_size
    return np.column_stack([x, y])


def default_background_size(n):
    return min(max(BACKGROUND_FACTOR * n, 1), BACKGROUND_CAP)


def build_bt_design(pattern, background, stack, basis=None):
    """Assemble presence + background rows, through the basis when given."""
    locations = np.vstack([pattern.locations, background])
    raw = covariates_at(stack, locations)
    feats = basis.transform(raw) if basis is not None else raw
    rows = np.column_stack([np.ones(feats.shape[0]), feats])
    labels = np.concatenate([np.ones(pattern.n), np.zeros(background.shape[0])])
    return BtDesign(rows, labels, locations)


def _logistic_loglik(eta, y):
    return float(y @ eta - np.logaddexp(0.0, eta).sum())


def _irls(rows, labels, tol=1e-8, max_iter=50):
    y = labels
    if y.min() == y.max():
        raise ValueError("labels must contain both classes")
    d = rows.shape[1]
    beta = np.zeros(d)
    loglik = _logistic_loglik(rows @ beta, y)
    for it in range(1, max_iter + 1):
        eta = rows @ beta
        prob = expit(eta)
        weight = prob * (1.0 - prob)
        grad = rows.T @ (y - prob)
        # stop on the same score criterion the acceptance gate below uses
        if np.max(np.abs(grad)) < tol:
            break
        hess = rows.T @ (rows * weight[:, None])
        try:
            factor = cho_factor(hess, lower=True)
        except LinAlgError as err:
            raise SingularDesignError("design matrix is rank deficient") from err
        step = cho_solve(factor, grad)
        # concavity makes this an ascent direction; halve overshoots, but
        # treat sub-rounding decreases as ties so tiny terminal steps pass
        slack = 1e-11 * (abs(loglik) + 1.0)
        candidate = beta + step
        cand_ll = _logistic_loglik(rows @ candidate, y)
        for _ in range(30):
            if cand_ll >= loglik - slack:
                break
            step = 0.5 * step
            candidate = beta + step
            cand_ll = _logistic_loglik(rows @ candidate, y)
        beta = candidate
        loglik = cand_ll
    eta = rows @ beta
    prob = expit(eta)
    loglik = _logistic_loglik(eta, y)
    # the logistic log-likelihood approaches its supremum 0 only when the
    # fitted probabilities reach the labels, i.e. the classes separate
    if loglik > -1e-6:
        raise SeparationError("perfect separation: fitted probabilities reach the labels")
    grad = rows.T @ (y - prob)
    if np.max(np.abs(grad)) >= 1e-8:
        if np.max(np.abs(beta)) > 50.0:
            raise SeparationError("perfect separation: estimates diverge")
        raise PprbError("logistic fit did not converge")
    weight = prob * (1.0 - prob)
    hess = rows.T @ (rows * weight[:, None])
    try:
        factor = cho_factor(hess, lower=True)
    except LinAlgError as err:
        raise SingularDesignError("design matrix is rank deficient") from err
    cov = cho_solve(factor, np.eye(d))
    cov = 0.5 * (cov + cov.T)
    return IrlsFit(beta=beta, cov=cov, loglik=loglik, n_iter=it)


def irls_fit(design):
    """Logistic MLE by Fisher scoring; intercept is coordinate 0."""
    return _irls(design.rows, design.labels)


def slope_marginal(fit):
    """Gaussian marginal of the slope block (intercept integrated out)."""
    return fit.beta[1:], fit.cov[1:, 1:]


def sample_gaussian_approx(mle_mean, mle_cov, n_draws, rng):
    """i.i.d. draws from N(mle_mean, mle_cov) via the symmetric square root."""
    mean = np.asarray(mle_mean, dtype=float).reshape(-1)
    cov = np.asarray(mle_cov, dtype=float)
    eigval, eigvec = np.linalg.eigh(0.5 * (cov + cov.T))
    if eigval.min() <= 0:
        raise NotPositiveDefiniteError("covariance has a nonpositive eigenvalue")
    root = eigvec @ (np.sqrt(eigval)[:, None] * eigvec.T)
    draws = mean + rng.standard_normal((n_draws, mean.size)) @ root
    return TransientSample(draws, KIND_GAUSSIAN, mle_mean=mean, mle_cov=cov)


def pg_gibbs(design, prior_var, n_draws, burn_in, rng):
    """Exact Gibbs for Bayesian logistic regression via PG augmentation.

    Prior beta ~ N(0, prior_var * I) on every coordinate. Runs burn_in
    discarded sweeps then n_draws retained ones; the returned sample holds
    slopes only.
    """
    if prior_var <= 0:
        raise ValueError("prior_var must be positive")
    rows, labels = design.rows, design.labels
    d = rows.shape[1]
    kappa = rows.T @ (labels - 0.5)
    prior_prec = np.eye(d) / prior_var
    beta = np.zeros(d)
    out = np.empty((n_draws, d - 1))
    for it in range(burn_in + n_draws):
        omega = pg_draw_batch(rows @ beta, rng)
        prec = rows.T @ (rows * omega[:, None]) + prior_prec
        try:
            lower = cholesky(prec, lower=True)
        except LinAlgError as err:
            raise NotPositiveDefiniteError("conjugate precision is singular") from err
        mean = solve_triangular(
            lower.T, solve_triangular(lower, kappa, lower=True), lower=False
        )
        beta = mean + solve_triangular(lower.T, rng.standard_normal(d), lower=False)
        if it >= burn_in:
            out[it - burn_in] = beta[1:]
    return TransientSample(out, KIND_CHAIN)


def gelu(x):
    """x * Phi(x), with Phi evaluated through erfc."""
    x = np.asarray(x, dtype=float)
    return x * 0.5 * erfc(-x / math.sqrt(2.0))


@dataclass(frozen=True)
class ElmBasis:
    """Random single-hidden-layer feature map h(x) = gelu(x' omega), no bias."""

    omega: np.ndarray
    w_matrix: np.ndarray
    aic: float
    activation: str = "gelu"

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        if omega.ndim != 2 or not np.isfinite(omega).all():
            raise ValueError("omega must be a finite p x q matrix")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "w_matrix", np.asarray(self.w_matrix, dtype=float))

    @property
    def n_hidden(self):
        return self.omega.shape[1]

    @property
    def names(self):
        return tuple(f"h{j}" for j in range(1, self.n_hidden + 1))

    def transform(self, x_raw):
        return gelu(np.asarray(x_raw, dtype=float) @ self.omega)


def elm_build(x_raw, omega):
    """Hidden-layer output matrix for fixed weights."""
    omega = np.asarray(omega, dtype=float)
    return ElmBasis(omega, gelu(np.asarray(x_raw, dtype=float) @ omega), aic=math.nan)


def elm_select(x_raw, labels, q, n_candidates, rng, n_threads=None):
    """Pick the AIC-best of n_candidates random hidden layers.

    Candidate weights come from per-candidate spawned streams, so the chosen
    basis does not depend on evaluation order; ties break toward the lower
    candidate index. Candidates that separate or go singular are skipped.
    """
    if n_candidates < 1:
        raise ValueError("need at least one candidate")
    x_raw = np.asarray(x_raw, dtype=float)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    p = x_raw.shape[1]
    streams = rng.spawn(n_candidates)
    omegas = [streams[i].standard_normal((p, q)) for i in range(n_candidates)]
    aics = np.full(n_candidates, np.inf)

    def work(start, stop):
        for i in range(start, stop):
            w = gelu(x_raw @ omegas[i])
            rows = np.column_stack([np.ones(w.shape[0]), w])
            try:
                fit = _irls(rows, labels)
            except (SeparationError, SingularDesignError, PprbError):
                continue
            aics[i] = 2.0 * (q + 1) - 2.0 * fit.loglik

    run_chunked(work, n_candidates, n_threads=n_threads, chunk=8)
    best = int(np.argmin(aics))
    if not np.isfinite(aics[best]):
        raise SelectionFailureError("every candidate basis failed to fit")
    basis = elm_build(x_raw, omegas[best])
    return ElmBasis(basis.omega, basis.w_matrix, aic=float(aics[best]))


def run_first_stage(strategy, pattern, stack, mask, *, m, n_draws, burn_in,
                    prior_var, rng, basis=None):
    """Background generation + design assembly + the chosen sampler.

    Returns (sample, design). Strategies 'glm-a' and 'glm-e' share the same
    Gaussian first stage; they differ only downstream.
    """
    background = generate_background(m, stack.grid, mask, rng)
    design = build_bt_design(pattern, background, stack, basis)
    if strategy == "pg":
        sample = pg_gibbs(design, prior_var, n_draws, burn_in, rng)
    elif strategy in ("glm-a", "glm-e"):
        fit = irls_fit(design)
        mean, cov = slope_marginal(fit)
        sample = sample_gaussian_approx(mean, cov, n_draws, rng)
    else:
        raise ValueError(f"unknown first-stage strategy '{strategy}'")
    return sample, design
