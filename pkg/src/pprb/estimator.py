"""Estimator-style front end: configure once, fit on a point pattern plus
covariate stack, then query posterior draws, abundance, simulations, and
goodness-of-fit from the fitted state.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .diagnostics import ppc_l_function, seconds_per_ess
from .domain import (
    CovariateStack,
    PointPattern,
    classify_points,
    covariates_at,
    window_cell_mask,
)
from .first_stage import DEFAULT_PRIOR_VAR, elm_select, generate_background
from .multistage import (
    DEFAULT_PRIOR_A,
    DEFAULT_PRIOR_B,
    STRATEGIES,
    run_pipeline,
)
from .prediction import draw_n0, posterior_point_simulation

__all__ = ["MultiStageIPP"]


class MultiStageIPP(BaseEstimator):
    """Multi-stage Bayesian inference for an inhomogeneous Poisson process.

    Parameters mirror the pipeline knobs: sampling strategy, chain length k,
    burn-in (defaults to k // 2 where a burn-in applies), background size
    (defaults to 10x the observed count, capped), Gamma prior (a, b) on the
    intensity scale, Gaussian prior variance for the logistic stage, and an
    optional random-feature expansion of width elm_q chosen among
    elm_candidates candidates by AIC.

    fit() expects the observed PointPattern, the CovariateStack, and the
    WindowSet of observation rectangles (None means fully observed).
    """

    def __init__(
        self,
        strategy="glm-e",
        k=10_000,
        burn_in=None,
        background_m=None,
        prior_a=DEFAULT_PRIOR_A,
        prior_b=DEFAULT_PRIOR_B,
        prior_var=DEFAULT_PRIOR_VAR,
        elm_q=None,
        elm_candidates=32,
        n_threads=None,
        random_state=None,
    ):
        self.strategy = strategy
        self.k = k
        self.burn_in = burn_in
        self.background_m = background_m
        self.prior_a = prior_a
        self.prior_b = prior_b
        self.prior_var = prior_var
        self.elm_q = elm_q
        self.elm_candidates = elm_candidates
        self.n_threads = n_threads
        self.random_state = random_state

    def _check_is_fitted(self):
        if not hasattr(self, "posterior_"):
            raise RuntimeError("this estimator has not been fitted yet")

    def _select_basis(self, pattern, stack, mask, rng):
        from .first_stage import default_background_size

        m = (
            default_background_size(pattern.n)
            if self.background_m is None
            else int(self.background_m)
        )
        background = generate_background(m, stack.grid, mask, rng)
        locations = np.vstack([pattern.locations, background])
        raw = covariates_at(stack, locations)
        labels = np.concatenate([np.ones(pattern.n), np.zeros(m)])
        return elm_select(
            raw, labels, self.elm_q, self.elm_candidates, rng,
            n_threads=self.n_threads,
        )

    def fit(self, pattern, stack, windows=None):
        """Run every stage of the configured strategy on the observed data.

        Points are classified against the windows first; points outside all
        windows are rejected as inconsistent with the observation model.
        """
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy '{self.strategy}'")
        if windows is not None:
            if pattern.window_index is None:
                observed, outside = classify_points(pattern, windows)
                if outside:
                    raise ValueError(
                        f"{outside} points fall outside every observation window"
                    )
                pattern = observed
            mask = window_cell_mask(stack.grid, windows)
        else:
            mask = None

        rng = np.random.default_rng(self.random_state)
        basis = None
        fit_stack = stack
        if self.elm_q is not None:
            basis = self._select_basis(pattern, stack, mask, rng)
            fit_stack = CovariateStack(
                stack.grid, basis.transform(stack.values), basis.names
            )

        posterior, cache = run_pipeline(
            self.strategy,
            pattern,
            fit_stack,
            mask,
            k=self.k,
            rng=rng,
            burn_in=self.burn_in,
            background_m=self.background_m,
            prior_a=self.prior_a,
            prior_b=self.prior_b,
            prior_var=self.prior_var,
            n_threads=self.n_threads,
        )
        self.posterior_ = posterior
        self.cache_ = cache
        self.basis_ = basis
        self.stack_ = fit_stack
        self.windows_ = windows
        self.mask_ = mask
        self.pattern_ = pattern
        self.n_observed_ = pattern.n
        self._rng = rng
        return self

    @property
    def coef_names_(self):
        self._check_is_fitted()
        return ("beta0",) + tuple(self.stack_.names)

    def summary(self):
        """Posterior mean, sd, and central 95% interval per coefficient."""
        self._check_is_fitted()
        chains = np.column_stack([self.posterior_.beta0, self.posterior_.beta])
        q = np.quantile(chains, (0.025, 0.5, 0.975), axis=0)
        return {
            name: {
                "mean": float(chains[:, j].mean()),
                "sd": float(chains[:, j].std(ddof=1)),
                "q025": float(q[0, j]),
                "q500": float(q[1, j]),
                "q975": float(q[2, j]),
            }
            for j, name in enumerate(self.coef_names_)
        }

    def ess_report(self):
        """Effective sample sizes against total sampling seconds."""
        self._check_is_fitted()
        chains = np.column_stack([self.posterior_.beta0, self.posterior_.beta])
        wall = (self.posterior_.timings or {}).get("total", np.nan)
        return seconds_per_ess(chains, self.coef_names_, wall, method=self.strategy)

    def predict_abundance(self, rng=None):
        """Posterior draws of the total count N = n observed + n unobserved."""
        self._check_is_fitted()
        rng = self._rng if rng is None else rng
        return draw_n0(self.posterior_, self.cache_, self.n_observed_, rng)

    def sample_points(self, max_draws=None, rng=None):
        """Thinning realizations of the fitted process, one per posterior draw."""
        self._check_is_fitted()
        rng = self._rng if rng is None else rng
        return posterior_point_simulation(
            self.posterior_, self.stack_, self.mask_, rng, max_draws=max_draws
        )

    def check_fit(self, radii, rng=None, max_draws=None):
        """Posterior predictive L-function envelope against the fitted data."""
        self._check_is_fitted()
        if self.windows_ is None:
            raise ValueError("goodness-of-fit check needs observation windows")
        rng = self._rng if rng is None else rng
        return ppc_l_function(
            self.posterior_,
            self.stack_,
            self.windows_,
            self.pattern_,
            radii,
            rng,
            max_draws=max_draws,
        )
