"""Tests for the intermediate cache and the three posterior samplers.

The strongest oracle: with a flat slope prior the slope marginal is
pi(beta) proportional to exp(sum_i x_i'beta) * (b + Q(beta))^-(a+n), which a
1-D problem can integrate on a grid. Both the exact-correction resampler and
the single-stage reference must reproduce its moments.
"""

import math

import numpy as np
import pytest
import scipy.stats as st

import pprb.multistage as ms
from conftest import batch_mean_se, make_problem
from pprb.domain import CovariateStack, covariates_at
from pprb.errors import QuadratureOverflowError, StaleCacheError
from pprb.first_stage import (
    DEFAULT_PRIOR_VAR,
    KIND_CHAIN,
    KIND_GAUSSIAN,
    TransientSample,
    default_background_size,
    run_first_stage,
)
from pprb.likelihood import quadrature_q
from pprb.multistage import (
    DEFAULT_PRIOR_A,
    DEFAULT_PRIOR_B,
    IntermediateCache,
    PosteriorDraws,
    gibbs_zeta,
    precompute,
    second_stage_glme,
    second_stage_pprb,
    single_stage_baseline,
)

A = DEFAULT_PRIOR_A
B = DEFAULT_PRIOR_B
N_CHAIN = 8000


@pytest.fixture(scope="module")
def pipeline(small_problem):
    pr = small_problem
    obs = pr["observed"]
    rng = np.random.default_rng(77)
    sample, _ = run_first_stage(
        "glm-e",
        obs,
        pr["stack"],
        pr["mask"],
        m=default_background_size(obs.n),
        n_draws=N_CHAIN,
        burn_in=0,
        prior_var=DEFAULT_PRIOR_VAR,
        rng=rng,
    )
    cache = precompute(sample, pr["stack"], pr["mask"], obs)
    return {"sample": sample, "cache": cache, "obs": obs, **pr}


@pytest.fixture(scope="module")
def grid_marginal(pipeline):
    """Numerically integrated slope marginal and derived zeta mean."""
    stack = pipeline["stack"]
    mask = pipeline["mask"]
    obs = pipeline["obs"]
    n = obs.n
    sx = float(covariates_at(stack, obs.locations)[:, 0].sum())
    cell_values = stack.values[mask, 0]
    area = stack.grid.cell_area

    center = float(pipeline["sample"].mle_mean[0])
    sd = math.sqrt(float(pipeline["sample"].mle_cov[0, 0]))
    grid = np.linspace(center - 10 * sd, center + 10 * sd, 4001)
    q = area * np.exp(np.outer(grid, cell_values)).sum(axis=1)
    log_post = sx * grid - (A + n) * np.log(B + q)
    weights = np.exp(log_post - log_post.max())
    assert weights[0] < 1e-12 and weights[-1] < 1e-12, "grid span too narrow"
    weights /= np.trapezoid(weights, grid)
    mean = float(np.trapezoid(weights * grid, grid))
    var = float(np.trapezoid(weights * (grid - mean) ** 2, grid))
    zeta_mean = float(np.trapezoid(weights * (A + n) / (B + q), grid))

    # the resampler without the exact correction targets the fitted Gaussian
    # reweighted by the count likelihood, not the exact slope marginal
    log_lim = -0.5 * ((grid - center) / sd) ** 2 + n * np.log(q) - (A + n) * np.log(B + q)
    lim_weights = np.exp(log_lim - log_lim.max())
    lim_weights /= np.trapezoid(lim_weights, grid)
    resampler_mean = float(np.trapezoid(lim_weights * grid, grid))
    return {
        "mean": mean,
        "sd": math.sqrt(var),
        "zeta_mean": zeta_mean,
        "resampler_mean": resampler_mean,
    }


class TestPrecompute:
    def test_records_match_serial_quadrature(self, pipeline):
        stack, mask = pipeline["stack"], pipeline["mask"]
        sample, cache, obs = pipeline["sample"], pipeline["cache"], pipeline["obs"]
        x_points = covariates_at(stack, obs.locations)
        complement = ~mask
        for k in [0, 1, 17, N_CHAIN // 2, N_CHAIN - 1]:
            draw = sample.draws[k]
            assert cache.q_window[k] == quadrature_q(stack, draw, mask)
            assert cache.q_complement[k] == quadrature_q(stack, draw, complement)
            assert cache.sum_xb[k] == float(np.sum(x_points @ draw))

    def test_window_plus_complement_equals_full(self, pipeline):
        stack = pipeline["stack"]
        sample, cache = pipeline["sample"], pipeline["cache"]
        for k in [0, 333, N_CHAIN - 1]:
            full = quadrature_q(stack, sample.draws[k], None)
            assert cache.q_full[k] == pytest.approx(full, rel=1e-12)

    def test_thread_count_invariance_bitwise(self, small_problem):
        pr = small_problem
        rng = np.random.default_rng(5)
        draws = rng.normal(0.0, 0.5, size=(512, 1))
        sample = TransientSample(draws, KIND_CHAIN)
        results = [
            precompute(sample, pr["stack"], pr["mask"], pr["observed"], n_threads=t)
            for t in (1, 2, 4)
        ]
        for other in results[1:]:
            assert np.array_equal(results[0].q_window, other.q_window)
            assert np.array_equal(results[0].q_complement, other.q_complement)
            assert np.array_equal(results[0].sum_xb, other.sum_xb)

    def test_overflow_names_offending_draw(self, small_problem):
        pr = small_problem
        sample = TransientSample(np.array([[0.1], [600.0]]), KIND_CHAIN)
        with pytest.raises(QuadratureOverflowError, match="draw 1"):
            precompute(sample, pr["stack"], pr["mask"], pr["observed"])

    def test_empty_pattern_zero_point_sums(self, small_problem):
        from pprb.domain import PointPattern

        pr = small_problem
        sample = TransientSample(np.array([[0.3], [-0.2]]), KIND_CHAIN)
        cache = precompute(sample, pr["stack"], pr["mask"], PointPattern.empty())
        assert np.all(cache.sum_xb == 0.0)
        assert np.all(cache.q_window > 0.0)


class TestGibbsZeta:
    def test_moments_match_gamma(self):
        rng = np.random.default_rng(42)
        n, q = 474, 37.3
        draws = np.array([gibbs_zeta(A, B, n, q, rng) for _ in range(100_000)])
        shape, rate = A + n, B + q
        se = math.sqrt(shape / rate**2 / draws.size)
        assert abs(draws.mean() - shape / rate) < 3 * se

    def test_ks_against_analytic_gamma(self):
        rng = np.random.default_rng(7)
        n, q = 150, 12.0
        draws = np.array([gibbs_zeta(A, B, n, q, rng) for _ in range(10_000)])
        p = st.kstest(draws, st.gamma(a=A + n, scale=1.0 / (B + q)).cdf).pvalue
        assert p > 0.01

    def test_no_points_recovers_prior(self):
        rng = np.random.default_rng(8)
        draws = np.array([gibbs_zeta(2.0, 3.0, 0, 1e-12, rng) for _ in range(10_000)])
        p = st.kstest(draws, st.gamma(a=2.0, scale=1.0 / 3.0).cdf).pvalue
        assert p > 0.01

    def test_rejects_bad_arguments(self):
        rng = np.random.default_rng(0)
        for a, b, n, q in [(0.0, 1, 1, 1), (1, 0.0, 1, 1), (1, 1, -1, 1), (1, 1, 1, 0.0)]:
            with pytest.raises(ValueError):
                gibbs_zeta(a, b, n, q, rng)


def _degenerate_sample(beta, k):
    draw = np.asarray(beta, dtype=float)
    draws = np.tile(draw, (k, 1))
    return TransientSample(
        draws, KIND_GAUSSIAN, mle_mean=draw, mle_cov=np.eye(draw.size)
    )


class TestSecondStagePprb:
    def test_degenerate_sample_accepts_everything(self, small_problem):
        pr = small_problem
        n = pr["observed"].n
        sample = _degenerate_sample([0.5], 64)
        cache = precompute(sample, pr["stack"], pr["mask"], pr["observed"])
        post = second_stage_pprb(
            sample, cache, n, A, B, 5000, np.random.default_rng(3)
        )
        assert post.acceptance_rate == 1.0
        assert np.all(post.beta == 0.5)

    def test_degenerate_sample_zeta_is_conjugate_gamma(self, small_problem):
        pr = small_problem
        n = pr["observed"].n
        sample = _degenerate_sample([0.5], 64)
        cache = precompute(sample, pr["stack"], pr["mask"], pr["observed"])
        post = second_stage_pprb(
            sample, cache, n, A, B, 10_000, np.random.default_rng(4)
        )
        q = float(cache.q_window[0])
        zeta = np.exp(post.beta0)
        p = st.kstest(zeta, st.gamma(a=A + n, scale=1.0 / (B + q)).cdf).pvalue
        assert p > 0.005

    def test_draws_come_from_first_stage_support(self, pipeline):
        post = second_stage_pprb(
            pipeline["sample"],
            pipeline["cache"],
            pipeline["obs"].n,
            A,
            B,
            2000,
            np.random.default_rng(9),
        )
        assert post.source_index is not None
        assert np.array_equal(post.beta, pipeline["sample"].draws[post.source_index])
        assert 0.0 < post.acceptance_rate <= 1.0

    def test_reduced_ratio_equals_full_ratio(self, pipeline):
        audit = []
        second_stage_pprb(
            pipeline["sample"],
            pipeline["cache"],
            pipeline["obs"].n,
            A,
            B,
            1500,
            np.random.default_rng(10),
            audit=audit,
        )
        assert len(audit) == 1500
        gaps = np.array([abs(r - f) for r, f in audit])
        assert gaps.max() < 1e-10

    def test_cache_sample_length_mismatch(self, pipeline):
        short = IntermediateCache(
            pipeline["cache"].q_window[:100],
            pipeline["cache"].q_complement[:100],
            pipeline["cache"].sum_xb[:100],
        )
        with pytest.raises(StaleCacheError):
            second_stage_pprb(
                pipeline["sample"], short, 10, A, B, 50, np.random.default_rng(0)
            )

    def test_mean_matches_reweighted_gaussian_target(self, pipeline, grid_marginal):
        post = second_stage_pprb(
            pipeline["sample"],
            pipeline["cache"],
            pipeline["obs"].n,
            A,
            B,
            N_CHAIN,
            np.random.default_rng(11),
        )
        chain = post.beta[:, 0]
        se = batch_mean_se(chain)
        assert abs(chain.mean() - grid_marginal["resampler_mean"]) < 5 * se


class TestSecondStageGlme:
    def test_first_iteration_proposes_current_state(self, pipeline):
        post = second_stage_glme(
            pipeline["sample"],
            pipeline["cache"],
            pipeline["obs"].n,
            A,
            B,
            np.random.default_rng(12),
        )
        assert post.accepted[0] == 1
        assert post.source_index[0] == 0
        assert post.n_draws == N_CHAIN

    def test_requires_gaussian_sample(self, pipeline):
        chain_sample = TransientSample(pipeline["sample"].draws, KIND_CHAIN)
        with pytest.raises(ValueError, match="gaussian"):
            second_stage_glme(
                chain_sample,
                pipeline["cache"],
                pipeline["obs"].n,
                A,
                B,
                np.random.default_rng(0),
            )

    def test_degenerate_sample_zeta_is_conjugate_gamma(self, small_problem):
        pr = small_problem
        n = pr["observed"].n
        sample = _degenerate_sample([0.5], 10_000)
        cache = precompute(sample, pr["stack"], pr["mask"], pr["observed"])
        post = second_stage_glme(sample, cache, n, A, B, np.random.default_rng(13))
        assert post.acceptance_rate == 1.0
        q = float(cache.q_window[0])
        zeta = np.exp(post.beta0)
        p = st.kstest(zeta, st.gamma(a=A + n, scale=1.0 / (B + q)).cdf).pvalue
        assert p > 0.005

    def test_slope_moments_match_grid_integration(self, pipeline, grid_marginal):
        post = second_stage_glme(
            pipeline["sample"],
            pipeline["cache"],
            pipeline["obs"].n,
            A,
            B,
            np.random.default_rng(14),
        )
        chain = post.beta[:, 0]
        se = batch_mean_se(chain)
        assert abs(chain.mean() - grid_marginal["mean"]) < 4 * se
        assert chain.std(ddof=1) == pytest.approx(grid_marginal["sd"], rel=0.10)

    def test_zeta_mean_matches_grid_integration(self, pipeline, grid_marginal):
        post = second_stage_glme(
            pipeline["sample"],
            pipeline["cache"],
            pipeline["obs"].n,
            A,
            B,
            np.random.default_rng(15),
        )
        zeta = np.exp(post.beta0)
        se = batch_mean_se(zeta)
        assert abs(zeta.mean() - grid_marginal["zeta_mean"]) < 4 * se

    def test_acceptance_is_nontrivial(self, pipeline):
        post = second_stage_glme(
            pipeline["sample"],
            pipeline["cache"],
            pipeline["obs"].n,
            A,
            B,
            np.random.default_rng(16),
        )
        assert post.acceptance_rate > 0.2


class TestSingleStageBaseline:
    def test_zero_covariates_zeta_is_conjugate_gamma(self, small_problem):
        pr = small_problem
        grid = pr["grid"]
        stack0 = CovariateStack(grid, np.zeros((grid.n_cells, 1)), ("flat",))
        obs = pr["observed"]
        post = single_stage_baseline(
            obs, stack0, pr["mask"], A, B, 4000, 200, np.random.default_rng(17)
        )
        area = float(pr["mask"].sum()) * grid.cell_area
        zeta = np.exp(post.beta0)
        p = st.kstest(zeta, st.gamma(a=A + obs.n, scale=1.0 / (B + area)).cdf).pvalue
        assert p > 0.005

    def test_slope_mean_matches_grid_integration(self, pipeline, grid_marginal):
        post = single_stage_baseline(
            pipeline["obs"],
            pipeline["stack"],
            pipeline["mask"],
            A,
            B,
            6000,
            3000,
            np.random.default_rng(18),
        )
        chain = post.beta[:, 0]
        se = batch_mean_se(chain, n_batches=30)
        assert abs(chain.mean() - grid_marginal["mean"]) < 5 * se

    def test_post_burn_in_acceptance_in_band(self, pipeline):
        post = single_stage_baseline(
            pipeline["obs"],
            pipeline["stack"],
            pipeline["mask"],
            A,
            B,
            4000,
            2000,
            np.random.default_rng(19),
        )
        assert 0.15 <= post.acceptance_rate <= 0.35

    def test_complement_integrals_recorded_per_draw(self, pipeline):
        post = single_stage_baseline(
            pipeline["obs"],
            pipeline["stack"],
            pipeline["mask"],
            A,
            B,
            500,
            500,
            np.random.default_rng(20),
        )
        assert post.q_complement is not None
        stack, mask = pipeline["stack"], pipeline["mask"]
        for k in [0, 100, 499]:
            expect = quadrature_q(stack, post.beta[k], ~mask)
            assert post.q_complement[k] == pytest.approx(expect, rel=1e-12)

    def test_survives_overflowing_proposals(self, pipeline):
        post = single_stage_baseline(
            pipeline["obs"],
            pipeline["stack"],
            pipeline["mask"],
            A,
            B,
            300,
            0,
            np.random.default_rng(21),
            initial_step=400.0,
        )
        assert post.n_draws == 300
        assert np.all(np.isfinite(post.beta0))
        assert post.acceptance_rate < 0.5


class TestCacheOnlyRecursion:
    def test_second_stages_never_reintegrate(self, pipeline, monkeypatch):
        calls = {"quadrature": 0, "covariates": 0}
        real_quad = ms.quadrature_q
        real_cov = ms.covariates_at

        def quad_spy(*args, **kwargs):
            calls["quadrature"] += 1
            return real_quad(*args, **kwargs)

        def cov_spy(*args, **kwargs):
            calls["covariates"] += 1
            return real_cov(*args, **kwargs)

        monkeypatch.setattr(ms, "quadrature_q", quad_spy)
        monkeypatch.setattr(ms, "covariates_at", cov_spy)
        second_stage_pprb(
            pipeline["sample"], pipeline["cache"], pipeline["obs"].n, A, B, 500,
            np.random.default_rng(22),
        )
        second_stage_glme(
            pipeline["sample"], pipeline["cache"], pipeline["obs"].n, A, B,
            np.random.default_rng(23),
        )
        assert calls == {"quadrature": 0, "covariates": 0}

    def test_baseline_reintegrates_every_iteration(self, pipeline, monkeypatch):
        calls = {"quadrature": 0}
        real_quad = ms.quadrature_q

        def quad_spy(*args, **kwargs):
            calls["quadrature"] += 1
            return real_quad(*args, **kwargs)

        monkeypatch.setattr(ms, "quadrature_q", quad_spy)
        single_stage_baseline(
            pipeline["obs"], pipeline["stack"], pipeline["mask"], A, B, 50, 50,
            np.random.default_rng(24),
        )
        assert calls["quadrature"] >= 100


class TestPosteriorDraws:
    def test_length_validation(self):
        with pytest.raises(ValueError):
            PosteriorDraws(
                np.zeros(3), np.zeros((2, 1)), np.zeros(3), np.zeros(3, dtype=np.int8)
            )

    def test_acceptance_rate(self):
        post = PosteriorDraws(
            np.zeros(4), np.zeros((4, 1)), np.ones(4), np.array([1, 0, 1, 1])
        )
        assert post.acceptance_count == 3
        assert post.acceptance_rate == 0.75

    def test_with_timings_round_trip(self):
        post = PosteriorDraws(
            np.zeros(2), np.zeros((2, 1)), np.ones(2), np.array([1, 1])
        )
        timed = post.with_timings({"first": 1.5, "second": 0.5})
        assert timed.timings == {"first": 1.5, "second": 0.5}
        assert np.array_equal(timed.beta0, post.beta0)
