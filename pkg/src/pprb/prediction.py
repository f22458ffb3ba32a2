"""Posterior prediction: unobserved counts, total abundance, and point
simulation by thinning.

Intensity is piecewise constant at the grid resolution, so the dominating
rate for thinning is exact (the max cell intensity) and retention uses the
containing cell's intensity directly. The simulation routine is spelled
"Lewis-Schedler" in some sources; the standard citation is Lewis-Shedler
thinning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import PointPattern
from .errors import QuadratureOverflowError, StaleCacheError
from .likelihood import EXP_GUARD
from .parallel import run_chunked

__all__ = [
    "AbundanceDraws",
    "draw_n0",
    "lewis_shedler",
    "posterior_point_simulation",
    "mean_count_raster",
]


@dataclass(frozen=True)
class AbundanceDraws:
    """Per-draw unobserved counts n0 and totals N = n0 + n_observed."""

    n0: np.ndarray
    n_observed: int

    def __post_init__(self):
        n0 = np.asarray(self.n0, dtype=np.int64).reshape(-1)
        if (n0 < 0).any():
            raise ValueError("counts must be nonnegative")
        n0.setflags(write=False)
        object.__setattr__(self, "n0", n0)

    @property
    def n_total(self):
        return self.n0 + self.n_observed

    def summary(self, quantiles=(0.025, 0.25, 0.5, 0.75, 0.975)):
        totals = self.n_total
        qs = np.quantile(totals, quantiles)
        return {
            "n_observed": int(self.n_observed),
            "mean": float(totals.mean()),
            "sd": float(totals.std(ddof=1)) if totals.size > 1 else 0.0,
            "quantiles": {str(q): float(v) for q, v in zip(quantiles, qs)},
        }


def _complement_integrals(posterior, cache):
    if posterior.source_index is not None:
        if cache is None:
            raise StaleCacheError("posterior references a cache that was not supplied")
        return cache.q_complement[posterior.source_index]
    if posterior.q_complement is not None:
        return posterior.q_complement
    raise StaleCacheError("posterior carries no complement integrals")


def draw_n0(posterior, cache, n_observed, rng):
    """Composition draws of the unobserved count, one per posterior draw.

    n0 given a draw is Poisson with rate exp(beta0) times the complement
    integral of that draw. Per-draw streams are spawned by index, so the
    result does not depend on thread count.
    """
    q_complement = _complement_integrals(posterior, cache)
    with np.errstate(divide="ignore"):
        log_rates = posterior.beta0 + np.log(q_complement)
    # rng.poisson rejects rates beyond the largest representable count
    guard = np.log(np.iinfo(np.int64).max)
    if (log_rates > guard).any():
        k = int(np.argmax(log_rates > guard))
        raise QuadratureOverflowError(
            None, float(log_rates[k]), draw_index=k, guard=float(guard)
        )
    rates = np.exp(log_rates)
    n_draws = rates.size
    streams = rng.spawn(n_draws)
    out = np.empty(n_draws, dtype=np.int64)

    def work(start, stop):
        for k in range(start, stop):
            out[k] = streams[k].poisson(rates[k])

    run_chunked(work, n_draws)
    return AbundanceDraws(out, int(n_observed))


def _cell_intensities(stack, c):
    log_lam = c.beta0 + stack.values @ c.beta
    worst = int(np.argmax(log_lam))
    if log_lam[worst] > EXP_GUARD:
        raise QuadratureOverflowError(cell_index=worst, exponent=float(log_lam[worst]))
    return np.exp(log_lam)


def lewis_shedler(stack, mask, c, rng):
    """Simulate one realization of the point process by thinning.

    Homogeneous candidates at the max masked-cell intensity are placed
    uniformly over the masked region, then kept with probability
    lambda(cell) / lambda_max.
    """
    grid = stack.grid
    cells = np.arange(grid.n_cells) if mask is None else np.flatnonzero(mask)
    if cells.size == 0:
        raise ValueError("masked region is empty")
    lam = _cell_intensities(stack, c)[cells]
    lam_max = float(lam.max())
    if lam_max == 0.0:
        return PointPattern.empty()
    area = cells.size * grid.cell_area
    n_candidates = rng.poisson(lam_max * area)
    if n_candidates == 0:
        return PointPattern.empty()
    chosen = rng.integers(0, cells.size, size=n_candidates)
    offsets = rng.random((n_candidates, 2))
    keep = rng.random(n_candidates) < lam[chosen] / lam_max
    chosen, offsets = chosen[keep], offsets[keep]
    col = cells[chosen] % grid.n_cols
    row = cells[chosen] // grid.n_cols
    x = grid.x_min + (col + offsets[:, 0]) * grid.cell_size
    y = grid.y_min + (row + offsets[:, 1]) * grid.cell_size
    return PointPattern(np.column_stack([x, y]))


def posterior_point_simulation(posterior, stack, mask, rng, max_draws=None):
    """One thinning realization per posterior draw, in draw order.

    max_draws evenly subsamples the posterior first (deterministically) to
    bound simulation cost on long chains.
    """
    from .likelihood import Coefficients

    indices = np.arange(posterior.n_draws)
    if max_draws is not None and max_draws < indices.size:
        indices = indices[np.linspace(0, indices.size - 1, max_draws).astype(np.int64)]
    streams = rng.spawn(indices.size)
    patterns = [None] * indices.size

    def work(start, stop):
        for t in range(start, stop):
            k = indices[t]
            c = Coefficients(float(posterior.beta0[k]), posterior.beta[k])
            patterns[t] = lewis_shedler(stack, mask, c, streams[t])

    run_chunked(work, indices.size)
    return patterns


def mean_count_raster(patterns, grid):
    """Per-cell mean count over realizations (a posterior-mean abundance map)."""
    if not patterns:
        raise ValueError("need at least one realization")
    totals = np.zeros(grid.n_cells)
    for pattern in patterns:
        if pattern.n:
            totals += np.bincount(grid.cell_index(pattern.locations), minlength=grid.n_cells)
    return totals / len(patterns)
