"""Shared builders for sampler tests: a small windowed problem with known
truth, simulated by per-cell Poisson counts (the piecewise-constant process
placed uniformly within each cell), independent of the package's thinning
simulator.
"""

import numpy as np
import pytest

from pprb.domain import (
    CovariateStack,
    PointPattern,
    WindowSet,
    build_grid,
    classify_points,
    window_cell_mask,
)


def standardized_surface(grid, rng=None, kind="coords"):
    """Smooth standardized covariate columns on the grid (mean 0, sd 1)."""
    centers = grid.cell_centers()
    x, y = centers[:, 0], centers[:, 1]
    if kind == "coords":
        cols = [x, np.sin(2.0 * np.pi * y) + 0.5 * x * y]
    else:
        cols = [rng.normal(size=grid.n_cells)]
    values = np.column_stack(cols)
    values = (values - values.mean(axis=0)) / values.std(axis=0)
    return values


def cell_poisson_pattern(stack, beta0, beta, rng):
    """Simulate the process over the full grid one cell at a time."""
    grid = stack.grid
    rates = np.exp(beta0 + stack.values @ np.asarray(beta, dtype=float))
    counts = rng.poisson(rates * grid.cell_area)
    total = int(counts.sum())
    if total == 0:
        return PointPattern.empty()
    cells = np.repeat(np.arange(grid.n_cells), counts)
    offsets = rng.random((total, 2))
    col = cells % grid.n_cols
    row = cells // grid.n_cols
    x = grid.x_min + (col + offsets[:, 0]) * grid.cell_size
    y = grid.y_min + (row + offsets[:, 1]) * grid.cell_size
    return PointPattern(np.column_stack([x, y]))


def make_problem(seed=11, beta=(0.8,), target_n=150, n_cols=20, n_rows=20):
    """Windowed instance on the unit square with roughly target_n window points.

    Returns a dict with the stack, windows, mask, full and observed patterns,
    and the generating coefficients.
    """
    rng = np.random.default_rng(seed)
    grid = build_grid(0.0, 0.0, n_cols, n_rows, 1.0 / n_cols)
    beta = np.asarray(beta, dtype=float)
    values = standardized_surface(grid)[:, : beta.size]
    stack = CovariateStack(grid, values, tuple(f"x{j + 1}" for j in range(beta.size)))
    windows = WindowSet(
        np.array(
            [
                [0.0, 0.0, 0.5, 0.5],
                [0.5, 0.5, 1.0, 1.0],
                [0.55, 0.05, 0.9, 0.4],
            ]
        ),
        domain_bbox=grid.bbox,
    )
    mask = window_cell_mask(grid, windows)
    q_window = float(np.sum(np.exp(values @ beta)[mask]) * grid.cell_area)
    beta0 = float(np.log(target_n / q_window))
    full = cell_poisson_pattern(stack, beta0, beta, rng)
    observed, n_hidden = classify_points(full, windows)
    return {
        "grid": grid,
        "stack": stack,
        "windows": windows,
        "mask": mask,
        "full": full,
        "observed": observed,
        "n_hidden": n_hidden,
        "beta0": beta0,
        "beta": beta,
    }


def batch_mean_se(chain, n_batches=40):
    """Batch-means standard error of the chain mean."""
    chain = np.asarray(chain, dtype=float)
    size = chain.size // n_batches
    means = chain[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return means.std(ddof=1) / np.sqrt(n_batches)


@pytest.fixture(scope="session")
def small_problem():
    return make_problem(seed=11, beta=(0.8,), target_n=150)
