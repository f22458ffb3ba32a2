"""Synthetic-data study harness: covariate surfaces, ground-truth simulation,
fitting by every strategy, and deterministic report assembly.

The domain is scaled so the expected total count hits the configured target,
keeping instances at a realistic size regardless of grid resolution. Reports
are byte-identical for a fixed master seed across runs and thread counts;
wall-clock timings, which can never be, are quarantined in timings.csv.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import ess
from .domain import CovariateStack, WindowSet, build_grid, classify_points, window_cell_mask
from .errors import PprbError
from .io import write_json
from .likelihood import Coefficients, quadrature_q
from .multistage import DEFAULT_PRIOR_A, DEFAULT_PRIOR_B, STRATEGIES, run_pipeline
from .parallel import run_chunked
from .prediction import draw_n0, lewis_shedler

__all__ = [
    "StudyConfig",
    "SimulatedTruth",
    "gen_covariates",
    "simulate_truth",
    "run_study",
    "write_study_report",
    "DEFAULT_WINDOW_FRACTIONS",
]

# six disjoint rectangles covering about 55% of the unit square, given in
# fractional coordinates and snapped to cell boundaries at build time
DEFAULT_WINDOW_FRACTIONS = (
    (0.00, 0.00, 0.45, 0.35),
    (0.55, 0.00, 1.00, 0.20),
    (0.05, 0.45, 0.35, 0.80),
    (0.45, 0.40, 0.75, 0.65),
    (0.80, 0.35, 1.00, 0.70),
    (0.30, 0.85, 0.70, 1.00),
)


@dataclass(frozen=True)
class StudyConfig:
    """Study design: grid, truth, windows, strategies, chain sizes, seed.

    n_threads steers execution only; it is excluded from the config hash and
    the report so outputs stay identical across thread counts.
    """

    n_cols: int = 40
    n_rows: int = 40
    beta0_true: float = 5.0
    beta_true: tuple = (1.0, 2.0)
    target_total: float = 800.0
    window_fractions: tuple = DEFAULT_WINDOW_FRACTIONS
    strategies: tuple = STRATEGIES
    k: int = 10_000
    burn_in: int | None = None
    background_m: int | None = None
    n_replicates: int = 20
    seed: int = 0
    n_threads: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.strategies:
            raise ValueError("need at least one strategy")
        unknown = set(self.strategies) - set(STRATEGIES)
        if unknown:
            raise ValueError(f"unknown strategies: {sorted(unknown)}")
        if self.n_replicates < 1:
            raise ValueError("need at least one replicate")
        if self.k < 10:
            raise ValueError("k is too small to summarize")
        if self.target_total <= 0:
            raise ValueError("target_total must be positive")
        object.__setattr__(self, "beta_true", tuple(float(b) for b in self.beta_true))
        object.__setattr__(
            self,
            "window_fractions",
            tuple(tuple(float(v) for v in rect) for rect in self.window_fractions),
        )
        object.__setattr__(self, "strategies", tuple(self.strategies))

    def as_dict(self):
        """Hash- and report-stable view; execution knobs excluded."""
        return {
            "n_cols": self.n_cols,
            "n_rows": self.n_rows,
            "beta0_true": self.beta0_true,
            "beta_true": list(self.beta_true),
            "target_total": self.target_total,
            "window_fractions": [list(r) for r in self.window_fractions],
            "strategies": list(self.strategies),
            "k": self.k,
            "burn_in": self.burn_in,
            "background_m": self.background_m,
            "n_replicates": self.n_replicates,
            "seed": self.seed,
        }

    def digest(self):
        canonical = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def gen_covariates(grid, rng):
    """Two smooth standardized surfaces, each a sum of 3 Gaussian bumps with
    random centers and scales."""
    centers = grid.cell_centers()
    extent = min(grid.x_max - grid.x_min, grid.y_max - grid.y_min)
    columns = []
    for _ in range(2):
        surface = np.zeros(grid.n_cells)
        for _ in range(3):
            cx = rng.uniform(grid.x_min, grid.x_max)
            cy = rng.uniform(grid.y_min, grid.y_max)
            scale = rng.uniform(0.15, 0.40) * extent
            amplitude = rng.uniform(0.5, 1.5)
            d2 = (centers[:, 0] - cx) ** 2 + (centers[:, 1] - cy) ** 2
            surface += amplitude * np.exp(-0.5 * d2 / scale**2)
        surface = (surface - surface.mean()) / surface.std()
        columns.append(surface)
    return CovariateStack(grid, np.column_stack(columns), ("x1", "x2"))


def _snapped_windows(grid, fractions):
    rects = []
    for fx0, fy0, fx1, fy1 in fractions:
        c0 = round(fx0 * grid.n_cols)
        c1 = round(fx1 * grid.n_cols)
        r0 = round(fy0 * grid.n_rows)
        r1 = round(fy1 * grid.n_rows)
        rects.append(
            [
                grid.x_min + c0 * grid.cell_size,
                grid.y_min + r0 * grid.cell_size,
                grid.x_min + c1 * grid.cell_size,
                grid.y_min + r1 * grid.cell_size,
            ]
        )
    return WindowSet(np.asarray(rects, dtype=float), domain_bbox=grid.bbox)


@dataclass(frozen=True)
class SimulatedTruth:
    """One generated instance: geometry, covariates, and both patterns."""

    stack: CovariateStack
    windows: WindowSet
    mask: np.ndarray
    full: object
    observed: object
    n_hidden: int
    lambda_total: float

    @property
    def n_true(self):
        return self.full.n


def simulate_truth(config, rng=None):
    """Ground-truth realization under the config's coefficients.

    The cell size is first rescaled so the expected total count equals
    target_total exactly; windows snap to cell boundaries afterwards.
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    beta = np.asarray(config.beta_true, dtype=float)
    unit = build_grid(0.0, 0.0, config.n_cols, config.n_rows, 1.0 / config.n_cols)
    stack = gen_covariates(unit, rng)
    lam_unit = math.exp(config.beta0_true) * quadrature_q(stack, beta, None)
    scale = math.sqrt(config.target_total / lam_unit)
    grid = build_grid(0.0, 0.0, config.n_cols, config.n_rows, unit.cell_size * scale)
    stack = CovariateStack(grid, stack.values, stack.names)
    lam_total = math.exp(config.beta0_true) * quadrature_q(stack, beta, None)
    if lam_total < 1.0:
        warnings.warn("degenerate config: expected total count below 1")
    windows = _snapped_windows(grid, config.window_fractions)
    mask = window_cell_mask(grid, windows)
    full = lewis_shedler(stack, None, Coefficients(config.beta0_true, beta), rng)
    observed, n_hidden = classify_points(full, windows)
    return SimulatedTruth(
        stack=stack,
        windows=windows,
        mask=mask,
        full=full,
        observed=observed,
        n_hidden=n_hidden,
        lambda_total=lam_total,
    )


def _chain_summary(name, chain, true_value):
    chain = np.asarray(chain, dtype=float)
    q025, q500, q975 = np.quantile(chain, (0.025, 0.5, 0.975))
    return {
        "param": name,
        "mean": float(chain.mean()),
        "sd": float(chain.std(ddof=1)),
        "q025": float(q025),
        "q500": float(q500),
        "q975": float(q975),
        "ess": float(ess(chain)),
        "true": float(true_value),
        "covered": bool(q025 <= true_value <= q975),
    }


def _fit_one(strategy, truth, config, rng):
    posterior, cache = run_pipeline(
        strategy,
        truth.observed,
        truth.stack,
        truth.mask,
        k=config.k,
        rng=rng,
        burn_in=config.burn_in,
        background_m=config.background_m,
        n_threads=1,
    )
    names = ["beta0"] + [f"beta_{j + 1}" for j in range(len(config.beta_true))]
    chains = [posterior.beta0] + [posterior.beta[:, j] for j in range(posterior.n_params)]
    truths = [config.beta0_true] + list(config.beta_true)
    summaries = [_chain_summary(n, c, t) for n, c, t in zip(names, chains, truths)]

    abundance = draw_n0(posterior, cache, truth.observed.n, rng)
    totals = abundance.n_total
    a025, a975 = np.quantile(totals, (0.025, 0.975))
    abundance_row = {
        "n_observed": int(truth.observed.n),
        "n_true": int(truth.n_true),
        "mean": float(totals.mean()),
        "q025": float(a025),
        "q975": float(a975),
        "covered": bool(a025 <= truth.n_true <= a975),
    }
    return {
        "summaries": summaries,
        "abundance": abundance_row,
        "acceptance_rate": float(posterior.acceptance_rate),
        "timings": dict(posterior.timings or {}),
        "ess": {s["param"]: s["ess"] for s in summaries},
    }


def _run_replicate(index, child_seed, config):
    # stream 0 generates the truth; streams 1.. are keyed by the canonical
    # strategy order, so a strategy's chain is unchanged when others are
    # dropped from the config
    streams = np.random.SeedSequence(child_seed).spawn(1 + len(STRATEGIES))
    truth = simulate_truth(config, np.random.default_rng(streams[0]))
    row = {
        "replicate": index,
        "n_true": int(truth.n_true),
        "n_observed": int(truth.observed.n),
        "strategies": {},
    }
    for strategy in config.strategies:
        rng = np.random.default_rng(streams[1 + STRATEGIES.index(strategy)])
        try:
            row["strategies"][strategy] = _fit_one(strategy, truth, config, rng)
        except PprbError as err:
            row["strategies"][strategy] = {"error": f"{type(err).__name__}: {err}"}
    return row


def run_study(config):
    """All replicates and strategies; returns the report dictionary.

    Replicates are independent jobs with seeds derived from the master seed
    by index, so results do not depend on the execution schedule. Strategy
    failures are recorded in place of that strategy's results.
    """
    children = np.random.SeedSequence(config.seed).spawn(config.n_replicates)
    child_state = [int(c.generate_state(1)[0]) for c in children]
    rows = [None] * config.n_replicates

    def work(start, stop):
        for r in range(start, stop):
            rows[r] = _run_replicate(r, child_state[r], config)

    run_chunked(work, config.n_replicates, n_threads=config.n_threads, chunk=1)

    coverage = {}
    for strategy in config.strategies:
        per_param = {}
        n_ok = 0
        abundance_covered = 0
        for row in rows:
            result = row["strategies"][strategy]
            if "error" in result:
                continue
            n_ok += 1
            abundance_covered += int(result["abundance"]["covered"])
            for s in result["summaries"]:
                per_param.setdefault(s["param"], 0)
                per_param[s["param"]] += int(s["covered"])
        coverage[strategy] = {
            "replicates_succeeded": n_ok,
            "coefficient_coverage": per_param,
            "abundance_coverage": abundance_covered,
        }
    return {
        "config": config.as_dict(),
        "config_digest": config.digest(),
        "replicates": rows,
        "coverage": coverage,
    }


def _strip_timings(report):
    clean = json.loads(json.dumps(report))
    for row in clean["replicates"]:
        for result in row["strategies"].values():
            result.pop("timings", None)
    return clean


def write_study_report(report, out_dir):
    """report.json plus CSV tables; timings quarantined in timings.csv.

    Everything except timings.csv is byte-identical for a fixed seed.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "report.json", _strip_timings(report))

    with open(out_dir / "summaries.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["replicate", "strategy", "param", "mean", "sd", "q025", "q500",
             "q975", "ess", "true", "covered"]
        )
        for row in report["replicates"]:
            for strategy, result in row["strategies"].items():
                if "error" in result:
                    continue
                for s in result["summaries"]:
                    writer.writerow(
                        [row["replicate"], strategy, s["param"], repr(s["mean"]),
                         repr(s["sd"]), repr(s["q025"]), repr(s["q500"]),
                         repr(s["q975"]), repr(s["ess"]), repr(s["true"]),
                         int(s["covered"])]
                    )

    with open(out_dir / "abundance.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["replicate", "strategy", "n_observed", "n_true", "mean", "q025",
             "q975", "covered"]
        )
        for row in report["replicates"]:
            for strategy, result in row["strategies"].items():
                if "error" in result:
                    continue
                a = result["abundance"]
                writer.writerow(
                    [row["replicate"], strategy, a["n_observed"], a["n_true"],
                     repr(a["mean"]), repr(a["q025"]), repr(a["q975"]),
                     int(a["covered"])]
                )

    with open(out_dir / "timings.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replicate", "strategy", "param", "ess", "stage_seconds_json",
                         "seconds_per_ess"])
        for row in report["replicates"]:
            for strategy, result in row["strategies"].items():
                if "error" in result:
                    continue
                total = result["timings"].get("total", float("nan"))
                stage_json = json.dumps(result["timings"], sort_keys=True)
                for param, value in result["ess"].items():
                    writer.writerow(
                        [row["replicate"], strategy, param, repr(value), stage_json,
                         repr(total / value)]
                    )
