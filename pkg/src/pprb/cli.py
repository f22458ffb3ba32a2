"""Batch command line: simulate, fit, predict, diagnose, study.

One binary with subcommands. Each run owns an output directory: a lock file
rejects concurrent writers, and a manifest recording the command, resolved
configuration hash, seed, library versions, raw-byte input digests, output
paths, and wall timings is written before exit whether the run succeeds or
fails. Settings come from an optional JSON config file plus flags; flags win.

Exit codes are a stable contract: 0 ok, 2 bad input, 3 misaligned inputs,
4 sampler failure, 5 diagnostics failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .diagnostics import l_function, ppc_l_function, seconds_per_ess
from .domain import CovariateStack, classify_points, window_cell_mask
from .errors import (
    InsufficientPointsError,
    NotPositiveDefiniteError,
    OutOfDomainError,
    PprbError,
    QuadratureOverflowError,
    SelectionFailureError,
    SeparationError,
    SingularDesignError,
    StaleCacheError,
)
from .estimator import MultiStageIPP
from .io import (
    read_draws,
    read_json,
    read_points,
    read_raster,
    read_windows,
    write_abundance,
    write_draws,
    write_json,
    write_l_curve,
    write_points,
    write_raster,
    write_simulated_points,
    write_windows,
)
from .likelihood import quadrature_q
from .multistage import STRATEGIES, PosteriorDraws
from .parallel import run_chunked
from .prediction import draw_n0, mean_count_raster, posterior_point_simulation
from .simstudy import StudyConfig, run_study, simulate_truth, write_study_report

__all__ = ["main"]

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ALIGNMENT = 3
EXIT_SAMPLER = 4
EXIT_DIAGNOSTICS = 5

LOCK_NAME = ".pprb.lock"
MANIFEST_NAME = "manifest.json"

_STAGE_BY_ERROR = {
    SeparationError: "first",
    SelectionFailureError: "first",
    SingularDesignError: "first",
    NotPositiveDefiniteError: "first",
    QuadratureOverflowError: "intermediate",
    StaleCacheError: "second",
}


class CliError(Exception):
    """Terminal failure with a contract exit code."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return "sha256:" + digest.hexdigest()


def _config_hash(resolved):
    canonical = json.dumps(resolved, sort_keys=True)
    return "sha256:" + hashlib.sha256(canonical.encode()).hexdigest()


class RunContext:
    """Owns one output directory: lock, input digests, manifest."""

    def __init__(self, command, argv, out_dir):
        self.command = command
        self.argv = list(argv)
        self.out_dir = Path(out_dir)
        self.inputs = {}
        self.outputs = []
        self.resolved = {}
        self.seed = None
        self.threads = None
        self._lock_fd = None
        self._start = time.perf_counter()

    def acquire(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        lock = self.out_dir / LOCK_NAME
        try:
            self._lock_fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CliError(
                EXIT_INPUT,
                f"output directory {self.out_dir} is locked by another run"
                f" (remove {lock} if that run is dead)",
            )
        os.write(self._lock_fd, str(os.getpid()).encode())

    def register_input(self, path):
        """Digest the raw bytes of an input file; missing file is a user error."""
        path = Path(path)
        try:
            self.inputs[str(path)] = _sha256_file(path)
        except OSError as err:
            raise CliError(EXIT_INPUT, f"cannot read input {path}: {err}")
        return path

    def write_output(self, name, writer):
        """Run writer(path) and record the artifact path."""
        path = self.out_dir / name
        writer(path)
        self.outputs.append(name)
        return path

    def finish(self, exit_code, error=None):
        """Manifest is written on every owned run, success or failure."""
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "config_hash": _config_hash(self.resolved),
            "resolved_config": self.resolved,
            "seed": self.seed,
            "threads": self.threads,
            "versions": {
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pprb": __version__,
            },
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timings": {"total_seconds": time.perf_counter() - self._start},
            "status": "ok" if exit_code == EXIT_OK else "error",
            "exit_code": exit_code,
            "error": error,
        }
        try:
            write_json(self.out_dir / MANIFEST_NAME, manifest)
        finally:
            if self._lock_fd is not None:
                os.close(self._lock_fd)
                os.unlink(self.out_dir / LOCK_NAME)
                self._lock_fd = None


def _load_config(ns):
    """Config file is optional; flags override its keys."""
    if ns.config is None:
        return {}, None
    path = Path(ns.config)
    try:
        config = read_json(path)
    except OSError as err:
        raise CliError(EXIT_INPUT, f"cannot read config {path}: {err}")
    except json.JSONDecodeError as err:
        raise CliError(EXIT_INPUT, f"{path}: invalid JSON: {err}")
    if not isinstance(config, dict):
        raise CliError(EXIT_INPUT, f"{path}: config must be a JSON object")
    return config, path.parent


def _resolve(ns, config, key, default=None):
    value = getattr(ns, key, None)
    if value is not None:
        return value
    return config.get(key, default)


def _resolve_path(ns, config, key, base):
    """Paths given in the config file are relative to that file."""
    value = getattr(ns, key, None)
    if value is not None:
        return Path(value)
    if key in config and config[key] is not None:
        raw = config[key]
        if isinstance(raw, list):
            return [Path(base or ".") / p for p in raw]
        return Path(base or ".") / raw
    return None


def _load_stack(ctx, ns, config, base):
    paths = getattr(ns, "covariates", None)
    if paths is None:
        paths = _resolve_path(ns, config, "covariates", base)
    if not paths:
        raise CliError(EXIT_INPUT, "no covariate rasters given (--covariates)")
    if isinstance(paths, (str, Path)):
        paths = [paths]
    paths = [ctx.register_input(p) for p in paths]
    grids, columns = [], []
    for p in paths:
        try:
            grid, values = read_raster(p)
        except ValueError as err:
            raise CliError(EXIT_INPUT, str(err))
        grids.append(grid)
        columns.append(values)
    for p, grid in zip(paths[1:], grids[1:]):
        if grid != grids[0]:
            raise CliError(
                EXIT_ALIGNMENT, f"{p}: raster grid does not match {paths[0]}"
            )
    names = tuple(Path(p).stem for p in paths)
    return CovariateStack(grids[0], np.column_stack(columns), names)


def _load_points(ctx, ns, config, base, required=True):
    path = _resolve_path(ns, config, "points", base)
    if path is None:
        if required:
            raise CliError(EXIT_INPUT, "no point pattern given (--points)")
        return None
    ctx.register_input(path)
    try:
        return read_points(path)
    except ValueError as err:
        raise CliError(EXIT_INPUT, str(err))


def _load_windows(ctx, ns, config, base, bbox, required=False):
    path = _resolve_path(ns, config, "windows", base)
    if path is None:
        if required:
            raise CliError(EXIT_INPUT, "no observation windows given (--windows)")
        return None
    ctx.register_input(path)
    try:
        return read_windows(path, bbox)
    except ValueError as err:
        # windows parse fine but fall outside the raster's domain box
        if "domain box" in str(err):
            raise CliError(EXIT_ALIGNMENT, str(err))
        raise CliError(EXIT_INPUT, str(err))


def _load_draws(ctx, ns, config, base, required=True):
    path = _resolve_path(ns, config, "draws", base)
    if path is None:
        if required:
            raise CliError(EXIT_INPUT, "no posterior draws given (--draws)")
        return None
    ctx.register_input(path)
    try:
        return read_draws(path)
    except ValueError as err:
        raise CliError(EXIT_INPUT, str(err))


def _study_config(ns, config, *, n_replicates=None):
    merged = dict(config)
    for key in ("seed", "k", "burn_in", "background_m"):
        value = getattr(ns, key, None)
        if value is not None:
            merged[key] = value
    if getattr(ns, "threads", None) is not None:
        merged["n_threads"] = ns.threads
    if n_replicates is not None:
        merged["n_replicates"] = n_replicates
    allowed = set(StudyConfig.__dataclass_fields__)
    unknown = set(merged) - allowed
    if unknown:
        raise CliError(EXIT_INPUT, f"unknown config keys: {sorted(unknown)}")
    try:
        return StudyConfig(**merged)
    except (TypeError, ValueError) as err:
        raise CliError(EXIT_INPUT, f"invalid config: {err}")


def _grid_dict(grid):
    return {
        "x_min": grid.x_min,
        "y_min": grid.y_min,
        "n_cols": grid.n_cols,
        "n_rows": grid.n_rows,
        "cell_size": grid.cell_size,
    }


# ---------------------------------------------------------------- simulate

def cmd_simulate(ctx, ns):
    config, base = _load_config(ns)
    if ns.config is not None:
        ctx.register_input(ns.config)
    sim_keys = {
        "n_cols", "n_rows", "beta0_true", "beta_true", "target_total",
        "window_fractions", "seed",
    }
    unknown = set(config) - sim_keys
    if unknown:
        raise CliError(EXIT_INPUT, f"unknown config keys: {sorted(unknown)}")
    merged = dict(config)
    if ns.seed is not None:
        merged["seed"] = ns.seed
    try:
        cfg = StudyConfig(n_replicates=1, **merged)
    except (TypeError, ValueError) as err:
        raise CliError(EXIT_INPUT, f"invalid config: {err}")
    ctx.seed = cfg.seed
    ctx.resolved = {k: v for k, v in cfg.as_dict().items() if k in sim_keys}

    truth = simulate_truth(cfg)
    stack, grid = truth.stack, truth.stack.grid
    for j, name in enumerate(stack.names):
        ctx.write_output(
            f"{name}.asc", lambda p, j=j: write_raster(p, grid, stack.values[:, j])
        )
    ctx.write_output("windows.csv", lambda p: write_windows(p, truth.windows))
    ctx.write_output("points_full.csv", lambda p: write_points(p, truth.full))
    ctx.write_output("points_observed.csv", lambda p: write_points(p, truth.observed))
    truth_payload = {
        "beta0_true": cfg.beta0_true,
        "beta_true": list(cfg.beta_true),
        "lambda_total": truth.lambda_total,
        "n_true": int(truth.n_true),
        "n_observed": int(truth.observed.n),
        "n_hidden": int(truth.n_hidden),
        "seed": cfg.seed,
        "grid": _grid_dict(grid),
        "n_windows": truth.windows.n_windows,
    }
    ctx.write_output("truth.json", lambda p: write_json(p, truth_payload))
    return EXIT_OK


# --------------------------------------------------------------------- fit

def cmd_fit(ctx, ns):
    config, base = _load_config(ns)
    if ns.config is not None:
        ctx.register_input(ns.config)
    strategy = _resolve(ns, config, "strategy", "glm-e")
    if strategy not in STRATEGIES:
        raise CliError(EXIT_INPUT, f"unknown strategy {strategy!r}; use one of {STRATEGIES}")
    settings = {
        "strategy": strategy,
        "k": int(_resolve(ns, config, "k", 10_000)),
        "burn_in": _resolve(ns, config, "burn_in"),
        "background_m": _resolve(ns, config, "background_m"),
        "elm_q": _resolve(ns, config, "elm_q"),
        "elm_candidates": int(_resolve(ns, config, "elm_candidates", 32)),
        "seed": int(_resolve(ns, config, "seed", 0)),
    }
    ctx.seed = settings["seed"]
    ctx.threads = ns.threads
    ctx.resolved = settings

    stack = _load_stack(ctx, ns, config, base)
    pattern = _load_points(ctx, ns, config, base)
    windows = _load_windows(ctx, ns, config, base, stack.grid.bbox)

    est = MultiStageIPP(
        strategy=strategy,
        k=settings["k"],
        burn_in=settings["burn_in"],
        background_m=settings["background_m"],
        elm_q=settings["elm_q"],
        elm_candidates=settings["elm_candidates"],
        n_threads=ns.threads,
        random_state=settings["seed"],
    )
    try:
        est.fit(pattern, stack, windows)
    except OutOfDomainError as err:
        raise CliError(EXIT_ALIGNMENT, str(err))
    except PprbError as err:
        stage = _STAGE_BY_ERROR.get(type(err), "sampling")
        raise CliError(EXIT_SAMPLER, f"sampler failure in the {stage} stage: {err}")
    except ValueError as err:
        if "window" in str(err):
            raise CliError(EXIT_ALIGNMENT, str(err))
        raise CliError(EXIT_INPUT, str(err))

    posterior = est.posterior_
    ctx.write_output(
        "draws.csv",
        lambda p: write_draws(
            p, posterior.beta0, posterior.beta, posterior.lambda_total,
            posterior.accepted,
        ),
    )
    report = {
        "strategy": strategy,
        "k": posterior.n_draws,
        "n_observed": est.n_observed_,
        "coefficients": est.summary(),
        "acceptance_rate": posterior.acceptance_rate,
        "timings": posterior.timings,
    }
    report.update(est.ess_report().as_dict())
    if est.basis_ is not None:
        report["basis"] = {"kind": "elm-gelu", "names": list(est.basis_.names)}
    ctx.write_output("report.json", lambda p: write_json(p, report))
    return EXIT_OK


# ----------------------------------------------------------------- predict

def cmd_predict(ctx, ns):
    config, base = _load_config(ns)
    if ns.config is not None:
        ctx.register_input(ns.config)
    region = _resolve(ns, config, "region", "s0")
    if region not in ("s0", "all"):
        raise CliError(EXIT_INPUT, f"unknown region {region!r}; use 's0' or 'all'")
    seed = int(_resolve(ns, config, "seed", 0))
    max_sims = int(_resolve(ns, config, "max_sims", 100))
    ctx.seed = seed
    ctx.threads = ns.threads
    ctx.resolved = {"region": region, "seed": seed, "max_sims": max_sims}

    beta0, beta, lam_total, accepted = _load_draws(ctx, ns, config, base)
    stack = _load_stack(ctx, ns, config, base)
    grid = stack.grid
    if beta.shape[1] != stack.n_covariates:
        raise CliError(
            EXIT_ALIGNMENT,
            f"draws carry {beta.shape[1]} slopes but the stack has"
            f" {stack.n_covariates} covariates",
        )

    if region == "s0":
        windows = _load_windows(ctx, ns, config, base, grid.bbox, required=True)
        mask = ~window_cell_mask(grid, windows)
        pattern = _load_points(ctx, ns, config, base, required=False)
        n_observed = 0 if pattern is None else pattern.n
    else:
        # fresh-process prediction over the whole domain; nothing is observed
        mask = None
        n_observed = 0

    k = beta0.size
    q_region = np.empty(k)

    def integrate(start, stop):
        for i in range(start, stop):
            q_region[i] = quadrature_q(stack, beta[i], mask)

    try:
        run_chunked(integrate, k, n_threads=ns.threads)
        posterior = PosteriorDraws(
            beta0, beta, lam_total, accepted, q_complement=q_region
        )
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        abundance = draw_n0(posterior, None, n_observed, rng)
        if mask is None or mask.any():
            patterns = posterior_point_simulation(
                posterior, stack, mask, rng, max_draws=max_sims
            )
        else:
            patterns = []
    except PprbError as err:
        raise CliError(EXIT_SAMPLER, f"sampler failure in the prediction stage: {err}")

    ctx.write_output(
        "abundance.csv", lambda p: write_abundance(p, abundance.n0, n_observed)
    )
    payload = abundance.summary()
    payload.update({"region": region, "n_draws": int(k)})
    ctx.write_output("abundance.json", lambda p: write_json(p, payload))
    ctx.write_output(
        "simulated_points.csv", lambda p: write_simulated_points(p, patterns)
    )
    mean = (
        mean_count_raster(patterns, grid) if patterns else np.zeros(grid.n_cells)
    )
    ctx.write_output("mean_count.asc", lambda p: write_raster(p, grid, mean))
    return EXIT_OK


# ---------------------------------------------------------------- diagnose

def _default_radii(windows):
    shortest = min(
        min(x1 - x0, y1 - y0) for x0, y0, x1, y1 in windows.rectangles
    )
    r_max = shortest / 2.0
    return np.linspace(r_max / 20.0, r_max, 20)


def cmd_diagnose(ctx, ns):
    config, base = _load_config(ns)
    if ns.config is not None:
        ctx.register_input(ns.config)
    do_ess = ns.ess or bool(config.get("ess", False))
    do_lf = ns.lfunction or bool(config.get("lfunction", False))
    if not (do_ess or do_lf):
        raise CliError(EXIT_INPUT, "nothing to do: pass --ess and/or --lfunction")
    seed = int(_resolve(ns, config, "seed", 0))
    ctx.seed = seed
    ctx.threads = ns.threads
    ctx.resolved = {"ess": do_ess, "lfunction": do_lf, "seed": seed}

    if do_ess:
        beta0, beta, _, _ = _load_draws(ctx, ns, config, base)
        chains = np.column_stack([beta0, beta])
        names = ("beta0",) + tuple(f"beta_{j}" for j in range(1, beta.shape[1] + 1))
        try:
            # wall time is unknown after the fact; report raw ESS
            report = seconds_per_ess(chains, names, 1.0, method="from-draws")
        except ValueError as err:
            raise CliError(EXIT_INPUT, str(err))
        payload = {
            "n_draws": int(beta0.size),
            "ess": report.as_dict()["ess"],
            "degenerate": list(report.degenerate),
        }
        ctx.write_output("ess.json", lambda p: write_json(p, payload))

    if do_lf:
        pattern = _load_points(ctx, ns, config, base)
        draws = _load_draws(ctx, ns, config, base, required=False)
        has_stack = (
            getattr(ns, "covariates", None) is not None
            or config.get("covariates") is not None
        )
        stack = _load_stack(ctx, ns, config, base) if has_stack else None
        if stack is not None:
            bbox = stack.grid.bbox
        else:
            # geometry-only check: the windows file defines its own domain
            path = _resolve_path(ns, config, "windows", base)
            if path is None:
                raise CliError(EXIT_INPUT, "no observation windows given (--windows)")
            bbox = _windows_hull(path)
        windows = _load_windows(ctx, ns, config, base, bbox, required=True)
        radii = _default_radii(windows)
        try:
            if draws is not None and stack is not None:
                beta0, beta, lam_total, accepted = draws
                posterior = PosteriorDraws(beta0, beta, lam_total, accepted)
                rng = np.random.default_rng(np.random.SeedSequence(seed))
                result = ppc_l_function(
                    posterior, stack, windows, pattern, radii, rng,
                    max_draws=int(_resolve(ns, config, "max_sims", 100)),
                )
                curve = (result.radii, result.l_observed,
                         result.l_lower, result.l_upper)
                gof = {
                    "fraction_inside": result.fraction_inside,
                    "n_used": result.n_used,
                    "n_skipped": result.n_skipped,
                }
                ctx.write_output("gof.json", lambda p: write_json(p, gof))
            else:
                observed = pattern
                if observed.window_index is None:
                    observed, _ = classify_points(observed, windows)
                curve_obj = l_function(observed, windows, radii)
                nan = np.full(radii.size, np.nan)
                curve = (radii, curve_obj.l_values, nan, nan)
        except InsufficientPointsError as err:
            raise CliError(EXIT_DIAGNOSTICS, str(err))
        except (OutOfDomainError, ValueError) as err:
            raise CliError(EXIT_ALIGNMENT, str(err))
        except PprbError as err:
            raise CliError(EXIT_SAMPLER, f"sampler failure in the prediction stage: {err}")
        ctx.write_output("l_function.csv", lambda p: write_l_curve(p, *curve))
    return EXIT_OK


def _windows_hull(path):
    """Union box of all window rows, used as the domain when no raster is given."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            rows = [[float(v) for v in row] for row in reader if row]
    except (OSError, ValueError) as err:
        raise CliError(EXIT_INPUT, f"cannot read windows {path}: {err}")
    if not rows:
        raise CliError(EXIT_INPUT, f"{path}: no windows")
    arr = np.asarray(rows)
    return (
        float(arr[:, 0].min()), float(arr[:, 1].min()),
        float(arr[:, 2].max()), float(arr[:, 3].max()),
    )


# ------------------------------------------------------------------- study

def cmd_study(ctx, ns):
    if ns.config is None:
        raise CliError(EXIT_INPUT, "study needs a --config file")
    config, _ = _load_config(ns)
    ctx.register_input(ns.config)
    cfg = _study_config(ns, config)
    ctx.seed = cfg.seed
    ctx.threads = cfg.n_threads
    ctx.resolved = cfg.as_dict()

    try:
        report = run_study(cfg)
    except PprbError as err:
        raise CliError(EXIT_SAMPLER, f"sampler failure in the study: {err}")
    write_study_report(report, ctx.out_dir)
    ctx.outputs.extend(
        ["report.json", "summaries.csv", "abundance.csv", "timings.csv"]
    )
    failures = [
        f"replicate {row['replicate']} {strategy}: {result['error']}"
        for row in report["replicates"]
        for strategy, result in row["strategies"].items()
        if "error" in result
    ]
    if failures:
        raise CliError(
            EXIT_SAMPLER,
            "study finished with failed runs:\n  " + "\n  ".join(failures),
        )
    return EXIT_OK


# -------------------------------------------------------------------- main

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="pprb",
        description="Multi-stage Bayesian inference for spatial Poisson point processes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--seed", type=int, help="master RNG seed (default 0)")
        p.add_argument("--threads", type=int,
                       help="thread cap (default: PPRB_THREADS, then CPU count)")
        p.add_argument("--out-dir", default=".",
                       help="output directory (default: current directory)")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p)

    p = sub.add_parser("fit", help="fit a point pattern by one strategy")
    common(p)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--points", help="observed point CSV")
    p.add_argument("--covariates", nargs="+", help="covariate rasters (ESRI ASCII)")
    p.add_argument("--windows", help="observation window CSV")
    p.add_argument("--k", type=int, help="posterior draws to keep (default 10000)")
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--background-m", type=int, dest="background_m",
                   help="background points for the first stage (default 10n)")
    p.add_argument("--elm-q", type=int, dest="elm_q",
                   help="hidden units; omit for raw covariates")
    p.add_argument("--elm-candidates", type=int, dest="elm_candidates")

    p = sub.add_parser("predict", help="abundance and point realizations from draws")
    common(p)
    p.add_argument("--draws", help="posterior draws CSV from fit")
    p.add_argument("--covariates", nargs="+")
    p.add_argument("--windows")
    p.add_argument("--points", help="observed points; sets n for N = n0 + n")
    p.add_argument("--region", choices=("s0", "all"),
                   help="s0: outside the windows; all: whole domain")
    p.add_argument("--max-sims", type=int, dest="max_sims",
                   help="point realizations to keep (default 100)")

    p = sub.add_parser("diagnose", help="chain and pattern diagnostics")
    common(p)
    p.add_argument("--ess", action="store_true", help="effective sample sizes")
    p.add_argument("--lfunction", action="store_true",
                   help="L-function with posterior predictive envelope")
    p.add_argument("--draws")
    p.add_argument("--points")
    p.add_argument("--windows")
    p.add_argument("--covariates", nargs="+")
    p.add_argument("--max-sims", type=int, dest="max_sims")

    p = sub.add_parser("study", help="full simulation study")
    common(p)
    p.add_argument("--k", type=int)
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--background-m", type=int, dest="background_m")

    return parser


_HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "diagnose": cmd_diagnose,
    "study": cmd_study,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _build_parser()
    ns = parser.parse_args(argv)
    if ns.threads is None and os.environ.get("PPRB_THREADS"):
        # resolved lazily by the parallel layer; recorded here for the manifest
        try:
            ns.threads = int(os.environ["PPRB_THREADS"])
        except ValueError:
            print("error: PPRB_THREADS must be an integer", file=sys.stderr)
            return EXIT_INPUT

    ctx = RunContext(ns.command, argv, ns.out_dir)
    try:
        ctx.acquire()
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code

    code, error = EXIT_OK, None
    try:
        code = _HANDLERS[ns.command](ctx, ns)
    except CliError as err:
        code, error = err.code, str(err)
    except OutOfDomainError as err:
        code, error = EXIT_ALIGNMENT, str(err)
    except InsufficientPointsError as err:
        code, error = EXIT_DIAGNOSTICS, str(err)
    except PprbError as err:
        code, error = EXIT_SAMPLER, str(err)
    except BaseException as err:
        code, error = 1, f"internal error: {err!r}"
        raise
    finally:
        ctx.finish(code, error)
    if error is not None:
        print(f"error: {error}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
