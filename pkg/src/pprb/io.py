"""File formats: ESRI ASCII rasters, point/window/draw CSVs, JSON reports.

Writers emit `repr`-precision floats so a write/read round trip is exact and
reruns with the same inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .domain import CovariateStack, GridSpec, PointPattern, WindowSet

__all__ = [
    "read_raster",
    "write_raster",
    "read_covariates",
    "read_points",
    "write_points",
    "read_windows",
    "write_windows",
    "write_draws",
    "read_draws",
    "write_transient",
    "read_transient",
    "write_abundance",
    "read_abundance",
    "write_simulated_points",
    "write_l_curve",
    "write_json",
    "read_json",
]

_RASTER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def _fmt(v):
    return repr(float(v))


def read_raster(path):
    """Read one ESRI ASCII grid; returns (grid, values) with values row-major
    from the south-west corner (the file stores the north row first).

    NODATA cells are rejected: covariates must cover the whole grid box.
    """
    path = Path(path)
    header = {}
    with open(path) as fh:
        lines = fh.read().split("\n")
    row = 0
    while row < len(lines):
        parts = lines[row].split()
        if len(parts) == 2 and parts[0].lower() in _RASTER_KEYS:
            header[parts[0].lower()] = parts[1]
            row += 1
        else:
            break
    for key in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize"):
        if key not in header:
            raise ValueError(f"{path}: raster header missing '{key}'")
    n_cols = int(header["ncols"])
    n_rows = int(header["nrows"])
    tokens = " ".join(lines[row:]).split()
    values = np.asarray(tokens, dtype=float) if tokens else np.empty(0)
    if values.size != n_cols * n_rows:
        raise ValueError(
            f"{path}: expected {n_cols * n_rows} values, found {values.size}"
        )
    values = values.reshape(n_rows, n_cols)
    if "nodata_value" in header:
        nodata = float(header["nodata_value"])
        if (values == nodata).any():
            raise ValueError(f"{path}: NODATA cells present; covariates must cover the grid")
    if not np.isfinite(values).all():
        raise ValueError(f"{path}: non-finite covariate values")
    grid = GridSpec(
        x_min=float(header["xllcorner"]),
        y_min=float(header["yllcorner"]),
        n_cols=n_cols,
        n_rows=n_rows,
        cell_size=float(header["cellsize"]),
    )
    return grid, np.flipud(values).ravel()


def write_raster(path, grid, cell_values, nodata=-9999.0):
    """Write per-cell values (row-major from the south-west) as ESRI ASCII."""
    values = np.asarray(cell_values, dtype=float).reshape(grid.n_rows, grid.n_cols)
    with open(path, "w") as fh:
        fh.write(f"ncols {grid.n_cols}\n")
        fh.write(f"nrows {grid.n_rows}\n")
        fh.write(f"xllcorner {_fmt(grid.x_min)}\n")
        fh.write(f"yllcorner {_fmt(grid.y_min)}\n")
        fh.write(f"cellsize {_fmt(grid.cell_size)}\n")
        fh.write(f"NODATA_value {_fmt(nodata)}\n")
        for row in np.flipud(values):
            fh.write(" ".join(_fmt(v) for v in row) + "\n")


def read_covariates(paths, names=None):
    """Stack one raster per covariate; all rasters must share the same grid."""
    paths = [Path(p) for p in paths]
    if not paths:
        raise ValueError("need at least one raster path")
    grid, first = read_raster(paths[0])
    columns = [first]
    for p in paths[1:]:
        other_grid, values = read_raster(p)
        if other_grid != grid:
            raise ValueError(f"{p}: raster grid does not match {paths[0]}")
        columns.append(values)
    if names is None:
        names = tuple(p.stem for p in paths)
    return CovariateStack(grid, np.column_stack(columns), tuple(names))


def read_points(path):
    """Read a point CSV with header ``x,y`` and optional ``window`` column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty points file")
        header = [h.strip().lower() for h in header]
        if header[:2] != ["x", "y"]:
            raise ValueError(f"{path}: points header must start with 'x,y'")
        tagged = len(header) >= 3 and header[2] == "window"
        xs, ys, ws = [], [], []
        for row in reader:
            if not row:
                continue
            xs.append(float(row[0]))
            ys.append(float(row[1]))
            if tagged:
                ws.append(int(row[2]))
    locs = np.column_stack([xs, ys]) if xs else np.empty((0, 2))
    return PointPattern(locs, np.asarray(ws, dtype=np.int64) if tagged else None)


def write_points(path, pattern):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if pattern.window_index is not None:
            writer.writerow(["x", "y", "window"])
            for (x, y), w in zip(pattern.locations, pattern.window_index):
                writer.writerow([_fmt(x), _fmt(y), int(w)])
        else:
            writer.writerow(["x", "y"])
            for x, y in pattern.locations:
                writer.writerow([_fmt(x), _fmt(y)])


def read_windows(path, domain_bbox):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["x_min", "y_min", "x_max", "y_max"]
        if header is None or [h.strip().lower() for h in header] != expected:
            raise ValueError(f"{path}: windows header must be 'x_min,y_min,x_max,y_max'")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no windows")
    return WindowSet(np.asarray(rows), domain_bbox)


def write_windows(path, windows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_min", "y_min", "x_max", "y_max"])
        for rect in windows.rectangles:
            writer.writerow([_fmt(v) for v in rect])


def write_draws(path, beta0, beta, lambda_total, accepted):
    """Posterior draw table: ``beta0,beta_1..beta_p,lambda_total,accepted``."""
    beta = np.atleast_2d(beta)
    p = beta.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["beta0"] + [f"beta_{j}" for j in range(1, p + 1)]
                        + ["lambda_total", "accepted"])
        for k in range(beta.shape[0]):
            writer.writerow(
                [_fmt(beta0[k])]
                + [_fmt(v) for v in beta[k]]
                + [_fmt(lambda_total[k]), int(accepted[k])]
            )


def read_draws(path):
    """Inverse of write_draws; returns (beta0, beta, lambda_total, accepted)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "beta0" or header[-1] != "accepted":
            raise ValueError(f"{path}: not a draws file")
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: draws file has no rows")
    data = np.asarray([[float(v) for v in row] for row in rows])
    return data[:, 0], data[:, 1:-2], data[:, -2], data[:, -1].astype(np.int64)


def write_transient(path, draws, names):
    """First-stage draws, one per row, header = coefficient names."""
    draws = np.atleast_2d(draws)
    if draws.shape[1] != len(names):
        raise ValueError("coefficient names do not match draw width")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names))
        for row in draws:
            writer.writerow([_fmt(v) for v in row])


def read_transient(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty transient file")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: transient file has no draws")
    return np.asarray(rows), tuple(header)


def write_abundance(path, n0, n_observed):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "n0", "N"])
        for k, v in enumerate(n0, start=1):
            writer.writerow([k, int(v), int(v) + int(n_observed)])


def read_abundance(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["k", "n0", "N"]:
            raise ValueError(f"{path}: not an abundance file")
        rows = [[int(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    return data[:, 1], data[:, 2]


def write_simulated_points(path, patterns):
    """Long-format realizations: ``k,x,y`` with k the 1-based draw index."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "x", "y"])
        for k, pattern in enumerate(patterns, start=1):
            for x, y in pattern.locations:
                writer.writerow([k, _fmt(x), _fmt(y)])


def write_l_curve(path, radii, l_obs, l_lo, l_hi):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "L_obs", "L_lo", "L_hi"])
        for vals in zip(radii, l_obs, l_lo, l_hi):
            writer.writerow([_fmt(v) for v in vals])


def write_json(path, payload):
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
