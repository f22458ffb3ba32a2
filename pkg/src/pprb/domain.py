"""Spatial geometry: grids, covariate rasters, observation windows, point patterns.

All types are immutable after construction and safe to share across threads.
Containment uses closed rectangles; lookup ties on interior cell edges resolve
to the cell with the larger index along each axis, so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfDomainError

__all__ = [
    "GridSpec",
    "CovariateStack",
    "WindowSet",
    "PointPattern",
    "build_grid",
    "classify_points",
    "covariates_at",
    "window_cell_mask",
]


@dataclass(frozen=True)
class GridSpec:
    """Regular grid of square cells tiling an axis-aligned bounding box.

    Cell ``l`` (row-major from the south-west corner) has center
    ``(x_min + (col + 0.5) * cell_size, y_min + (row + 0.5) * cell_size)``
    and area ``cell_size ** 2``.
    """

    x_min: float
    y_min: float
    n_cols: int
    n_rows: int
    cell_size: float

    def __post_init__(self):
        if self.n_cols < 1 or self.n_rows < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.n_cols}x{self.n_rows}")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")

    @property
    def n_cells(self):
        return self.n_cols * self.n_rows

    @property
    def cell_area(self):
        return self.cell_size * self.cell_size

    @property
    def x_max(self):
        return self.x_min + self.n_cols * self.cell_size

    @property
    def y_max(self):
        return self.y_min + self.n_rows * self.cell_size

    @property
    def bbox(self):
        """(x_min, y_min, x_max, y_max) of the full tiling."""
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def cell_centers(self):
        """(L, 2) array of cell centers, row-major from the south-west."""
        cx = self.x_min + (np.arange(self.n_cols) + 0.5) * self.cell_size
        cy = self.y_min + (np.arange(self.n_rows) + 0.5) * self.cell_size
        xx, yy = np.meshgrid(cx, cy)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def cell_index(self, locations):
        """Row-major cell index for each location.

        Interior-edge ties go to the larger index; the outer north/east
        boundary belongs to the last cell so the closed box is covered.
        """
        pts = np.atleast_2d(np.asarray(locations, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        inside = (x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max)
        if not inside.all():
            bad = pts[~inside][0]
            raise OutOfDomainError(f"location ({bad[0]}, {bad[1]}) outside grid box {self.bbox}")
        col = np.minimum(np.floor((x - self.x_min) / self.cell_size).astype(np.int64), self.n_cols - 1)
        row = np.minimum(np.floor((y - self.y_min) / self.cell_size).astype(np.int64), self.n_rows - 1)
        return row * self.n_cols + col

    def contains(self, locations):
        """Closed-box containment test, one bool per location."""
        pts = np.atleast_2d(np.asarray(locations, dtype=float))
        return (
            (pts[:, 0] >= self.x_min)
            & (pts[:, 0] <= self.x_max)
            & (pts[:, 1] >= self.y_min)
            & (pts[:, 1] <= self.y_max)
        )


@dataclass(frozen=True)
class CovariateStack:
    """Per-cell covariate values on a grid; lookup is piecewise constant."""

    grid: GridSpec
    values: np.ndarray
    names: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("covariate values must be a 2-d array (cells x covariates)")
        if values.shape[0] != self.grid.n_cells:
            raise ValueError(
                f"covariate rows ({values.shape[0]}) do not match grid cells ({self.grid.n_cells})"
            )
        if values.shape[1] < 1:
            raise ValueError("need at least one covariate column")
        if not np.isfinite(values).all():
            raise ValueError("covariate values must all be finite")
        names = tuple(self.names)
        if len(names) != values.shape[1]:
            raise ValueError("covariate names do not match column count")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)

    @property
    def n_covariates(self):
        return self.values.shape[1]

    def with_values(self, values, names):
        """Same grid, different covariate columns (used by basis expansion)."""
        return CovariateStack(grid=self.grid, values=values, names=tuple(names))


@dataclass(frozen=True)
class WindowSet:
    """Disjoint axis-aligned observation rectangles inside a domain box.

    Rectangles are closed; interiors must be pairwise disjoint and each
    rectangle must lie inside the domain box. Points on a shared edge are
    assigned to the lowest-index containing rectangle.
    """

    rectangles: np.ndarray
    domain_bbox: tuple

    def __post_init__(self):
        rects = np.asarray(self.rectangles, dtype=float)
        if rects.ndim != 2 or rects.shape[1] != 4:
            raise ValueError("rectangles must be an (J, 4) array of (x_min, y_min, x_max, y_max)")
        if rects.shape[0] < 1:
            raise ValueError("need at least one rectangle")
        if not (rects[:, 2] > rects[:, 0]).all() or not (rects[:, 3] > rects[:, 1]).all():
            raise ValueError("each rectangle needs x_max > x_min and y_max > y_min")
        bx0, by0, bx1, by1 = self.domain_bbox
        if (
            (rects[:, 0] < bx0).any()
            or (rects[:, 1] < by0).any()
            or (rects[:, 2] > bx1).any()
            or (rects[:, 3] > by1).any()
        ):
            raise ValueError("rectangles must lie inside the domain box")
        for j in range(rects.shape[0]):
            for k in range(j + 1, rects.shape[0]):
                if _interiors_overlap(rects[j], rects[k]):
                    raise ValueError(f"rectangles {j} and {k} overlap")
        rects.setflags(write=False)
        object.__setattr__(self, "rectangles", rects)
        object.__setattr__(self, "domain_bbox", tuple(float(v) for v in self.domain_bbox))

    @property
    def n_windows(self):
        return self.rectangles.shape[0]

    def total_area(self):
        r = self.rectangles
        return float(((r[:, 2] - r[:, 0]) * (r[:, 3] - r[:, 1])).sum())

    def window_index(self, locations):
        """Index of the containing rectangle per location, -1 if in none."""
        pts = np.atleast_2d(np.asarray(locations, dtype=float))
        out = np.full(pts.shape[0], -1, dtype=np.int64)
        for j, (x0, y0, x1, y1) in enumerate(self.rectangles):
            hit = (
                (out < 0)
                & (pts[:, 0] >= x0)
                & (pts[:, 0] <= x1)
                & (pts[:, 1] >= y0)
                & (pts[:, 1] <= y1)
            )
            out[hit] = j
        return out


def _interiors_overlap(a, b):
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


@dataclass(frozen=True)
class PointPattern:
    """Observed event locations, optionally tagged by containing window."""

    locations: np.ndarray
    window_index: np.ndarray | None = field(default=None)

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        locs.setflags(write=False)
        object.__setattr__(self, "locations", locs)
        if self.window_index is not None:
            idx = np.asarray(self.window_index, dtype=np.int64)
            if idx.shape != (locs.shape[0],):
                raise ValueError("window_index length must equal the point count")
            idx.setflags(write=False)
            object.__setattr__(self, "window_index", idx)

    @property
    def n(self):
        return self.locations.shape[0]

    @classmethod
    def empty(cls, tagged=False):
        locs = np.empty((0, 2))
        return cls(locs, np.empty(0, dtype=np.int64) if tagged else None)


def build_grid(x_min, y_min, n_cols, n_rows, cell_size):
    """Construct a grid of square cells; centers double as quadrature points."""
    return GridSpec(float(x_min), float(y_min), int(n_cols), int(n_rows), float(cell_size))


def classify_points(pattern, windows):
    """Split a pattern into the window-tagged observed part and a hidden count.

    Points on a rectangle edge count as inside (closed rectangles). Returns
    ``(observed, unobserved_count)`` with
    ``observed.n + unobserved_count == pattern.n``.
    """
    if pattern.n == 0:
        return PointPattern.empty(tagged=True), 0
    idx = windows.window_index(pattern.locations)
    seen = idx >= 0
    observed = PointPattern(pattern.locations[seen], idx[seen])
    return observed, int((~seen).sum())


def covariates_at(stack, locations):
    """Covariate row(s) of the cell containing each location.

    Returns a (p,) vector for a single location, else an (n, p) matrix.
    """
    single = np.asarray(locations, dtype=float).ndim == 1
    rows = stack.values[stack.grid.cell_index(locations)]
    return rows[0] if single else rows


def window_cell_mask(grid, windows):
    """Boolean mask over cells: True iff the cell center lies in some window.

    The complement identifies the unobserved-region cells.
    """
    centers = grid.cell_centers()
    return windows.window_index(centers) >= 0
