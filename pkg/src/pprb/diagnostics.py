"""Chain and point-pattern diagnostics.

Effective sample size uses the initial-positive-sequence truncation of the
autocorrelation sum. The L function uses Ripley's isotropic edge correction
for rectangles, pooling within-window pairs when observation is windowed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import PointPattern, classify_points
from .errors import InsufficientPointsError
from .parallel import run_chunked
from .prediction import lewis_shedler

__all__ = [
    "ess",
    "EssReport",
    "seconds_per_ess",
    "LFunctionCurve",
    "l_function",
    "PpcResult",
    "ppc_l_function",
]


def _autocovariance(x):
    n = x.size
    centered = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    transform = np.fft.rfft(centered, size)
    acov = np.fft.irfft(transform * np.conj(transform), size)[:n]
    return acov / n


def ess(chain):
    """Effective sample size K / (1 + 2 sum of autocorrelations), with the
    sum truncated at the first nonpositive even-lag pair sum and the result
    clamped to [1, K]. A constant chain returns 1.0.
    """
    x = np.asarray(chain, dtype=float).reshape(-1)
    n = x.size
    if n < 10:
        raise ValueError("need at least 10 samples to estimate ESS")
    if not np.all(np.isfinite(x)):
        raise ValueError("chain contains non-finite values")
    acov = _autocovariance(x)
    if acov[0] <= 0.0:
        return 1.0
    rho = acov / acov[0]
    tau = -1.0
    for m in range(n // 2):
        pair = rho[2 * m] + (rho[2 * m + 1] if 2 * m + 1 < n else 0.0)
        if pair <= 0.0:
            break
        tau += 2.0 * pair
    tau = max(tau, 1.0 / n)
    return float(min(max(n / tau, 1.0), float(n)))


@dataclass(frozen=True)
class EssReport:
    """Per-parameter ESS and wall-clock cost per effective draw."""

    names: tuple
    ess: np.ndarray
    wall_seconds: float
    method: str
    degenerate: tuple = ()

    @property
    def seconds_per_ess(self):
        return self.wall_seconds / self.ess

    def as_dict(self):
        return {
            "method": self.method,
            "wall_seconds": self.wall_seconds,
            "ess": {n: float(e) for n, e in zip(self.names, self.ess)},
            "seconds_per_ess": {
                n: float(s) for n, s in zip(self.names, self.seconds_per_ess)
            },
            "degenerate": list(self.degenerate),
        }


def seconds_per_ess(chains, names, wall_seconds, method=""):
    """ESS report for a (K, p) array of chains.

    wall_seconds is the total sampling cost that produced the chains; for
    multi-stage methods the caller sums the stage timings.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 1:
        chains = chains[:, None]
    names = tuple(names)
    if len(names) != chains.shape[1]:
        raise ValueError("one name per chain column required")
    if wall_seconds <= 0.0:
        raise ValueError("wall_seconds must be positive")
    values = np.array([ess(chains[:, j]) for j in range(chains.shape[1])])
    degenerate = tuple(
        names[j] for j in range(chains.shape[1]) if np.ptp(chains[:, j]) == 0.0
    )
    return EssReport(names, values, float(wall_seconds), method, degenerate)


def _edge_weights(points, rect, dist):
    """Inverse Ripley isotropic correction weights for one rectangle.

    dist[i, j] is the pair distance; the weight row i uses the circle center
    at points[i]. Valid while radii stay at most half the shorter side, so a
    circle can cross only its nearest vertical and horizontal edges.
    """
    x_min, y_min, x_max, y_max = rect
    d1 = np.minimum(points[:, 0] - x_min, x_max - points[:, 0])[:, None]
    d2 = np.minimum(points[:, 1] - y_min, y_max - points[:, 1])[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        a1 = np.arccos(np.clip(np.minimum(d1 / dist, 1.0), -1.0, 1.0))
        a2 = np.arccos(np.clip(np.minimum(d2 / dist, 1.0), -1.0, 1.0))
    a1 = np.nan_to_num(a1)
    a2 = np.nan_to_num(a2)
    corner_inside = dist ** 2 > d1 ** 2 + d2 ** 2
    fraction = np.where(
        corner_inside,
        0.75 - (a1 + a2) / (2.0 * math.pi),
        1.0 - (a1 + a2) / math.pi,
    )
    return 1.0 / fraction


@dataclass(frozen=True)
class LFunctionCurve:
    radii: np.ndarray
    l_values: np.ndarray
    n_points: int
    correction: str = "ripley-isotropic"


def _validate_radii(radii, rectangles):
    radii = np.asarray(radii, dtype=float).reshape(-1)
    if radii.size == 0 or (radii <= 0).any():
        raise ValueError("radii must be positive")
    if (np.diff(radii) <= 0).any():
        raise ValueError("radii must be strictly increasing")
    shortest = min(
        min(r[2] - r[0], r[3] - r[1]) for r in np.asarray(rectangles, dtype=float)
    )
    if radii[-1] > shortest / 2.0 + 1e-12:
        raise ValueError(
            f"max radius {radii[-1]:g} exceeds half the shortest window side {shortest / 2.0:g}"
        )
    return radii


def l_function(pattern, windows, radii):
    """Pooled L function over observation windows.

    K(r) sums isotropic-corrected within-window pair indicators, normalized
    by total window area and the squared pooled count; L = sqrt(K / pi).
    Points must be window-tagged.
    """
    if pattern.window_index is None:
        raise ValueError("points must carry window tags")
    rectangles = np.asarray(windows.rectangles, dtype=float)
    radii = _validate_radii(radii, rectangles)
    n = pattern.n
    if n < 2:
        raise InsufficientPointsError(f"need at least 2 points, have {n}")
    area = windows.total_area()
    accum = np.zeros(radii.size)
    for j, rect in enumerate(rectangles):
        pts = pattern.locations[pattern.window_index == j]
        if pts.shape[0] < 2:
            continue
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        weights = _edge_weights(pts, rect, dist)
        off_diagonal = np.isfinite(dist)
        d_flat = dist[off_diagonal]
        order = np.argsort(d_flat, kind="stable")
        d_sorted = d_flat[order]
        cum_weights = np.cumsum(weights[off_diagonal][order])
        pos = np.searchsorted(d_sorted, radii, side="right")
        accum += np.where(pos > 0, cum_weights[np.maximum(pos - 1, 0)], 0.0)
    k_values = area * accum / (n * n)
    return LFunctionCurve(radii, np.sqrt(k_values / math.pi), n)


@dataclass(frozen=True)
class PpcResult:
    """Observed L curve against a pointwise posterior predictive envelope."""

    radii: np.ndarray
    l_observed: np.ndarray
    l_lower: np.ndarray
    l_upper: np.ndarray
    outside: np.ndarray
    n_used: int
    n_skipped: int

    @property
    def fraction_inside(self):
        return 1.0 - self.outside.mean()


def ppc_l_function(
    posterior,
    stack,
    windows,
    observed,
    radii,
    rng,
    level=0.95,
    max_draws=None,
):
    """Posterior predictive check of the pooled L function.

    Each posterior draw simulates one realization by thinning over the
    window cells, keeps the points inside the windows, and contributes one
    L curve. Realizations with fewer than 2 window points are skipped and
    counted. The envelope is the pointwise (1 - level) / 2 and
    1 - (1 - level) / 2 quantile band.
    """
    from .domain import window_cell_mask
    from .likelihood import Coefficients

    if observed.window_index is None:
        observed, _ = classify_points(observed, windows)
    obs_curve = l_function(observed, windows, radii)
    mask = window_cell_mask(stack.grid, windows)

    indices = np.arange(posterior.n_draws)
    if max_draws is not None and max_draws < indices.size:
        indices = indices[np.linspace(0, indices.size - 1, max_draws).astype(np.int64)]
    streams = rng.spawn(indices.size)
    curves = [None] * indices.size

    def work(start, stop):
        for t in range(start, stop):
            k = indices[t]
            c = Coefficients(float(posterior.beta0[k]), posterior.beta[k])
            simulated = lewis_shedler(stack, mask, c, streams[t])
            inside, _ = classify_points(simulated, windows)
            if inside.n < 2:
                curves[t] = None
            else:
                curves[t] = l_function(inside, windows, radii).l_values

    run_chunked(work, indices.size)
    kept = [c for c in curves if c is not None]
    n_skipped = len(curves) - len(kept)
    if not kept:
        raise InsufficientPointsError("every simulated realization was empty or degenerate")
    stacked = np.vstack(kept)
    alpha = (1.0 - level) / 2.0
    lower = np.quantile(stacked, alpha, axis=0)
    upper = np.quantile(stacked, 1.0 - alpha, axis=0)
    outside = (obs_curve.l_values < lower) | (obs_curve.l_values > upper)
    return PpcResult(
        radii=np.asarray(radii, dtype=float),
        l_observed=obs_curve.l_values,
        l_lower=lower,
        l_upper=upper,
        outside=outside,
        n_used=len(kept),
        n_skipped=n_skipped,
    )
