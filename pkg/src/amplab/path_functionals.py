"""Time integrals of spatial suprema and the paths that realize them.

For ``W(x, tau)`` continuous in ``x`` the supremum over continuous paths of
``int_0^t W(x(tau), tau) dtau`` equals ``int_0^t sup_x W(x, tau) dtau``.  The
left side is approached constructively by dwelling at per-slice maximizers
and hopping between them along torus geodesics in short transit windows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .field_model import FieldModel, TorusGrid

__all__ = [
    "TimeGrid",
    "DiscretePath",
    "SupIntegral",
    "PathBounds",
    "sup_time_integral",
    "monomial_function",
    "bounds_and_centering",
    "construct_epsilon_path",
    "path_integral",
    "path_positions",
    "grid_argmax",
    "polish_maxima",
]

Functional = Callable[[np.ndarray, np.ndarray], np.ndarray]

TIE_TOL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    slices: int

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.slices < 1:
            raise ValueError("need at least one time slice")

    @property
    def width(self) -> float:
        return self.horizon / self.slices

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.slices + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.slices) + 0.5) * self.width

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.slices * factor)


@dataclass(frozen=True, eq=False)
class DiscretePath:
    """Continuous torus path through ``points`` at increasing ``times``.

    Between breakpoints the path follows the shortest geodesic, so wrapping
    around the torus never produces a jump.
    """

    times: np.ndarray
    points: np.ndarray
    lengths: tuple[float, ...]

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        points = np.asarray(self.points, dtype=float).reshape(len(times), -1)
        if np.any(np.diff(times) < 0):
            raise ValueError("path times must be non-decreasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1]

    def at(self, tau) -> np.ndarray:
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        lengths = np.asarray(self.lengths)
        j = np.clip(np.searchsorted(self.times, tau, side="right") - 1, 0, len(self.times) - 2)
        span = self.times[j + 1] - self.times[j]
        frac = np.divide(tau - self.times[j], span, out=np.zeros_like(tau), where=span > 0)
        delta = self.points[j + 1] - self.points[j]
        delta -= lengths * np.round(delta / lengths)
        return np.mod(self.points[j] + frac[:, None] * delta, lengths)


def path_positions(path, taus: np.ndarray, dim: int) -> np.ndarray:
    """Positions ``(len(taus), dim)`` for a fixed point, DiscretePath or callable."""
    taus = np.asarray(taus, dtype=float)
    if isinstance(path, DiscretePath):
        return path.at(taus)
    if callable(path):
        return np.asarray(path(taus), dtype=float).reshape(len(taus), dim)
    point = np.asarray(path, dtype=float).reshape(dim)
    return np.broadcast_to(point, (len(taus), dim)).copy()


@dataclass
class SupIntegral:
    value: float
    slice_values: np.ndarray
    maximizers: np.ndarray
    error_estimate: float


def _grid_values(W: Functional, grid: TorusGrid, taus: np.ndarray, chunk: int = 1 << 18) -> np.ndarray:
    """``W`` on every (tau, grid node) pair, shape ``(len(taus), grid.size)``."""
    points = grid.points()
    out = np.empty((len(taus), grid.size))
    rows = max(1, chunk // grid.size)
    for lo in range(0, len(taus), rows):
        block = taus[lo : lo + rows]
        xs = np.broadcast_to(points, (len(block), *points.shape)).reshape(-1, grid.dim)
        ts = np.repeat(block, grid.size)
        out[lo : lo + rows] = np.asarray(W(xs, ts), dtype=float).reshape(len(block), grid.size)
    return out


def grid_argmax(values: np.ndarray) -> np.ndarray:
    """Row-wise argmax; near-ties (within 1e-12) go to the lowest flat index."""
    top = values.max(axis=1, keepdims=True)
    return np.argmax(values >= top - TIE_TOL * np.maximum(1.0, np.abs(top)), axis=1)


def polish_maxima(
    W: Functional, grid: TorusGrid, taus: np.ndarray, values: np.ndarray, iterations: int = 4
):
    """Grid argmax per row, then local ascent steps.

    The first step reuses the grid neighbours; later steps are finite-difference
    Newton steps on stencils shrinking 4x per iteration, inside a trust radius
    of one grid spacing that halves each time.  A move is accepted only when
    ``W`` really increases.  Returns ``(points, maxima, gains)`` with ``gains`` the
    total improvement over the grid maximum.
    """
    n = len(taus)
    shape = grid.shape
    idx = grid_argmax(values)
    multi = np.array(np.unravel_index(idx, shape))  # (d, n)
    rows = np.arange(n)
    f0 = values[rows, idx]
    offset = np.zeros((n, grid.dim))
    for axis in range(grid.dim):
        lo, hi = multi.copy(), multi.copy()
        lo[axis] = (lo[axis] - 1) % shape[axis]
        hi[axis] = (hi[axis] + 1) % shape[axis]
        fm = values[rows, np.ravel_multi_index(tuple(lo), shape)]
        fp = values[rows, np.ravel_multi_index(tuple(hi), shape)]
        offset[:, axis] = _parabola_step(fm, f0, fp) * grid.spacing[axis]
    points = multi.T * grid.spacing
    best = f0.copy()
    cand = grid.wrap(points + offset)
    fc = np.asarray(W(cand, taus), dtype=float)
    better = fc > best
    points = np.where(better[:, None], cand, points)
    best = np.where(better, fc, best)

    radius = float(np.max(grid.spacing))
    for k in range(iterations - 1):
        delta = grid.spacing * 4.0 ** -(k + 1)
        cand = grid.wrap(points + _newton_step(W, grid, taus, points, best, delta, radius))
        fc = np.asarray(W(cand, taus), dtype=float)
        better = fc > best
        points = np.where(better[:, None], cand, points)
        best = np.where(better, fc, best)
        radius /= 2
    return points, best, best - f0


def _newton_step(W, grid, taus, points, f0, delta, radius):
    """Finite-difference Newton ascent step, limited to ``radius``.

    Rows whose Hessian is not negative definite fall back to per-axis
    parabolic steps.
    """
    n, d = points.shape
    grad = np.zeros((n, d))
    hess = np.zeros((n, d, d))
    unit = np.eye(d) * delta
    plus = [np.asarray(W(grid.wrap(points + unit[i]), taus), dtype=float) for i in range(d)]
    minus = [np.asarray(W(grid.wrap(points - unit[i]), taus), dtype=float) for i in range(d)]
    for i in range(d):
        grad[:, i] = (plus[i] - minus[i]) / (2 * delta[i])
        hess[:, i, i] = (plus[i] - 2 * f0 + minus[i]) / delta[i] ** 2
        for j in range(i + 1, d):
            fpp = W(grid.wrap(points + unit[i] + unit[j]), taus)
            fpm = W(grid.wrap(points + unit[i] - unit[j]), taus)
            fmp = W(grid.wrap(points - unit[i] + unit[j]), taus)
            fmm = W(grid.wrap(points - unit[i] - unit[j]), taus)
            hess[:, i, j] = hess[:, j, i] = (fpp - fpm - fmp + fmm) / (4 * delta[i] * delta[j])
    eig = np.linalg.eigvalsh(hess)
    definite = np.all(eig < 0, axis=1)
    step = np.zeros((n, d))
    if np.any(definite):
        step[definite] = -np.linalg.solve(hess[definite], grad[definite][..., None])[..., 0]
    for i in range(d):
        par = _parabola_step(minus[i], f0, plus[i]) * delta[i]
        step[~definite, i] = par[~definite]
    length = np.linalg.norm(step, axis=1)
    scale = np.minimum(1.0, radius / np.maximum(length, 1e-300))
    return step * scale[:, None]


def _parabola_step(fm, f0, fp):
    """Vertex offset (in stencil units, clipped to +-1/2) of the parabola through 3 points."""
    curv = fm - 2 * f0 + fp
    ok = curv < 0
    safe = np.where(ok, curv, -1.0)
    return np.where(ok, np.clip(0.5 * (fm - fp) / safe, -0.5, 0.5), 0.0)


def sup_time_integral(
    W: Functional,
    grid: TorusGrid,
    tgrid: TimeGrid,
    refine: bool = True,
    estimate_error: bool = True,
) -> SupIntegral:
    """Midpoint quadrature of per-slice spatial maxima of ``W``.

    The error estimate adds the largest parabolic gain seen in the spatial
    polish (an O(h^2) proxy) to the midpoint/trapezoid discrepancy in time.
    """
    taus = tgrid.midpoints
    values = _grid_values(W, grid, taus)
    points, maxima, gain = polish_maxima(W, grid, taus, values)
    if not refine:
        idx = grid_argmax(values)
        points = np.array(np.unravel_index(idx, grid.shape)).T * grid.spacing
        maxima = values[np.arange(len(taus)), idx]
    value = float(np.sum(maxima) * tgrid.width)

    error = float(np.max(gain)) * tgrid.horizon
    if estimate_error:
        node_max = _grid_values(W, grid, tgrid.nodes).max(axis=1)
        trap = tgrid.width * (node_max.sum() - 0.5 * (node_max[0] + node_max[-1]))
        error += abs(trap - value) / 3
    return SupIntegral(value, maxima, points, error)


def monomial_function(model: FieldModel, i: int, sign: float = 1.0) -> Functional:
    """``sign * phi_i`` evaluated pointwise, without building all monomials."""
    M = model.mode_count
    iu, ju = np.triu_indices(M, k=1)
    npair = len(iu)
    if not 0 <= i < M * M:
        raise IndexError(f"monomial index {i} out of range for M={M}")

    def W(x, tau):
        p = model.phi(x, tau)
        if i < M:
            return sign * np.abs(p[..., i]) ** 2
        j = (i - M) % npair
        cross = np.sqrt(2) * np.conj(p[..., iu[j]]) * p[..., ju[j]]
        return sign * (cross.real if i < M + npair else cross.imag)

    return W


@dataclass
class PathBounds:
    """Per-monomial support bounds ``[a_i, b_i]``, centering ``c_i``, half-width ``kappa_i``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    kappa: np.ndarray
    horizon: float

    def rows(self):
        for i in range(len(self.a)):
            yield i, self.a[i], self.b[i], self.c[i], self.kappa[i]


def bounds_and_centering(
    model: FieldModel,
    tgrid: TimeGrid,
    refine: bool = True,
    offsets=None,
) -> PathBounds:
    """Support bounds of every monomial via sup/inf time integrals.

    ``offsets`` optionally shifts each monomial by a constant before the
    computation; the half-widths ``kappa`` are invariant under such shifts.
    """
    N = model.mode_count**2
    shift = np.zeros(N) if offsets is None else np.broadcast_to(np.asarray(offsets, float), (N,))
    a, b = np.empty(N), np.empty(N)
    t = tgrid.horizon
    for i in range(N):
        up, down = monomial_function(model, i, 1.0), monomial_function(model, i, -1.0)
        b[i] = sup_time_integral(up, model.grid, tgrid, refine, estimate_error=False).value
        a[i] = -sup_time_integral(down, model.grid, tgrid, refine, estimate_error=False).value
    a, b = a + shift * t, b + shift * t
    c = -(a + b) / (2 * t)
    kappa = (b - a) / 2
    return PathBounds(a, b, c, kappa, t)


def construct_epsilon_path(
    maximizers,
    x_end,
    tgrid: TimeGrid,
    lengths,
    transit_fraction: float | None = None,
    x_start=None,
) -> DiscretePath:
    """Dwell at each slice maximizer and transit geodesically near slice edges.

    Transit windows have half-width ``transit_fraction * (t / N_t)`` around
    each interior slice boundary, plus one-sided windows at both ends that
    connect ``x_start`` and ``x_end``.
    """
    maximizers = np.asarray(maximizers, dtype=float).reshape(tgrid.slices, -1)
    n = tgrid.slices
    frac = 1.0 / (2 * n) if transit_fraction is None else float(transit_fraction)
    if not 0 < frac <= 0.5:
        raise ValueError("transit_fraction must lie in (0, 1/2]")
    w = frac * tgrid.width
    start = maximizers[0] if x_start is None else np.asarray(x_start, dtype=float)
    times = [0.0, w]
    points = [start, maximizers[0]]
    for q in range(1, n):
        edge = q * tgrid.width
        times += [edge - w, edge + w]
        points += [maximizers[q - 1], maximizers[q]]
    times += [tgrid.horizon - w, tgrid.horizon]
    points += [maximizers[-1], np.asarray(x_end, dtype=float).reshape(-1)]
    return DiscretePath(np.array(times), np.array(points), tuple(lengths))


def path_integral(W: Functional, path, horizon: float, dim: int | None = None, nodes: int = 6,
                  pieces: int | None = None) -> float:
    """``int_0^t W(x(tau), tau) dtau`` by Gauss-Legendre on each smooth piece.

    DiscretePath breakpoints delimit the pieces; other paths are split into
    ``pieces`` equal intervals (default 256).
    """
    if isinstance(path, DiscretePath):
        edges = path.times
        dim = path.points.shape[1]
    else:
        edges = np.linspace(0.0, horizon, (pieces or 256) + 1)
    xi, wq = np.polynomial.legendre.leggauss(nodes)
    lo, hi = edges[:-1], edges[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    taus = (0.5 * (hi - lo)[:, None] * (xi[None, :] + 1) + lo[:, None]).ravel()
    weights = (0.5 * (hi - lo)[:, None] * wq[None, :]).ravel()
    xs = path_positions(path, taus, dim)
    return float(np.dot(weights, np.asarray(W(xs, taus), dtype=float)))
