"""Path-space eigenvalue optimization and critical couplings.

``mu_{x,t}`` is the supremum over continuous paths of the top eigenvalue of
``int_0^t gamma(x(tau), tau) dtau``.  Because a time integral of spatial
suprema is attained by paths, the path supremum reduces to a maximization
over unit directions ``sigma`` of

    F(sigma) = int_0^t sup_x |sum_m sigma_m Phi_m(x, tau)|^2 dtau,

which :func:`mu_alternating` climbs by alternating per-slice argmax and
top-eigenvector updates.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .field_model import FieldModel, TorusGrid
from .path_functionals import TimeGrid, path_positions, polish_maxima, grid_argmax

__all__ = [
    "SliceProfile",
    "DirectionValue",
    "MuResult",
    "CovarianceSpectrum",
    "CriticalReport",
    "InequalityViolation",
    "integrated_gamma",
    "direction_value",
    "gauge_fix",
    "top_eigvec",
    "mu_alternating",
    "mu_oracle_sphere_grid",
    "nystrom_covariance_eigs",
    "critical_report",
]


class InequalityViolation(RuntimeError):
    """Raised when the computed couplings contradict ``lambda_q <= lambda_bar_q``."""


@dataclass(frozen=True, eq=False)
class SliceProfile:
    """One torus point per time slice, placed at the slice midpoints."""

    points: np.ndarray


def _positions(model: FieldModel, path, tgrid: TimeGrid) -> np.ndarray:
    if isinstance(path, SliceProfile):
        pts = np.asarray(path.points, dtype=float).reshape(tgrid.slices, model.grid.dim)
        return pts
    return path_positions(path, tgrid.midpoints, model.grid.dim)


def integrated_gamma(model: FieldModel, path, tgrid: TimeGrid) -> np.ndarray:
    """Midpoint quadrature of ``int_0^t gamma(x(tau), tau) dtau`` along ``path``.

    ``path`` may be a fixed point, a :class:`SliceProfile`, a DiscretePath or a
    callable ``tau -> x``.
    """
    xs = _positions(model, path, tgrid)
    p = model.phi(xs, tgrid.midpoints)  # (N_t, M)
    A = tgrid.width * (np.conj(p).T @ p)
    return 0.5 * (A + np.conj(A.T))


@dataclass
class DirectionValue:
    value: float
    slice_values: np.ndarray
    maximizers: np.ndarray


def _direction_functional(model: FieldModel, sigma: np.ndarray):
    def W(x, tau):
        u = model.phi(x, tau) @ sigma
        return u.real**2 + u.imag**2

    return W


def direction_value(
    model: FieldModel,
    sigma,
    tgrid: TimeGrid,
    refine: bool = True,
    candidates: np.ndarray | None = None,
) -> DirectionValue:
    """``H(sigma) = int_0^t sup_x sigma^dagger gamma(x, tau) sigma dtau``.

    ``candidates`` (one point per slice) are also tried; the alternating
    iteration passes its previous profile here so the objective never drops.
    """
    sigma = np.asarray(sigma, dtype=complex)
    if abs(np.linalg.norm(sigma) - 1.0) > 1e-12:
        raise ValueError("direction must have unit norm")
    W = _direction_functional(model, sigma)
    taus = tgrid.midpoints
    grid_field = np.stack([model.phi_on_grid(tau) for tau in taus])  # (N_t, M, G)
    u = np.einsum("m,jmg->jg", sigma, grid_field)
    values = u.real**2 + u.imag**2
    if refine:
        points, maxima, _ = polish_maxima(W, model.grid, taus, values)
    else:
        idx = grid_argmax(values)
        points = np.array(np.unravel_index(idx, model.grid.shape)).T * model.grid.spacing
        maxima = values[np.arange(len(taus)), idx]
    if candidates is not None:
        cand = np.asarray(candidates, dtype=float).reshape(len(taus), model.grid.dim)
        fc = W(cand, taus)
        better = fc > maxima
        points = np.where(better[:, None], cand, points)
        maxima = np.where(better, fc, maxima)
    return DirectionValue(float(np.sum(maxima) * tgrid.width), maxima, points)


def gauge_fix(sigma: np.ndarray) -> np.ndarray:
    """Rotate the global phase so the first nonzero component is real positive."""
    sigma = np.asarray(sigma, dtype=complex)
    nz = np.flatnonzero(np.abs(sigma) > 1e-14)
    if len(nz) == 0:
        raise ValueError("zero direction")
    lead = sigma[nz[0]]
    return sigma * (np.conj(lead) / abs(lead))


def top_eigvec(A: np.ndarray, previous: np.ndarray | None = None, gap: float = 1e-10):
    """Top eigenpair of Hermitian ``A``; degenerate tops keep closest to ``previous``."""
    w, v = np.linalg.eigh(A)
    top = w[-1]
    vec = v[:, -1]
    cluster = np.flatnonzero(w >= top - gap * max(1.0, abs(top)))
    if previous is not None and len(cluster) > 1:
        basis = v[:, cluster]
        proj = basis @ (np.conj(basis.T) @ previous)
        norm = np.linalg.norm(proj)
        if norm > 1e-12:
            vec = proj / norm
    return float(top), gauge_fix(vec / np.linalg.norm(vec))


@dataclass
class MuResult:
    mu: float
    sigma_star: np.ndarray
    slice_maximizers: np.ndarray
    trace: list[float]
    starts_used: int
    converged: bool
    start_values: list[float] = field(default_factory=list)
    start_traces: list[list[float]] = field(default_factory=list)

    @property
    def dispersion(self) -> float:
        """Spread of final values across starts (0 when all starts agree)."""
        vals = np.asarray(self.start_values)
        return float(vals.max() - vals.min()) if len(vals) else 0.0

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "sigma_star_re": self.sigma_star.real.tolist(),
            "sigma_star_im": self.sigma_star.imag.tolist(),
            "trace": list(self.trace),
            "starts_used": self.starts_used,
            "converged": self.converged,
            "start_values": list(self.start_values),
            "dispersion": self.dispersion,
        }


def _start_directions(model: FieldModel, tgrid: TimeGrid, n_starts: int, x, seed: int):
    M = model.mode_count
    anchor = np.zeros(model.grid.dim) if x is None else x
    _, first = top_eigvec(integrated_gamma(model, anchor, tgrid))
    starts = [first]
    for k in range(1, n_starts):
        rng = np.random.default_rng([seed, k])
        z = rng.normal(size=M) + 1j * rng.normal(size=M)
        starts.append(gauge_fix(z / np.linalg.norm(z)))
    return starts


def _climb(model, tgrid, sigma, max_iters, tol, refine, candidates=None):
    dv = direction_value(model, sigma, tgrid, refine, candidates=candidates)
    trace = [dv.value]
    converged = False
    for _ in range(max_iters):
        A = integrated_gamma(model, SliceProfile(dv.maximizers), tgrid)
        _, nxt = top_eigvec(A, previous=sigma)
        new = direction_value(model, nxt, tgrid, refine, candidates=dv.maximizers)
        gain = new.value - trace[-1]
        trace.append(new.value)
        if gain >= 0:
            sigma, dv = nxt, new
        if gain < tol:
            converged = True
            break
    return sigma, dv, trace, converged


def mu_alternating(
    model: FieldModel,
    tgrid: TimeGrid,
    n_starts: int = 8,
    max_iters: int = 200,
    tol: float = 1e-10,
    x=None,
    seed: int = 0,
    refine: bool = True,
    workers: int = 1,
) -> MuResult:
    """Multi-start alternating maximization of ``F(sigma)``.

    Start 0 is the top eigenvector of the integrated form along the constant
    path at ``x`` (grid origin by default), so the result never falls below
    that path's top eigenvalue.  Remaining starts are seeded random directions.
    """
    if n_starts < 1:
        raise ValueError("need at least one start")
    starts = _start_directions(model, tgrid, n_starts, x, seed)
    anchor = np.zeros(model.grid.dim) if x is None else np.asarray(x, dtype=float)
    constant = np.broadcast_to(anchor, (tgrid.slices, model.grid.dim))

    def run(k):
        cand = constant if k == 0 else None
        return _climb(model, tgrid, starts[k], max_iters, tol, refine, cand)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, range(n_starts)))
    else:
        results = [run(k) for k in range(n_starts)]

    finals = [r[1].value for r in results]
    best = int(np.argmax(finals))  # first index wins ties
    sigma, dv, trace, converged = results[best]
    return MuResult(
        mu=dv.value,
        sigma_star=sigma,
        slice_maximizers=dv.maximizers,
        trace=trace,
        starts_used=n_starts,
        converged=converged,
        start_values=finals,
        start_traces=[r[2] for r in results],
    )


def mu_oracle_sphere_grid(
    model: FieldModel,
    tgrid: TimeGrid,
    resolution: int = 100,
    oversample: int = 8,
) -> float:
    """Brute-force ``max_sigma F(sigma)`` for ``M <= 2``.

    Directions ``(cos th, sin th e^{i ph})`` on a ``(resolution+1) x resolution``
    grid; spatial maxima on a grid refined ``oversample`` times per axis, with
    no interpolation.
    """
    M = model.mode_count
    if M > 2:
        raise NotImplementedError("sphere-grid oracle supports M <= 2 only")
    dense = model.grid.refined(oversample).points()
    taus = tgrid.midpoints
    if M == 1:
        total = sum(np.max(np.abs(model.phi(dense, np.full(len(dense), tau))[:, 0]) ** 2) for tau in taus)
        return float(total * tgrid.width)

    theta = np.linspace(0.0, np.pi / 2, resolution + 1)
    phase = 2 * np.pi * np.arange(resolution) / resolution
    c = np.repeat(np.cos(theta), resolution)
    s = np.repeat(np.sin(theta), resolution)
    e = np.tile(np.exp(1j * phase), resolution + 1)
    coeff = np.stack([c**2, s**2, 2 * c * s * e.real, -2 * c * s * e.imag], axis=1)
    total = np.zeros(len(c))
    for tau in taus:
        p = model.phi(dense, np.full(len(dense), tau))
        cross = np.conj(p[:, 0]) * p[:, 1]
        basis = np.stack([np.abs(p[:, 0]) ** 2, np.abs(p[:, 1]) ** 2, cross.real, cross.imag])
        total += (coeff @ basis).max(axis=1)
    return float(total.max() * tgrid.width)


@dataclass
class CovarianceSpectrum:
    eigenvalues: np.ndarray
    nodes: np.ndarray
    path: object

    def nonzero(self, floor: float = 1e-10) -> np.ndarray:
        top = self.eigenvalues[0] if len(self.eigenvalues) else 0.0
        return self.eigenvalues[self.eigenvalues > floor * max(1.0, top)]


def nystrom_covariance_eigs(model: FieldModel, path, K: int = 256, horizon: float | None = None) -> CovarianceSpectrum:
    """Eigenvalues of the path covariance operator by trapezoid Nystrom.

    The kernel is ``<S^*(x(tau), tau) S(x(tau'), tau')> = sum_n Phi_n^* Phi_n``.
    """
    if K < 2:
        raise ValueError("Nystrom needs K >= 2 nodes")
    if horizon is None:
        horizon = getattr(path, "horizon", None)
        if horizon is None:
            raise ValueError("horizon is required for fixed-point or callable paths")
    nodes = np.linspace(0.0, horizon, K)
    w = np.full(K, horizon / (K - 1))
    w[0] = w[-1] = 0.5 * horizon / (K - 1)
    xs = path_positions(path, nodes, model.grid.dim)
    p = model.phi(xs, nodes)  # (K, M)
    kernel = np.conj(p) @ p.T
    root = np.sqrt(w)
    B = root[:, None] * kernel * root[None, :]
    B = 0.5 * (B + np.conj(B.T))
    eig = np.linalg.eigvalsh(B)[::-1]
    return CovarianceSpectrum(eig, nodes, path)


@dataclass
class CriticalReport:
    q: int
    mu_xt: float
    lambda_q: float
    mu1_const: float
    lambda_bar_q: float
    ratio: float
    x: list[float] = field(default_factory=list)
    const_spectrum: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def csv_header() -> list[str]:
        return ["q", "mu_xt", "lambda_q", "mu1_const", "lambda_bar_q", "ratio"]

    def csv_row(self) -> list:
        return [self.q, self.mu_xt, self.lambda_q, self.mu1_const, self.lambda_bar_q, self.ratio]


def critical_report(
    model: FieldModel,
    tgrid: TimeGrid,
    q: int,
    x=None,
    mu_result: MuResult | None = None,
    **optimizer_opts,
) -> CriticalReport:
    """Critical couplings with and without the Laplacian at endpoint ``x``."""
    if q < 1:
        raise ValueError("q must be a positive integer")
    x = np.zeros(model.grid.dim) if x is None else np.asarray(x, dtype=float).reshape(model.grid.dim)
    if mu_result is None:
        mu_result = mu_alternating(model, tgrid, x=x, **optimizer_opts)
    spectrum = np.linalg.eigvalsh(integrated_gamma(model, x, tgrid))[::-1]
    mu1 = float(spectrum[0])
    lam = 1.0 / (q * mu_result.mu)
    lam_bar = 1.0 / (q * mu1)
    if lam > lam_bar + 1e-10:
        raise InequalityViolation(
            f"lambda_q={lam!r} exceeds lambda_bar_q={lam_bar!r}; optimizer or quadrature defect"
        )
    return CriticalReport(
        q=int(q),
        mu_xt=float(mu_result.mu),
        lambda_q=lam,
        mu1_const=mu1,
        lambda_bar_q=lam_bar,
        ratio=lam_bar / lam,
        x=x.tolist(),
        const_spectrum=spectrum.tolist(),
    )
