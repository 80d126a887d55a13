"""Growth rates, support endpoints and moments of the amplifier.

Three families of experiments:

* directional slopes ``ln|E(x, t; r sigma)| / r^2 -> lambda H(sigma)`` on a
  radius ladder;
* growth of the auxiliary solution along imaginary monomial axes, whose rate
  recovers the support endpoints ``b_j`` / ``-a_j`` and (after centering) is
  bounded by the half-width ``kappa_j``;
* Monte-Carlo moments ``<|E|^q>`` compared with the Gaussian closed form of
  the Laplacian-free model, and lambda scans classified by ``q lambda mu < 1``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .field_model import FieldModel, sample_batch
from .path_functionals import (
    PathBounds,
    TimeGrid,
    bounds_and_centering,
    monomial_function,
    sup_time_integral,
)
from .spectral_optimizer import MuResult, direction_value, integrated_gamma, mu_alternating
from .torus_solver import ComplexMass, default_dt, solve_amplifier, solve_eta

__all__ = [
    "SlopeFit",
    "MomentEstimate",
    "AxisGrowth",
    "PaleyWienerReport",
    "PaleyWienerViolation",
    "ScanRow",
    "ScanTable",
    "fit_slope",
    "growth_slope",
    "paley_wiener_check",
    "closed_form_free_moment",
    "mc_moment",
    "lambda_scan",
]


class PaleyWienerViolation(RuntimeError):
    """A centered growth rate exceeded its support half-width."""


@dataclass
class SlopeFit:
    radii: np.ndarray
    log_moduli: np.ndarray
    slope: float
    intercept: float
    confidence_halfwidth: float
    window: slice = slice(None)
    residual: float = 0.0
    envelope: bool = False
    predicted: float | None = None
    flagged: bool = False

    @property
    def relative_error(self) -> float:
        if not self.predicted:
            return float("nan")
        return abs(self.slope - self.predicted) / abs(self.predicted)

    def rows(self):
        """``(r, r^2, log_mod, fit_slope)`` ladder rows."""
        for r, v in zip(self.radii, self.log_moduli):
            yield float(r), float(r * r), float(v), self.slope


def _top_half(n: int) -> slice:
    return slice(n // 2, n) if n >= 4 else slice(0, n)


def _upper_envelope(radii: np.ndarray, values: np.ndarray) -> np.ndarray:
    # sliding max (width 3) of the normalized rate, mapped back to log-moduli
    rate = values / radii**2
    padded = np.concatenate([[rate[0]], rate, [rate[-1]]])
    env = np.maximum(np.maximum(padded[:-2], padded[1:-1]), padded[2:])
    return env * radii**2


def fit_slope(radii, log_moduli, window: slice | None = None, envelope: bool = False,
              residual_tol: float = 1e-2) -> SlopeFit:
    """Least-squares slope of ``log_moduli`` against ``radii**2`` over ``window``.

    The default window is the top half of the ladder.  ``envelope`` first
    replaces the data by its upper envelope (for oscillating diffractive runs).
    """
    r = np.asarray(radii, dtype=float)
    v = np.asarray(log_moduli, dtype=float)
    if r.ndim != 1 or r.shape != v.shape or len(r) < 2:
        raise ValueError("need matching 1-d ladders with at least two rungs")
    if np.any(np.diff(r) <= 0) or r[0] <= 0:
        raise ValueError("radii must be positive and strictly increasing")
    window = _top_half(len(r)) if window is None else window
    data = _upper_envelope(r, v) if envelope else v
    x, y = r[window] ** 2, data[window]
    if len(x) < 2:
        raise ValueError("fit window holds fewer than two rungs")
    X = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    half = 0.0
    if len(x) > 2:
        s2 = float(resid @ resid) / (len(x) - 2)
        half = 1.96 * math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
    # residual relative to the fitted growth over the window
    span = abs(coef[0]) * (x[-1] - x[0]) or 1.0
    rel = float(np.max(np.abs(resid))) / span
    return SlopeFit(r, v, float(coef[0]), float(coef[1]), half, window, rel, envelope,
                    flagged=rel > residual_tol)


def _probe_index(model: FieldModel, x) -> int:
    x = np.zeros(model.grid.dim) if x is None else x
    return model.grid.nearest_index(x)


def _is_auto(x) -> bool:
    return isinstance(x, str) and x == "maximizer"


def _probe_log(field, index: int) -> float:
    return float(field.log_modulus().ravel()[index])


def _map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def growth_slope(
    model: FieldModel,
    m: ComplexMass,
    lam: float,
    sigma,
    radii,
    t: float,
    x=None,
    dt: float | None = None,
    tgrid: TimeGrid | None = None,
    envelope: bool | None = None,
    workers: int = 1,
) -> SlopeFit:
    """Fit ``ln|E(x, t; r sigma)|`` against ``r^2``; the slope estimates ``lambda H(sigma)``.

    The probe ``x`` is snapped to the nearest grid node (origin by default);
    ``x="maximizer"`` probes where ``|sum sigma_m Phi_m|^2`` peaks in the last
    time slice of ``tgrid``, which avoids a final transit whose cost is
    subleading in ``r`` but large on a finite ladder.  ``envelope`` defaults to
    on for real (diffractive) masses.  When ``tgrid`` is given the prediction
    ``lambda * direction_value(sigma)`` is attached.
    """
    sigma = np.asarray(sigma, dtype=complex)
    sigma = sigma / np.linalg.norm(sigma)
    radii = np.asarray(radii, dtype=float)
    dv = direction_value(model, sigma, tgrid) if tgrid is not None else None
    if _is_auto(x):
        if dv is None:
            raise ValueError("probe 'maximizer' needs a time grid")
        x = dv.maximizers[-1]
    idx = _probe_index(model, x)
    dt = default_dt(t) if dt is None else dt

    def one(r):
        return _probe_log(solve_amplifier(model, r * sigma, m, lam, t, dt), idx)

    logs = np.array(_map(one, radii, workers))
    if envelope is None:
        envelope = m.regime == "diffractive"
    fit = fit_slope(radii, logs, envelope=envelope)
    if dv is not None:
        fit.predicted = lam * dv.value
    return fit


@dataclass
class AxisGrowth:
    """Fitted growth rate of ``ln|Psi|`` along ``eta = +/- i rho e_j``."""

    sign: int
    centered: bool
    log_moduli: np.ndarray
    slope: float
    target: float


@dataclass
class PaleyWienerReport:
    axis: int
    rho: np.ndarray
    kappa: float
    a: float
    b: float
    c: float
    centered_plus: AxisGrowth
    centered_minus: AxisGrowth
    uncentered_plus: AxisGrowth
    uncentered_minus: AxisGrowth
    tol: float

    @property
    def bound_holds(self) -> bool:
        return max(self.centered_plus.slope, self.centered_minus.slope) <= self.kappa + self.tol

    @property
    def endpoint_errors(self) -> tuple[float, float]:
        """Relative errors of the uncentered slopes against ``b_j`` and ``-a_j``."""
        def rel(g):
            return abs(g.slope - g.target) / max(abs(g.target), 1e-300)
        return rel(self.uncentered_plus), rel(self.uncentered_minus)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["rho"] = self.rho.tolist()
        for key in ("centered_plus", "centered_minus", "uncentered_plus", "uncentered_minus"):
            out[key]["log_moduli"] = out[key]["log_moduli"].tolist()
        out["bound_holds"] = self.bound_holds
        out["endpoint_errors"] = list(self.endpoint_errors)
        return out


def _rho_slope(rho: np.ndarray, values: np.ndarray) -> float:
    win = _top_half(len(rho))
    return float(np.polyfit(rho[win], values[win], 1)[0])


def paley_wiener_check(
    model: FieldModel,
    m: ComplexMass,
    tgrid: TimeGrid,
    axis: int,
    rho_list,
    x=None,
    dt: float | None = None,
    bounds: PathBounds | None = None,
    tol: float = 1e-3,
    raise_on_violation: bool = True,
) -> PaleyWienerReport:
    """Growth of the auxiliary solution along the imaginary monomial axis ``j``.

    With the centered monomials ``phi_j + c_j`` the rate along ``+/- i rho e_j``
    must not exceed ``kappa_j``; uncentered, the rates approach ``b_j`` and
    ``-a_j``.  Rates are least-squares slopes in ``rho`` over the top half of
    the ladder.  ``x="maximizer"`` probes each sign at the last-slice
    maximizer of ``+/- phi_j`` instead of a fixed point.
    """
    rho = np.asarray(rho_list, dtype=float)
    if len(rho) < 2 or np.any(np.diff(rho) <= 0):
        raise ValueError("rho_list must be strictly increasing with at least two entries")
    N = model.mode_count**2
    if not 0 <= axis < N:
        raise IndexError(f"axis {axis} out of range for {N} monomials")
    if bounds is None:
        bounds = bounds_and_centering(model, tgrid)
    t = tgrid.horizon
    dt = default_dt(t) if dt is None else dt
    e = np.zeros(N, dtype=complex)
    e[axis] = 1.0
    probes = {}
    for sign in (1, -1):
        if _is_auto(x):
            W = monomial_function(model, axis, float(sign))
            end = sup_time_integral(W, model.grid, tgrid, estimate_error=False).maximizers[-1]
            probes[sign] = _probe_index(model, end)
        else:
            probes[sign] = _probe_index(model, x)

    def ladder(sign, shift):
        idx = probes[sign]
        return np.array([
            _probe_log(solve_eta(model, sign * 1j * r * e, m, t, dt, shift=shift), idx) for r in rho
        ])

    a, b, c, kappa = (float(v[axis]) for v in (bounds.a, bounds.b, bounds.c, bounds.kappa))
    growth = {}
    for centered in (True, False):
        shift = bounds.c if centered else None
        for sign in (1, -1):
            logs = ladder(sign, shift)
            target = kappa if centered else (b if sign > 0 else -a)
            growth[(centered, sign)] = AxisGrowth(sign, centered, logs, _rho_slope(rho, logs), target)

    report = PaleyWienerReport(
        axis, rho, kappa, a, b, c,
        growth[(True, 1)], growth[(True, -1)], growth[(False, 1)], growth[(False, -1)], tol,
    )
    if raise_on_violation and not report.bound_holds:
        worst = max(report.centered_plus.slope, report.centered_minus.slope)
        raise PaleyWienerViolation(
            f"axis {axis}: centered growth rate {worst:.6g} exceeds kappa={kappa:.6g} + {tol:g}"
        )
    return report


def closed_form_free_moment(eigenvalues, q: int, lam: float) -> float:
    """``prod_i (1 - q lambda mu_i)^-1``, or ``inf`` once ``q lambda max mu >= 1``."""
    mu = np.asarray(eigenvalues, dtype=float)
    if np.any(mu < -1e-12):
        raise ValueError("covariance eigenvalues must be nonnegative")
    x = q * lam * np.clip(mu, 0.0, None)
    if x.size and x.max() >= 1.0:
        return math.inf
    return float(np.exp(-np.sum(np.log1p(-x))))


@dataclass
class MomentEstimate:
    q: int
    lam: float
    mean: float
    std_error: float
    samples: int
    finite_flag: bool
    qlmu: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def _log_mean_stats(logs: np.ndarray) -> tuple[float, float]:
    """Mean and standard error of ``exp(logs)`` computed in the log domain."""
    n = len(logs)
    top = float(np.max(logs))
    if not math.isfinite(top):
        raise FloatingPointError("non-finite log-moment sample")
    w = np.exp(logs - top)  # in (0, 1]; numpy sums pairwise in index order
    m1 = float(np.sum(w)) / n
    if n < 2:
        return m1 * math.exp(top), 0.0
    var = max(float(np.sum((w - m1) ** 2)) / (n - 1), 0.0)
    return m1 * math.exp(top), math.sqrt(var / n) * math.exp(top)


def mc_moment(
    model: FieldModel,
    m: ComplexMass,
    lam: float,
    q: int,
    tgrid: TimeGrid,
    n_samples: int,
    stream_seed: int = 0,
    x=None,
    dt: float | None = None,
    mu_hat: float | None = None,
    workers: int = 1,
    batch: int = 4096,
) -> MomentEstimate:
    """Monte-Carlo estimate of ``<|E(x, t)|^q>`` over draws ``0 .. n_samples-1``.

    ``mu_hat`` defaults to the optimizer's ``mu_{x,t}`` (finite mass) or the top
    eigenvalue of the fixed-point form (infinite mass).  Estimation is refused
    when ``q lambda mu_hat >= 1``: the moment is infinite there.
    """
    if q < 1 or n_samples < 1:
        raise ValueError("q and n_samples must be positive")
    t = tgrid.horizon
    x = np.zeros(model.grid.dim) if x is None else np.asarray(x, dtype=float)
    dt = default_dt(t) if dt is None else dt
    if lam == 0:
        return MomentEstimate(q, lam, 1.0, 0.0, n_samples, True, 0.0)

    fine = TimeGrid(t, int(round(t / dt)))
    if m.infinite:
        xnode = model.grid.points()[model.grid.nearest_index(x)]
        A = integrated_gamma(model, xnode, fine)
        if mu_hat is None:
            mu_hat = float(np.linalg.eigvalsh(A)[-1])
    elif mu_hat is None:
        mu_hat = mu_alternating(model, tgrid, x=x).mu
    qlmu = q * lam * mu_hat
    if qlmu >= 1.0:
        return MomentEstimate(q, lam, math.inf, math.inf, n_samples, False, qlmu)

    logs = np.empty(n_samples)
    if m.infinite:
        # |E| = exp(lam s^dagger A s) with A the midpoint integral at step dt
        for start in range(0, n_samples, batch):
            count = min(batch, n_samples - start)
            s = sample_batch(model, stream_seed, start, count)
            quad = np.einsum("kn,nm,km->k", np.conj(s), A, s).real
            logs[start : start + count] = q * lam * quad
    else:
        idx = _probe_index(model, x)

        def one(k):
            s = sample_batch(model, stream_seed, k, 1)[0]
            return q * _probe_log(solve_amplifier(model, s, m, lam, t, dt), idx)

        logs[:] = _map(one, range(n_samples), workers)
    mean, se = _log_mean_stats(logs)
    return MomentEstimate(q, lam, mean, se, n_samples, True, qlmu)


@dataclass
class ScanRow:
    lam: float
    qlmu: float
    class_prop: str
    class_free: str
    mean: float = float("nan")
    stderr: float = float("nan")

    HEADER = ("lambda", "qlmu", "class_prop", "class_free", "mean", "stderr")

    def values(self) -> list:
        return [self.lam, self.qlmu, self.class_prop, self.class_free, self.mean, self.stderr]


@dataclass
class ScanTable:
    q: int
    mu_xt: float
    mu1_const: float
    rows: list[ScanRow] = field(default_factory=list)

    @property
    def window(self) -> tuple[float, float]:
        """``[lambda_q, lambda_bar_q]``: divergent with propagation, finite without."""
        return 1.0 / (self.q * self.mu_xt), 1.0 / (self.q * self.mu1_const)


def _classify(v: float) -> str:
    return "finite" if v < 1.0 else "divergent"


def lambda_scan(
    model: FieldModel,
    m: ComplexMass,
    q: int,
    lambdas,
    tgrid: TimeGrid,
    x=None,
    mu_result: MuResult | None = None,
    n_samples: int = 0,
    safety: float = 0.5,
    stream_seed: int = 0,
    dt: float | None = None,
    workers: int = 1,
) -> ScanTable:
    """Classify each ``lambda`` by ``q lambda mu_{x,t}`` and ``q lambda mu_1[const]``.

    Points with ``q lambda mu <= safety`` also get a Monte-Carlo moment when
    ``n_samples > 0``; divergence is never inferred from sampling.
    """
    x = np.zeros(model.grid.dim) if x is None else np.asarray(x, dtype=float)
    if mu_result is None:
        mu_result = mu_alternating(model, tgrid, x=x)
    mu = mu_result.mu
    mu1 = float(np.linalg.eigvalsh(integrated_gamma(model, x, tgrid))[-1])
    table = ScanTable(q, mu, mu1)
    for lam in np.asarray(lambdas, dtype=float):
        qlmu = q * lam * mu
        row = ScanRow(float(lam), qlmu, _classify(qlmu), _classify(q * lam * mu1))
        if n_samples > 0 and qlmu <= safety:
            est = mc_moment(model, m, lam, q, tgrid, n_samples, stream_seed, x, dt,
                            mu_hat=mu, workers=workers)
            row.mean, row.stderr = est.mean, est.std_error
        table.rows.append(row)
    return table
