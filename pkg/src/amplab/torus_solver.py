"""Split-step evolution of the amplifier and auxiliary Schroedinger equations.

Both equations share the free part ``d_t u = (i / 2m) Laplacian u`` and differ
only in the multiplicative term:

* amplifier:  ``d_t E = (i/2m) Lap E + lambda |S|^2 E``
* auxiliary:  ``d_t Psi = (i/2m) Lap Psi - i V(eta) Psi`` with ``V = sum eta_i phi_i``

Fields are stored as ``values * exp(log_scale)`` so that exponential growth
never overflows.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .field_model import FieldModel, GaussianDraw, k_vector, monomial_matrix

__all__ = [
    "ComplexMass",
    "EvolvedField",
    "DysonResult",
    "solve_amplifier",
    "solve_eta",
    "dyson_reference",
    "antiholomorphy_check",
    "free_multiplier",
    "default_dt",
    "amplifier_eta",
    "potential_rate",
]

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class ComplexMass:
    """Mass parameter ``m`` in the closed upper half plane minus the origin.

    ``infinite=True`` selects the Laplacian-free limit ``1/m = 0``.
    """

    value: complex = 1j
    infinite: bool = False

    def __post_init__(self):
        if self.infinite:
            return
        v = complex(self.value)
        if v == 0:
            raise ValueError("mass must be nonzero")
        if v.imag < 0:
            raise ValueError(f"mass must have Im(m) >= 0, got {v}")
        object.__setattr__(self, "value", v)

    @classmethod
    def inf(cls) -> "ComplexMass":
        return cls(value=complex("inf"), infinite=True)

    @property
    def regime(self) -> str:
        if self.infinite:
            return "infinite"
        if self.value.real == 0:
            return "diffusive"
        if self.value.imag == 0:
            return "diffractive"
        return "mixed"

    def __str__(self) -> str:
        return "inf" if self.infinite else f"{self.value.real:g}{self.value.imag:+g}i"


@dataclass
class EvolvedField:
    """Solution snapshot; the physical field is ``values * exp(log_scale)``."""

    values: np.ndarray
    log_scale: float
    time: float
    step_count: int

    def physical(self) -> np.ndarray:
        return self.values * math.exp(self.log_scale)

    def log_modulus(self) -> np.ndarray:
        """``ln |field|`` without forming the (possibly huge) physical field."""
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.values)) + self.log_scale


def default_dt(t: float) -> float:
    return t / 1024


def free_multiplier(model: FieldModel, m: ComplexMass, dt: float) -> np.ndarray:
    """Fourier multiplier ``exp(-i |k|^2 dt / 2m)`` of the free propagator."""
    k2 = np.sum(model.grid.wavenumbers() ** 2, axis=0)
    mult = np.exp(-1j * k2 * dt / (2 * m.value))
    # Im(m) >= 0 makes every mode non-expanding
    assert np.all(np.abs(mult) <= 1 + 1e-13), "unstable free propagator"
    return mult


def _step_count(t: float, dt: float) -> int:
    if t <= 0 or dt <= 0:
        raise ValueError("horizon and time step must be positive")
    n = int(round(t / dt))
    if n < 1 or abs(n * dt - t) > 1e-9 * t:
        raise ValueError(f"dt={dt!r} does not divide the horizon t={t!r}")
    return n


def _renormalize(psi: np.ndarray, log_scale: float) -> tuple[np.ndarray, float]:
    # power-of-two rescaling is exact in binary floating point
    peak = float(np.max(np.abs(psi)))
    if peak == 0.0 or 0.5 <= peak <= 2.0:
        return psi, log_scale
    if not math.isfinite(peak):
        raise FloatingPointError("field overflowed within a single step; reduce dt")
    e = int(round(math.log2(peak)))
    return psi * 2.0 ** (-e), log_scale + e * _LN2


def _evolve(
    model: FieldModel,
    rate: Callable[[float], np.ndarray],
    m: ComplexMass,
    t: float,
    dt: float,
) -> EvolvedField:
    """Strang splitting with the multiplicative step at midpoint times.

    ``rate(tau)`` returns the flattened growth-rate field ``g`` so that the
    multiplicative sub-step is ``u <- exp(g dt) u``.
    """
    n = _step_count(t, dt)
    shape = model.grid.shape
    log_scale = 0.0

    if m.infinite:
        expo = np.zeros(model.grid.size, dtype=complex)
        for j in range(n):
            expo += rate((j + 0.5) * dt) * dt
        top = float(np.max(expo.real))
        e = int(round(top / _LN2))
        values = np.exp(expo - e * _LN2)
        return EvolvedField(values.reshape(shape), e * _LN2, n * dt, n)

    half = free_multiplier(model, m, dt / 2)
    full = half * half
    psi = np.ones(shape, dtype=complex)
    axes = tuple(range(len(shape)))
    psi = np.fft.ifftn(np.fft.fftn(psi, axes=axes) * half, axes=axes)
    for j in range(n):
        g = rate((j + 0.5) * dt).reshape(shape) * dt
        top = float(np.max(g.real))
        if abs(top) > 50.0:
            psi = psi * np.exp(g - top)
            log_scale += top
        else:
            psi = psi * np.exp(g)
        psi, log_scale = _renormalize(psi, log_scale)
        psi = np.fft.ifftn(np.fft.fftn(psi, axes=axes) * (half if j == n - 1 else full), axes=axes)
    psi, log_scale = _renormalize(psi, log_scale)
    return EvolvedField(psi, log_scale, n * dt, n)


def _draw_vector(draw) -> np.ndarray:
    if isinstance(draw, GaussianDraw):
        return draw.s
    return np.asarray(draw, dtype=complex)


def solve_amplifier(
    model: FieldModel,
    draw,
    m: ComplexMass,
    lam: float,
    t: float,
    dt: float | None = None,
) -> EvolvedField:
    """Evolve ``E(x,0) = 1`` under the linear amplifier driven by ``lam |S|^2``."""
    s = _draw_vector(draw)
    amp = model.amplitudes * s

    def rate(tau):
        field = (amp * np.exp(1j * model.frequencies * tau)) @ model._plane_waves
        return lam * (field.real**2 + field.imag**2)

    return _evolve(model, rate, m, t, default_dt(t) if dt is None else dt)


def potential_rate(model: FieldModel, eta, shift=None) -> Callable[[float], np.ndarray]:
    """Growth rate ``-i V(x, tau; eta)`` for the auxiliary equation.

    ``shift`` adds constants ``c_i`` to every monomial (centered potential).
    """
    eta = np.asarray(eta, dtype=complex)
    C = monomial_matrix(eta, model.mode_count)
    offset = 0.0 if shift is None else complex(np.dot(eta, np.asarray(shift, dtype=float)))

    def rate(tau):
        p = model.phi_on_grid(tau)
        v = np.sum(np.conj(p) * (C @ p), axis=0) + offset
        return -1j * v

    return rate


def solve_eta(
    model: FieldModel,
    eta,
    m: ComplexMass,
    t: float,
    dt: float | None = None,
    shift=None,
) -> EvolvedField:
    """Evolve ``Psi(x,0) = 1`` under ``i d_t Psi = -(1/2m) Lap Psi + V(eta) Psi``."""
    return _evolve(model, potential_rate(model, eta, shift), m, t, default_dt(t) if dt is None else dt)


@dataclass
class DysonResult:
    values: np.ndarray
    truncation_estimate: float
    order: int


def _lobatto_nodes(count: int) -> np.ndarray:
    return 0.5 * (1 - np.cos(np.pi * np.arange(count) / (count - 1)))


def _barycentric_matrix(nodes: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Interpolation matrix from Chebyshev-Lobatto ``nodes`` to ``targets``."""
    w = (-1.0) ** np.arange(len(nodes))
    w[0] *= 0.5
    w[-1] *= 0.5
    diff = targets[:, None] - nodes[None, :]
    exact = diff == 0
    diff[exact] = 1.0
    terms = w / diff
    mat = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    mat[rows] = exact[rows].astype(float)
    return mat


def dyson_reference(
    model: FieldModel,
    eta,
    m: ComplexMass,
    t: float,
    order: int,
    nodes: int = 32,
    tol: float = 1e-10,
) -> DysonResult:
    """Partial Dyson sum for the auxiliary equation, independent of splitting.

    Each iterated term solves ``T_j(tau) = -i int_0^tau U(tau - s) V(s) T_{j-1}(s) ds``
    with exact Fourier propagators; ``T_{j-1}`` lives on Chebyshev-Lobatto time
    nodes and the inner integral uses Gauss-Legendre quadrature on ``[0, tau]``.
    """
    if m.infinite:
        raise ValueError("the Dyson oracle needs a finite mass")
    eta = np.asarray(eta, dtype=complex)
    shape = model.grid.shape
    axes = tuple(range(1, len(shape) + 2))[1:]
    taus = t * _lobatto_nodes(nodes)
    xi, wq = np.polynomial.legendre.leggauss(nodes)
    # quadrature points s_{k,q} in [0, tau_k]
    inner = taus[:, None] * (xi[None, :] + 1) / 2
    inner_w = taus[:, None] * wq[None, :] / 2
    interp = _barycentric_matrix(taus, inner.ravel())

    C = monomial_matrix(eta, model.mode_count)
    pot = np.empty((inner.size, model.grid.size), dtype=complex)
    for row, s in enumerate(inner.ravel()):
        p = model.phi_on_grid(s)
        pot[row] = np.sum(np.conj(p) * (C @ p), axis=0)
    pot = pot.reshape(nodes, nodes, *shape)

    k2 = np.sum(model.grid.wavenumbers() ** 2, axis=0)
    lag = taus[:, None] - inner
    prop = np.exp(-1j * k2[None, None] * lag[(...,) + (None,) * len(shape)] / (2 * m.value))
    weights = inner_w[(...,) + (None,) * len(shape)]

    term = np.ones((nodes, *shape), dtype=complex)
    total = term.copy()
    for _ in range(order):
        prev = (interp @ term.reshape(nodes, -1)).reshape(nodes, nodes, *shape)
        spec = np.fft.fftn(pot * prev, axes=axes) * prop * weights
        term = -1j * np.fft.ifftn(spec.sum(axis=1), axes=tuple(range(1, len(shape) + 1)))
        total += term

    x = np.linalg.norm(eta) * model.intensity_bound() * t
    estimate = x ** (order + 1) / math.factorial(order + 1) * math.exp(x)
    if estimate > tol:
        warnings.warn(f"Dyson truncation estimate {estimate:.3g} exceeds tolerance {tol:.3g}")
    return DysonResult(total[-1], estimate, order)


def antiholomorphy_check(
    model: FieldModel,
    m: ComplexMass,
    t: float,
    eta0,
    component: int,
    h: float = 1e-3,
    dt: float | None = None,
) -> float:
    """Max modulus of a central-difference estimate of ``dPsi/d(conj eta_j)``."""
    eta0 = np.asarray(eta0, dtype=complex)
    step = h * max(1.0, abs(eta0[component]))
    e = np.zeros_like(eta0)
    e[component] = step

    def psi(eta):
        return solve_eta(model, eta, m, t, dt).physical()

    d_re = (psi(eta0 + e) - psi(eta0 - e)) / (2 * step)
    d_im = (psi(eta0 + 1j * e) - psi(eta0 - 1j * e)) / (2 * step)
    return float(np.max(np.abs(0.5 * (d_re + 1j * d_im))))


def amplifier_eta(draw, lam: float) -> np.ndarray:
    """The auxiliary-equation argument ``eta = i lambda k(s)`` reproducing ``E``."""
    return 1j * lam * k_vector(_draw_vector(draw))
