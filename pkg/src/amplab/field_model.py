"""Beamlet Gaussian driving fields on a flat d-torus.

The driving field is ``S(x, t) = sum_n s_n Phi_n(x, t)`` with plane-wave
beamlets ``Phi_n = A_n exp(i (k_n . x + a |k_n|^2 t))`` and i.i.d. circular
complex Gaussian amplitudes ``s_n`` of unit variance.  The quadratic form
``|S|^2 = s^dagger gamma s`` is also exposed through its real monomial
decomposition ``|S|^2 = sum_i k_i(s) phi_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "TorusGrid",
    "FieldModel",
    "GaussianDraw",
    "build_beamlet_model",
    "sample_gaussian",
    "sample_batch",
    "k_vector",
    "eval_field",
    "gamma_at",
    "monomials",
    "monomial_count",
    "monomial_matrix",
    "monomial_labels",
]


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on ``[0, L_1) x ... x [0, L_d)``."""

    lengths: tuple[float, ...]
    points_per_axis: tuple[int, ...]

    def __post_init__(self):
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        npts = tuple(int(v) for v in np.atleast_1d(self.points_per_axis))
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "points_per_axis", npts)
        if len(lengths) not in (1, 2, 3):
            raise ValueError(f"torus dimension must be 1, 2 or 3, got {len(lengths)}")
        if len(npts) != len(lengths):
            raise ValueError("lengths and points_per_axis differ in length")
        if any(v <= 0 for v in lengths):
            raise ValueError(f"torus lengths must be positive, got {lengths}")
        if any(n < 2 or n % 2 for n in npts):
            raise ValueError(f"points per axis must be even and >= 2, got {npts}")

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.lengths) / np.asarray(self.points_per_axis)

    @property
    def size(self) -> int:
        return int(np.prod(self.points_per_axis))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points_per_axis

    def axes(self) -> list[np.ndarray]:
        return [np.arange(n) * h for n, h in zip(self.points_per_axis, self.spacing)]

    def points(self) -> np.ndarray:
        """All grid points as a ``(size, dim)`` array in C (row-major) order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def wavenumbers(self) -> np.ndarray:
        """Angular FFT wavenumbers as a ``(dim, *shape)`` array."""
        ks = [2 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(self.points_per_axis, self.spacing)]
        return np.stack(np.meshgrid(*ks, indexing="ij"))

    def refined(self, factor: int) -> "TorusGrid":
        return TorusGrid(self.lengths, tuple(n * factor for n in self.points_per_axis))

    def wrap(self, x) -> np.ndarray:
        """Map coordinates back into the fundamental cell."""
        return np.mod(x, np.asarray(self.lengths))

    def displacement(self, x0, x1) -> np.ndarray:
        """Shortest (geodesic) displacement from ``x0`` to ``x1``."""
        lengths = np.asarray(self.lengths)
        delta = np.asarray(x1, dtype=float) - np.asarray(x0, dtype=float)
        return delta - lengths * np.round(delta / lengths)

    def nearest_index(self, x) -> int:
        """Flat index of the grid node closest to point ``x``."""
        x = self.wrap(np.asarray(x, dtype=float).reshape(self.dim))
        idx = np.rint(x / self.spacing).astype(int) % np.asarray(self.points_per_axis)
        return int(np.ravel_multi_index(tuple(idx), self.points_per_axis))


@dataclass(frozen=True, eq=False)
class FieldModel:
    """Deterministic part of the driving field: beamlets on a torus grid.

    ``wavevector_indices`` are integer lattice vectors; the physical
    wavevectors are ``2 pi n / L`` per axis.  ``amplitudes`` are already
    normalized so that ``sum_n A_n^2 = 1``.
    """

    grid: TorusGrid
    wavevector_indices: np.ndarray
    dispersion: float
    amplitudes: np.ndarray
    normalization_factor: float
    _plane_waves: np.ndarray = field(repr=False, default=None)

    @property
    def mode_count(self) -> int:
        return len(self.amplitudes)

    @property
    def wavevectors(self) -> np.ndarray:
        return 2 * np.pi * self.wavevector_indices / np.asarray(self.grid.lengths)

    @property
    def frequencies(self) -> np.ndarray:
        """Temporal phase rates ``a |k_n|^2``."""
        return self.dispersion * np.sum(self.wavevectors**2, axis=1)

    def phi(self, x, tau) -> np.ndarray:
        """Beamlet values ``Phi_n(x, tau)`` with shape ``(..., M)``.

        ``x`` has shape ``(..., d)``; ``tau`` broadcasts against ``x[..., 0]``.
        """
        x = np.asarray(x, dtype=float)
        tau = np.asarray(tau, dtype=float)
        phase = x @ self.wavevectors.T + tau[..., None] * self.frequencies
        return self.amplitudes * np.exp(1j * phase)

    def phi_on_grid(self, tau: float) -> np.ndarray:
        """Beamlets on every grid node at time ``tau``, shape ``(M, size)``."""
        return (self.amplitudes * np.exp(1j * self.frequencies * tau))[:, None] * self._plane_waves

    def intensity_bound(self) -> float:
        """``sup_{x, tau} sum_n |Phi_n|^2`` (constant for plane waves)."""
        return float(np.sum(self.amplitudes**2))

    def max_index(self) -> int:
        return int(np.max(np.abs(self.wavevector_indices)))


def build_beamlet_model(
    grid: TorusGrid,
    wavevector_indices: Sequence[Sequence[int]],
    a: float,
    raw_amplitudes: Sequence[float],
) -> FieldModel:
    """Plane-wave beamlet model normalized to unit mean intensity.

    The normalization ``(1/|Lambda|) sum_n int_0^1 int |Phi_n|^2 = 1`` fixes
    a single global factor on ``raw_amplitudes``.
    """
    idx = np.array(wavevector_indices, dtype=np.int64).reshape(len(wavevector_indices), -1)
    raw = np.asarray(raw_amplitudes, dtype=float)
    if idx.shape[0] < 1:
        raise ValueError("at least one beamlet is required")
    if idx.shape[1] != grid.dim:
        raise ValueError(f"wavevector indices have dimension {idx.shape[1]}, grid has {grid.dim}")
    if raw.shape != (idx.shape[0],):
        raise ValueError("raw_amplitudes must have one entry per wavevector")
    if np.any(raw <= 0):
        raise ValueError("beamlet amplitudes must be strictly positive")
    if len({tuple(row) for row in idx.tolist()}) != len(idx):
        raise ValueError("duplicate wavevectors: degenerate beamlets are not independent")
    # |S|^2 carries wavevector differences up to 2 max|n|; keep them below Nyquist.
    for axis, n in enumerate(grid.points_per_axis):
        if 2 * np.max(np.abs(idx[:, axis])) > n // 2 - 1:
            raise ValueError(
                f"grid axis {axis} with {n} points does not resolve wavevector index "
                f"{np.max(np.abs(idx[:, axis]))} (need 2*max|n| < n/2)"
            )

    # time integral over [0, 1] of |Phi_n|^2 is A_n^2 for plane waves
    factor = 1.0 / np.sqrt(np.sum(raw**2))
    amps = raw * factor
    kvec = 2 * np.pi * idx / np.asarray(grid.lengths)
    plane = np.exp(1j * (grid.points() @ kvec.T)).T.copy()
    idx.setflags(write=False)
    amps.setflags(write=False)
    plane.setflags(write=False)
    return FieldModel(grid, idx, float(a), amps, float(factor), plane)


@dataclass(frozen=True)
class GaussianDraw:
    s: np.ndarray
    k_vector: np.ndarray

    @property
    def norm_s(self) -> float:
        return float(np.linalg.norm(self.s))


_TWO_POW_53 = 2.0**-53


def _uniforms(stream_seed: int, sample_index: int, count: int) -> np.ndarray:
    # Philox4x64 keyed by the stream seed; the sample index occupies the third
    # counter word so streams for different indices never overlap.
    counter = np.array([0, 0, sample_index & 0xFFFFFFFFFFFFFFFF, 0], dtype=np.uint64)
    bitgen = np.random.Philox(key=np.uint64(stream_seed & 0xFFFFFFFFFFFFFFFF), counter=counter)
    raw = bitgen.random_raw(count)
    return ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_POW_53  # in (0, 1]


def _standard_complex(stream_seed: int, sample_index: int, count: int) -> np.ndarray:
    u = _uniforms(stream_seed, sample_index, 2 * count)
    radius = np.sqrt(-2.0 * np.log(u[0::2]))
    angle = 2 * np.pi * u[1::2]
    return radius * (np.cos(angle) + 1j * np.sin(angle)) / np.sqrt(2.0)


def k_vector(s) -> np.ndarray:
    """Monomial vector ``k(s)``: ``|s_n|^2``, then sqrt2 Re/Im of ``s_n s_m^*`` (n<m)."""
    s = np.asarray(s, dtype=complex)
    iu, ju = np.triu_indices(s.shape[-1], k=1)
    cross = s[..., iu] * np.conj(s[..., ju])
    return np.concatenate(
        [np.abs(s) ** 2, np.sqrt(2) * cross.real, np.sqrt(2) * cross.imag], axis=-1
    )


def sample_gaussian(model: FieldModel, stream_seed: int, sample_index: int) -> GaussianDraw:
    """Draw ``s`` as a pure function of ``(stream_seed, sample_index)``."""
    s = _standard_complex(stream_seed, sample_index, model.mode_count)
    return GaussianDraw(s, k_vector(s))


def sample_batch(model: FieldModel, stream_seed: int, start: int, count: int) -> np.ndarray:
    """Amplitude vectors for indices ``start .. start+count-1``, shape ``(count, M)``."""
    out = np.empty((count, model.mode_count), dtype=complex)
    for j in range(count):
        out[j] = _standard_complex(stream_seed, start + j, model.mode_count)
    return out


def eval_field(model: FieldModel, draw, x, t) -> np.ndarray:
    s = draw.s if isinstance(draw, GaussianDraw) else np.asarray(draw, dtype=complex)
    return model.phi(x, t) @ s


def gamma_at(model: FieldModel, x, t) -> np.ndarray:
    """Pointwise Hermitian form ``gamma_nm = Phi_n^* Phi_m``."""
    p = model.phi(x, t)
    return np.conj(p)[..., :, None] * p[..., None, :]


def monomial_count(mode_count: int) -> int:
    return mode_count * mode_count


def monomial_labels(mode_count: int) -> list[str]:
    iu, ju = np.triu_indices(mode_count, k=1)
    labels = [f"diag({n})" for n in range(mode_count)]
    labels += [f"re({n},{m})" for n, m in zip(iu, ju)]
    labels += [f"im({n},{m})" for n, m in zip(iu, ju)]
    return labels


def monomials(model: FieldModel, x, t) -> np.ndarray:
    """Real monomials ``phi_i(x, t)`` ordered like :func:`k_vector`."""
    p = model.phi(x, t)
    iu, ju = np.triu_indices(model.mode_count, k=1)
    cross = np.conj(p[..., iu]) * p[..., ju]
    return np.concatenate(
        [np.abs(p) ** 2, np.sqrt(2) * cross.real, np.sqrt(2) * cross.imag], axis=-1
    )


def monomial_matrix(eta, mode_count: int) -> np.ndarray:
    """Matrix ``C`` with ``sum_i eta_i phi_i = Phi^dagger C Phi`` for complex ``eta``."""
    eta = np.asarray(eta, dtype=complex)
    M = mode_count
    if eta.shape != (M * M,):
        raise ValueError(f"eta must have {M * M} components, got shape {eta.shape}")
    iu, ju = np.triu_indices(M, k=1)
    npair = len(iu)
    re, im = eta[M : M + npair], eta[M + npair :]
    C = np.diag(eta[:M]).astype(complex)
    C[iu, ju] = (re - 1j * im) / np.sqrt(2)
    C[ju, iu] = (re + 1j * im) / np.sqrt(2)
    return C
