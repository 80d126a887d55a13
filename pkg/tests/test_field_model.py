import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amplab.field_model import (
    TorusGrid,
    build_beamlet_model,
    eval_field,
    gamma_at,
    k_vector,
    monomial_count,
    monomial_labels,
    monomial_matrix,
    monomials,
    sample_batch,
    sample_gaussian,
)
from conftest import random_model

GRID1 = TorusGrid((2 * np.pi,), (64,))


def normalization_integral(model, nt=64):
    # midpoint rule in tau on [0, 1], grid mean in x (exact for trig polynomials)
    taus = (np.arange(nt) + 0.5) / nt
    return np.mean([np.mean(np.sum(np.abs(model.phi_on_grid(tau)) ** 2, axis=0)) for tau in taus])


class TestTorusGrid:
    def test_basic_geometry(self):
        g = TorusGrid((2.0, 3.0), (4, 6))
        assert g.dim == 2 and g.size == 24 and g.shape == (4, 6)
        np.testing.assert_allclose(g.spacing, [0.5, 0.5])
        assert g.volume == pytest.approx(6.0)
        pts = g.points()
        assert pts.shape == (24, 2)
        np.testing.assert_allclose(pts[1], [0.0, 0.5])  # C order: last axis fastest

    @pytest.mark.parametrize("lengths,points", [((1.0,), (3,)), ((1.0,), (0,)), ((-1.0,), (4,)),
                                                ((1.0,) * 4, (4,) * 4), ((1.0, 1.0), (4,))])
    def test_rejects_invalid(self, lengths, points):
        with pytest.raises(ValueError):
            TorusGrid(lengths, points)

    def test_wrap_and_displacement(self):
        g = TorusGrid((2 * np.pi,), (8,))
        np.testing.assert_allclose(g.wrap(np.array([7.0])), [7.0 - 2 * np.pi])
        d = g.displacement(np.array([0.1]), np.array([2 * np.pi - 0.1]))
        np.testing.assert_allclose(d, [-0.2], atol=1e-14)

    def test_nearest_index(self):
        g = TorusGrid((1.0, 1.0), (4, 4))
        assert g.nearest_index([0.26, 0.74]) == 1 * 4 + 3
        assert g.nearest_index([0.99, 0.0]) == 0

    def test_refined(self):
        g = TorusGrid((1.0,), (4,)).refined(3)
        assert g.points_per_axis == (12,)


class TestBuildModel:
    def test_single_constant_mode(self):
        model = build_beamlet_model(GRID1, [(0,)], 0.5, [5.0])
        np.testing.assert_allclose(model.amplitudes, [1.0])
        np.testing.assert_allclose(model.phi(np.array([1.3]), 0.7), [1.0])

    def test_equal_split(self):
        model = build_beamlet_model(GRID1, [(0,), (1,)], 0.5, [2.0, 2.0])
        np.testing.assert_allclose(model.amplitudes**2, [0.5, 0.5])

    @pytest.mark.parametrize("seed", range(5))
    def test_normalization_random(self, seed):
        model = random_model(np.random.default_rng(seed))
        assert abs(normalization_integral(model) - 1.0) < 1e-12

    def test_plane_wave_form(self):
        model = build_beamlet_model(GRID1, [(2,), (-1,)], 0.3, [1.0, 2.0])
        x, t = np.array([0.4]), 0.9
        k = np.array([2.0, -1.0])
        expected = model.amplitudes * np.exp(1j * (k * 0.4 + 0.3 * k**2 * t))
        np.testing.assert_allclose(model.phi(x, t), expected, rtol=1e-14)
        np.testing.assert_allclose(model.phi_on_grid(t)[:, 3],
                                   model.phi(GRID1.points()[3], t), rtol=1e-13)

    def test_rejects_duplicates_and_zero(self):
        with pytest.raises(ValueError, match="duplicate"):
            build_beamlet_model(GRID1, [(1,), (1,)], 0.5, [1.0, 1.0])
        with pytest.raises(ValueError, match="positive"):
            build_beamlet_model(GRID1, [(0,), (1,)], 0.5, [1.0, 0.0])
        with pytest.raises(ValueError):
            build_beamlet_model(GRID1, [(0,)], 0.5, [1.0, 2.0])

    def test_rejects_unresolved_wavevector(self):
        with pytest.raises(ValueError, match="resolve"):
            build_beamlet_model(TorusGrid((2 * np.pi,), (16,)), [(0,), (4,)], 0.5, [1.0, 1.0])

    def test_immutable(self):
        model = build_beamlet_model(GRID1, [(0,), (1,)], 0.5, [1.0, 1.0])
        with pytest.raises(ValueError):
            model.amplitudes[0] = 3.0


class TestSampling:
    def test_deterministic(self):
        model = random_model(np.random.default_rng(0), modes=3)
        a, b = sample_gaussian(model, 11, 42), sample_gaussian(model, 11, 42)
        assert np.array_equal(a.s, b.s) and np.array_equal(a.k_vector, b.k_vector)
        assert not np.array_equal(a.s, sample_gaussian(model, 11, 43).s)
        assert not np.array_equal(a.s, sample_gaussian(model, 12, 42).s)

    def test_batch_matches_single(self):
        model = random_model(np.random.default_rng(0), modes=2)
        batch = sample_batch(model, 5, 10, 4)
        for j in range(4):
            assert np.array_equal(batch[j], sample_gaussian(model, 5, 10 + j).s)

    def test_moments(self):
        model = build_beamlet_model(GRID1, [(0,), (1,)], 0.5, [1.0, 1.0])
        s = sample_batch(model, 2024, 0, 100_000)
        np.testing.assert_allclose(np.mean(np.abs(s) ** 2, axis=0), 1.0, atol=0.02)
        pseudo = np.mean(s * s, axis=0)
        assert np.all(np.abs(pseudo.real) < 0.02) and np.all(np.abs(pseudo.imag) < 0.02)
        cross = np.mean(s[:, 0] * np.conj(s[:, 1]))
        assert abs(cross) < 0.02


class TestMonomials:
    def test_k_vector_example(self):
        k = k_vector(np.array([1.0, 1j]))
        np.testing.assert_allclose(k, [1, 1, 0, -np.sqrt(2)], atol=1e-15)

    def test_labels_and_count(self):
        assert monomial_count(3) == 9
        assert monomial_labels(2) == ["diag(0)", "diag(1)", "re(0,1)", "im(0,1)"]

    def test_single_mode(self):
        model = build_beamlet_model(GRID1, [(1,)], 0.5, [1.0])
        np.testing.assert_allclose(monomials(model, np.array([0.3]), 0.2), [1.0])
        np.testing.assert_allclose(eval_field(model, np.array([2.0]), np.array([0.3]), 0.2),
                                   2.0 * model.phi(np.array([0.3]), 0.2)[0])

    def test_destructive_interference(self):
        model = build_beamlet_model(GRID1, [(0,), (1,)], 0.0, [1.0, 1.0])
        assert abs(eval_field(model, np.array([1.0, 1.0]), np.array([np.pi]), 0.0)) < 1e-15

    def test_gamma_structure(self):
        model = build_beamlet_model(GRID1, [(0,), (1,)], 0.5, [1.0, 1.0])
        g = gamma_at(model, np.array([0.7]), 0.3)
        np.testing.assert_allclose(np.linalg.eigvalsh(g), [0.0, 1.0], atol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000), tau=st.floats(0, 5), u=st.floats(0, 1))
    def test_quadratic_form_identities(self, seed, tau, u):
        rng = np.random.default_rng(seed)
        model = random_model(rng, modes=int(rng.integers(1, 5)), max_index=2)
        s = rng.normal(size=model.mode_count) + 1j * rng.normal(size=model.mode_count)
        x = u * np.asarray(model.grid.lengths)
        S2 = abs(eval_field(model, s, x, tau)) ** 2
        g = gamma_at(model, x, tau)
        kv, phi = k_vector(s), monomials(model, x, tau)
        scale = max(S2, float(np.sum(np.abs(kv * phi))))
        assert abs(np.vdot(s, g @ s).real - S2) <= 1e-12 * scale
        assert abs(kv @ phi - S2) <= 1e-12 * scale
        assert abs(np.linalg.norm(kv) - np.linalg.norm(s) ** 2) <= 1e-12 * np.linalg.norm(s) ** 2
        np.testing.assert_allclose(g, g.conj().T, atol=1e-14)
        ev = np.linalg.eigvalsh(g)
        assert ev[-1] == pytest.approx(np.sum(np.abs(model.phi(x, tau)) ** 2), rel=1e-12)
        assert np.all(np.abs(ev[:-1]) < 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_monomial_matrix(self, seed):
        rng = np.random.default_rng(seed)
        model = random_model(rng, dim=1, modes=int(rng.integers(1, 4)))
        N = model.mode_count**2
        eta = rng.normal(size=N) + 1j * rng.normal(size=N)
        C = monomial_matrix(eta, model.mode_count)
        x, tau = rng.uniform(0, 6, 1), rng.uniform(0, 2)
        p = model.phi(x, tau)
        assert np.vdot(p, C @ p) == pytest.approx(eta @ monomials(model, x, tau), rel=1e-12, abs=1e-12)
        real = monomial_matrix(eta.real, model.mode_count)
        np.testing.assert_allclose(real, real.conj().T, atol=1e-15)
