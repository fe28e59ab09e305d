import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tangentflats.flats import (
    Flat,
    fit_flat,
    fit_flats,
    load_flats,
    msre,
    project,
    residual_distance,
    residuals,
    save_flats,
)
from tangentflats.grassmann import is_orthonormal

from conftest import random_basis


def x_axis():
    return Flat(np.zeros(2), np.array([[1.0], [0.0]]))


class TestFitFlat:
    def test_singleton(self):
        X = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        flat = fit_flat(X, [1], 2)
        np.testing.assert_array_equal(flat.origin, X[1])
        assert is_orthonormal(flat.basis)
        assert residual_distance(flat, X[1]) == 0

    def test_exact_affine_plane(self, rng):
        B = random_basis(rng, 4, 2)
        X = rng.normal(size=(30, 2)) @ B.T + np.array([3.0, -1.0, 2.0, 0.5])
        flat = fit_flat(X, np.arange(30), 2)
        assert np.max(residuals(flat, X)) < 1e-9

    @pytest.mark.parametrize("seed", range(3))
    def test_beats_random_competitors(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(40, 6)) * np.array([5, 3, 1, 1, 0.5, 0.2])
        flat = fit_flat(X, np.arange(40), 2)
        best = np.sum(residuals(flat, X) ** 2)
        for _ in range(100):
            other = Flat(flat.origin, random_basis(rng, 6, 2))
            assert best <= np.sum(residuals(other, X) ** 2) + 1e-9

    def test_empty(self):
        with pytest.raises(ValueError):
            fit_flat(np.zeros((3, 2)), [], 1)

    def test_rank_deficient_padded(self):
        X = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        flat = fit_flat(X, [0, 1], 2)
        assert is_orthonormal(flat.basis)


class TestProjection:
    def test_hand_geometry(self):
        np.testing.assert_allclose(project(x_axis(), np.array([3.0, 4.0])), [3.0, 0.0])
        assert residual_distance(x_axis(), np.array([3.0, 4.0])) == pytest.approx(4.0)

    def test_point_on_flat(self, rng):
        flat = Flat(rng.normal(size=5), random_basis(rng, 5, 2))
        x = flat.origin + flat.basis @ np.array([0.3, -2.0])
        np.testing.assert_allclose(project(flat, x), x, atol=1e-12)
        assert residual_distance(flat, x) == pytest.approx(0, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            project(x_axis(), np.zeros(3))
        with pytest.raises(ValueError):
            residual_distance(x_axis(), np.zeros(3))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(1, 3))
    def test_projection_properties(self, seed, N, d):
        d = min(d, N)
        rng = np.random.default_rng(seed)
        flat = Flat(rng.normal(size=N), random_basis(rng, N, d))
        x = rng.normal(size=N) * 3
        xh = project(flat, x)
        np.testing.assert_allclose(project(flat, xh), xh, atol=1e-12)
        assert np.max(np.abs(flat.basis.T @ (x - xh))) < 1e-9
        assert np.linalg.norm(xh - flat.origin) <= np.linalg.norm(x - flat.origin) + 1e-12
        direct = np.linalg.norm((np.eye(N) - flat.basis @ flat.basis.T) @ (x - flat.origin))
        assert residual_distance(flat, x) == pytest.approx(direct, abs=1e-12)


class TestMsre:
    def test_singletons(self, rng):
        X = rng.normal(size=(10, 3))
        labels = np.arange(10)
        assert msre(X, labels, fit_flats(X, labels, 1)) == 0

    def test_one_flat_exact(self, rng):
        B = random_basis(rng, 5, 2)
        X = rng.normal(size=(25, 2)) @ B.T + 1.0
        labels = np.zeros(25, dtype=int)
        assert msre(X, labels, fit_flats(X, labels, 2)) < 1e-20

    def test_matches_per_sample_average(self, rng):
        X = rng.normal(size=(60, 4))
        labels = rng.integers(0, 5, size=60)
        labels[:5] = np.arange(5)
        flats = fit_flats(X, labels, 2)
        oracle = np.mean([np.sum((X[i] - project(flats[labels[i]], X[i])) ** 2) for i in range(60)])
        assert msre(X, labels, flats) == pytest.approx(oracle, abs=1e-12)

    def test_missing_flat(self, rng):
        X = rng.normal(size=(4, 2))
        with pytest.raises(KeyError):
            msre(X, np.array([0, 0, 1, 1]), [fit_flat(X, [0, 1], 1)])

    @pytest.mark.parametrize("seed", range(5))
    def test_split_never_increases(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(80, 5))
        whole = np.zeros(80, dtype=int)
        split = (rng.random(80) < 0.5).astype(int)
        split[:2] = [0, 1]
        assert msre(X, split, fit_flats(X, split, 2)) <= msre(X, whole, fit_flats(X, whole, 2)) + 1e-12

    def test_save_load(self, tmp_path, rng):
        flats = [Flat(rng.normal(size=4), random_basis(rng, 4, 2)) for _ in range(3)]
        save_flats(flats, tmp_path / "f")
        back = load_flats(tmp_path / "f")
        for a, b in zip(flats, back):
            assert a.origin.tobytes() == b.origin.tobytes()
            assert a.basis.tobytes() == b.basis.tobytes()
