"""Principal components: Jacobi eigensolver, fitting, projection."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rotface import pca
from rotface.pca import PcaError, RankTooHigh

from oracles import classical_jacobi


def oracle_fit(x, k):
    xc = x - x.mean(axis=0)
    vals, vecs = classical_jacobi(xc.T @ xc / (len(x) - 1))
    return vals[:k], pca.fix_signs(vecs[:, :k])


class TestJacobi:
    def test_matches_eigh(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 5, 12):
            b = rng.normal(size=(n, n))
            a = b + b.T
            vals, vecs = pca.jacobi_eigh(a)
            np.testing.assert_allclose(vals, np.sort(np.linalg.eigvalsh(a))[::-1], atol=1e-10)
            np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, a, atol=1e-10)
            np.testing.assert_allclose(vecs.T @ vecs, np.eye(n), atol=1e-12)

    def test_classical_oracle_agrees_with_eigh(self):
        b = np.random.default_rng(1).normal(size=(6, 6))
        vals, _ = classical_jacobi(b @ b.T)
        np.testing.assert_allclose(vals, np.sort(np.linalg.eigvalsh(b @ b.T))[::-1], atol=1e-10)

    def test_diagonal_input(self):
        vals, vecs = pca.jacobi_eigh(np.diag([1.0, 3.0, 2.0]))
        np.testing.assert_array_equal(vals, [3.0, 2.0, 1.0])
        np.testing.assert_array_equal(np.abs(vecs), np.eye(3)[:, [1, 2, 0]])

    def test_non_square(self):
        with pytest.raises(PcaError):
            pca.jacobi_eigh(np.zeros((2, 3)))


class TestSigns:
    def test_largest_entry_positive(self):
        b = pca.fix_signs(np.array([[0.1, 0.6], [-0.9, -0.8]]))
        np.testing.assert_array_equal(b, [[-0.1, -0.6], [0.9, 0.8]])

    def test_tie_uses_lowest_index(self):
        b = pca.fix_signs(np.array([[-0.5], [0.5]]))
        np.testing.assert_array_equal(b, [[0.5], [-0.5]])


class TestFit:
    def test_two_points(self):
        model = pca.fit([[0.0, 0.0], [2.0, 2.0]], k=1)
        np.testing.assert_allclose(model.mean, [1, 1])
        np.testing.assert_allclose(model.eigenvalues, [4.0], atol=1e-12)
        np.testing.assert_allclose(model.basis[:, 0], [1 / math.sqrt(2)] * 2, atol=1e-12)
        np.testing.assert_allclose(pca.transform(model, [2.0, 2.0]), [math.sqrt(2)], atol=1e-12)
        np.testing.assert_allclose(pca.explained_variance_ratio(model), [1.0], atol=1e-12)

    @pytest.mark.parametrize("method", ["covariance", "gram"])
    def test_identical_samples(self, method):
        model = pca.fit(np.tile([0.2, 0.5, 0.1], (4, 1)), k=2, method=method)
        np.testing.assert_array_equal(model.eigenvalues, [0.0, 0.0])
        np.testing.assert_array_equal(model.basis, np.eye(3)[:, :2])

    def test_oracle_20x8(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = rng.normal(size=(20, 8)) * rng.uniform(0.2, 3.0, size=8)
            model = pca.fit(x, k=8)
            vals, vecs = oracle_fit(x, 8)
            np.testing.assert_allclose(model.eigenvalues, vals, atol=1e-6)
            np.testing.assert_allclose(model.basis, vecs, atol=1e-6)

    def test_gram_matches_covariance(self):
        x = np.random.default_rng(3).normal(size=(30, 225))
        a = pca.fit(x, k=29, method="covariance")
        b = pca.fit(x, k=29, method="gram")
        np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, atol=1e-6)
        np.testing.assert_allclose(a.basis, b.basis, atol=1e-6)

    def test_degenerate_spectrum_compares_projectors(self):
        # isotropic in a 3-d subspace: columns are arbitrary, the projector is not
        rng = np.random.default_rng(4)
        q, _ = np.linalg.qr(rng.normal(size=(6, 3)))
        pts = np.vstack([np.eye(3), -np.eye(3)]) @ q.T
        model = pca.fit(pts, k=3)
        np.testing.assert_allclose(model.eigenvalues, [0.4] * 3, atol=1e-12)
        np.testing.assert_allclose(model.basis @ model.basis.T, q @ q.T, atol=1e-10)

    def test_rank_too_high(self):
        with pytest.raises(RankTooHigh):
            pca.fit(np.zeros((5, 3)), k=4)
        with pytest.raises(RankTooHigh):
            pca.fit(np.zeros((3, 10)), k=3)

    def test_needs_two_samples(self):
        with pytest.raises(PcaError):
            pca.fit(np.zeros((1, 4)))

    def test_default_k_rule(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(200, 10)) * [10, 5, 1, 1, 1, 0.1, 0.1, 0.1, 0.1, 0.1]
        model = pca.fit(x)
        ratios = np.cumsum(model.eigenvalues) / model.total_variance
        assert ratios[-1] >= 0.95 and (model.k == 1 or ratios[-2] < 0.95)

    def test_choose_k_cap(self):
        assert pca.choose_k(np.ones(100), 100.0, 0.95, max_k=40) == 40
        assert pca.choose_k([3.0, 1.0], 4.0, 0.75) == 1
        assert pca.choose_k([0.0, 0.0], 0.0) == 1


@given(st.integers(0, 10_000), st.integers(3, 12), st.integers(2, 9))
@settings(max_examples=40, deadline=None)
def test_model_invariants(seed, m, d):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(m, d)) * rng.uniform(0.1, 2, size=d)
    k = min(d, m - 1)
    model = pca.fit(x, k=k)
    b = model.basis
    np.testing.assert_allclose(b.T @ b, np.eye(k), atol=1e-8)
    assert np.all(np.diff(model.eigenvalues) <= 1e-12)
    assert np.all(model.eigenvalues >= 0)
    for col in b.T:
        i = np.argmax(np.abs(col))
        assert col[i] > 0
    # projected variance equals the eigenvalues
    y = pca.transform(model, x)
    np.testing.assert_allclose(y.var(axis=0, ddof=1), model.eigenvalues,
                               rtol=1e-6, atol=1e-12)
    # full rank: the training span is reproduced exactly
    np.testing.assert_allclose(pca.inverse_transform(model, y), x, atol=1e-8)


class TestProjection:
    def setup_method(self):
        self.x = np.random.default_rng(6).normal(size=(40, 6))
        self.model = pca.fit(self.x, k=3)

    def test_mean_maps_to_zero(self):
        np.testing.assert_allclose(pca.transform(self.model, self.model.mean), 0, atol=1e-14)

    def test_direct_multiplication(self):
        expected = np.array([[sum(self.model.basis[r, c] * (self.x[0, r] - self.model.mean[r])
                                  for r in range(6)) for c in range(3)]])
        np.testing.assert_allclose(pca.transform(self.model, self.x[:1]), expected, atol=1e-12)

    def test_zero_maps_to_mean(self):
        np.testing.assert_array_equal(pca.inverse_transform(self.model, np.zeros(3)),
                                      self.model.mean)

    def test_pythagoras(self):
        for row in self.x[:10]:
            y = pca.transform(self.model, row)
            resid = row - pca.inverse_transform(self.model, y)
            centred = row - self.model.mean
            assert abs(resid @ resid - (centred @ centred - y @ y)) < 1e-8

    def test_scatter_maximal(self):
        rng = np.random.default_rng(7)
        top = self.model.basis[:, 0]
        best = np.var(self.x @ top)
        for _ in range(100):
            u = rng.normal(size=6)
            u -= (u @ top) * top
            u /= np.linalg.norm(u)
            assert np.var(self.x @ u) <= best + 1e-12

    def test_wrong_length(self):
        with pytest.raises(PcaError):
            pca.transform(self.model, np.zeros(5))


class TestExplainedVariance:
    def test_isotropic(self):
        x = np.random.default_rng(8).normal(size=(10_000, 4))
        model = pca.fit(x, k=4)
        np.testing.assert_allclose(pca.explained_variance_ratio(model), 0.25, atol=0.05)

    def test_full_model_sums_to_one(self):
        x = np.random.default_rng(9).normal(size=(15, 5))
        assert abs(pca.explained_variance_ratio(pca.fit(x, k=5)).sum() - 1) < 1e-9
