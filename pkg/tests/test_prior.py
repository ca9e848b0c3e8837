import numpy as np
import pytest

from posefit.errors import EmptyDataset, SingularCovariance
from posefit.flow import FlowModel
from posefit.prior import (GmmPrior, gmm_fit, nf_prior_ambient,
                           nf_prior_latent)


class TestLatentPrior:
    def test_value_is_gaussian_nll(self):
        z = np.array([0.5, -1.0, 2.0])
        pe = nf_prior_latent(z)
        expected = 1.5 * np.log(2 * np.pi) + 0.5 * np.sum(z * z)
        assert np.isclose(pe.value, expected, atol=1e-12)
        assert np.allclose(pe.gradient, z)

    def test_zero_is_minimum(self):
        pe = nf_prior_latent(np.zeros(4))
        assert np.allclose(pe.gradient, 0.0)


class TestAmbientPrior:
    def test_matches_negative_log_prob(self, rng):
        m = FlowModel.build("real-nvp", 6, seed=0)
        theta = rng.normal(size=6)
        pe = nf_prior_ambient(m, theta)
        assert np.isclose(pe.value, -m.log_prob(theta), atol=1e-12)

    def test_gradient_matches_fd(self, rng):
        m = FlowModel.build("low-capacity", 5, seed=1)
        theta = rng.normal(size=5)
        pe = nf_prior_ambient(m, theta)
        step = 1e-6
        for i in range(5):
            d = np.zeros(5)
            d[i] = step
            num = (nf_prior_ambient(m, theta + d).value
                   - nf_prior_ambient(m, theta - d).value) / (2 * step)
            assert abs(num - pe.gradient[i]) < 1e-5 * max(1.0, abs(num))

    def test_chain_consistency_through_jacobian(self, rng):
        # A downstream gradient in ambient coordinates, pulled back through
        # the flow inverse, must equal the explicit-Jacobian mapping
        # g_z = J^{-T} g_theta where J = dz/dtheta.
        dim = 4
        m = FlowModel.build("real-nvp", dim, seed=3)
        theta = rng.normal(size=dim)
        z, _ = m.forward(theta)
        step = 1e-6
        J = np.zeros((dim, dim))
        for i in range(dim):
            d = np.zeros(dim)
            d[i] = step
            J[:, i] = (m.forward(theta + d)[0] - m.forward(theta - d)[0]) \
                / (2 * step)
        g_theta = rng.normal(size=dim)
        g_z = m.inverse_vjp(z, g_theta)
        assert np.allclose(g_z, np.linalg.solve(J.T, g_theta), atol=1e-5)


class TestGmm:
    def test_closest_mode_vs_exact_nll(self, trained_gmm, pose_corpus):
        # The closest-mode value upper-bounds the exact mixture NLL up to
        # log(sum of weights) slack and tracks it closely on corpus points.
        for theta in pose_corpus[:20]:
            approx = trained_gmm.evaluate(theta).value
            exact = trained_gmm.exact_nll(theta)
            assert approx >= exact - 1e-9

    def test_gradient_matches_fd(self, trained_gmm, pose_corpus):
        theta = pose_corpus[0]
        pe = trained_gmm.evaluate(theta)
        step = 1e-6
        num = np.zeros_like(theta)
        for i in range(theta.size):
            d = np.zeros_like(theta)
            d[i] = step
            num[i] = (trained_gmm.evaluate(theta + d).value
                      - trained_gmm.evaluate(theta - d).value) / (2 * step)
        denom = np.maximum(1.0, np.abs(num))
        assert np.max(np.abs(num - pe.gradient) / denom) < 1e-4

    def test_fit_deterministic(self, pose_corpus):
        a = gmm_fit(pose_corpus[:500], n_modes=3, seed=9)
        b = gmm_fit(pose_corpus[:500], n_modes=3, seed=9)
        assert np.allclose(a.means, b.means)
        assert np.allclose(a.weights, b.weights)

    def test_single_gaussian_matches_mle(self, rng):
        data = rng.normal(size=(4000, 3)) * np.array([1.0, 2.0, 0.5]) \
            + np.array([1.0, -1.0, 0.0])
        prior = gmm_fit(data, n_modes=1, seed=0)
        assert np.allclose(prior.means[0], data.mean(axis=0), atol=1e-6)
        assert np.allclose(prior.covariances[0], np.cov(data.T, bias=True),
                           atol=1e-4)

    def test_empty_dataset(self):
        with pytest.raises(EmptyDataset):
            gmm_fit(np.empty((0, 3)))

    def test_singular_covariance_rejected(self):
        with pytest.raises(SingularCovariance):
            GmmPrior(weights=[1.0], means=[[0.0, 0.0]],
                     covariances=[[[0.0, 0.0], [0.0, 0.0]]],
                     covariance_type="full")

    def test_save_load_round_trip(self, trained_gmm, tmp_path, pose_corpus):
        path = tmp_path / "gmm.json"
        trained_gmm.metadata = {"k": 1}
        trained_gmm.save(path)
        loaded = GmmPrior.load(path)
        assert loaded.metadata == {"k": 1}
        theta = pose_corpus[5]
        assert np.isclose(loaded.evaluate(theta).value,
                          trained_gmm.evaluate(theta).value, atol=1e-12)
