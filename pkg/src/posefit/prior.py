"""Pose priors as differentiable negative log-likelihood penalties.

Three forms: the normalizing-flow prior evaluated in ambient pose space, the
same prior evaluated directly on latent codes, and a closest-mode Gaussian
mixture baseline fitted with EM.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.mixture import GaussianMixture

from .errors import (DimensionMismatch, EmptyDataset, InvalidConfig, IoError,
                     SingularCovariance)
from .flow import LOG_2PI, FlowModel


@dataclass
class PriorEval:
    value: float          # negative log-likelihood, nats
    gradient: np.ndarray  # w.r.t. the evaluated variable


def nf_prior_ambient(flow: FlowModel, theta) -> PriorEval:
    """-log p(theta) under the flow, with exact gradient w.r.t. theta."""
    logp, grad = flow.log_prob_and_grad(theta)
    return PriorEval(value=-logp, gradient=-grad)


def nf_prior_latent(z) -> PriorEval:
    """-log N(z; 0, I): quadratic bowl in the latent code."""
    z = np.asarray(z, dtype=float)
    value = 0.5 * z.size * LOG_2PI + 0.5 * float(z @ z)
    return PriorEval(value=value, gradient=z.copy())


class GmmPrior:
    """Gaussian mixture pose prior evaluated by its best single mode.

    Covariances may be full or diagonal; both are stored with Cholesky
    factors and log-determinants precomputed.
    """

    def __init__(self, weights, means, covariances, covariance_type="full"):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.covariance_type = covariance_type
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise InvalidConfig("mixture weights must sum to 1")
        k, d = self.means.shape
        if covariance_type == "full":
            self.covariances = np.asarray(covariances, dtype=float).reshape(k, d, d)
            if np.any(np.diagonal(self.covariances, axis1=1, axis2=2) <= 0):
                raise SingularCovariance("non-positive diagonal variance")
            self._chol = np.empty_like(self.covariances)
            self._logdet = np.empty(k)
            for j in range(k):
                try:
                    self._chol[j] = np.linalg.cholesky(self.covariances[j])
                except np.linalg.LinAlgError:
                    try:
                        self._chol[j] = np.linalg.cholesky(
                            self.covariances[j] + 1e-6 * np.eye(d))
                    except np.linalg.LinAlgError as exc:
                        raise SingularCovariance(f"mode {j}") from exc
                self._logdet[j] = 2.0 * np.sum(np.log(np.diag(self._chol[j])))
        elif covariance_type == "diag":
            self.covariances = np.asarray(covariances, dtype=float).reshape(k, d)
            if np.any(self.covariances <= 0):
                self.covariances = self.covariances + 1e-6
                if np.any(self.covariances <= 0):
                    raise SingularCovariance("non-positive diagonal variance")
            self._logdet = np.sum(np.log(self.covariances), axis=1)
        else:
            raise InvalidConfig(f"unknown covariance type {covariance_type!r}")

    @property
    def n_modes(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    def mode_nlls(self, theta):
        """-log(pi_j N(theta; mu_j, Sigma_j)) for every mode, shape (K,)."""
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.dim:
            raise DimensionMismatch("pose dim does not match GMM dim")
        d = self.dim
        diff = theta[None, :] - self.means
        if self.covariance_type == "full":
            maha = np.empty(self.n_modes)
            for j in range(self.n_modes):
                sol = np.linalg.solve(self._chol[j], diff[j])
                maha[j] = sol @ sol
        else:
            maha = np.sum(diff * diff / self.covariances, axis=1)
        return (-np.log(self.weights) + 0.5 * d * LOG_2PI
                + 0.5 * self._logdet + 0.5 * maha)

    def closest_mode(self, theta):
        return int(np.argmin(self.mode_nlls(theta)))

    def evaluate(self, theta) -> PriorEval:
        """Closest-mode NLL; gradient comes from the selected mode only."""
        theta = np.asarray(theta, dtype=float)
        nlls = self.mode_nlls(theta)
        j = int(np.argmin(nlls))
        diff = theta - self.means[j]
        if self.covariance_type == "full":
            grad = np.linalg.solve(self._chol[j].T,
                                   np.linalg.solve(self._chol[j], diff))
        else:
            grad = diff / self.covariances[j]
        return PriorEval(value=float(nlls[j]), gradient=grad)

    def exact_nll(self, theta):
        """Full log-sum-exp mixture NLL (reference; not used in fitting).

        Accepts a single pose or an (N, D) batch.
        """
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 2:
            return np.array([self.exact_nll(row) for row in theta])
        nlls = self.mode_nlls(theta)
        m = np.min(nlls)
        return float(m - np.log(np.sum(np.exp(m - nlls))))

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        return {
            "format": "posefit-gmm-v1",
            "metadata": getattr(self, "metadata", {}),
            "covariance_type": self.covariance_type,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.ravel().tolist(),
            "dim": int(self.dim),
            "n_modes": int(self.n_modes),
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        k, dim = int(d["n_modes"]), int(d["dim"])
        cov = np.asarray(d["covariances"], dtype=float)
        shape = (k, dim, dim) if d["covariance_type"] == "full" else (k, dim)
        return cls(d["weights"], d["means"], cov.reshape(shape),
                   covariance_type=d["covariance_type"])

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, ValueError) as exc:
            raise IoError(str(exc)) from exc
        if d.get("format") != "posefit-gmm-v1":
            raise IoError("not a posefit GMM checkpoint")
        prior = cls.from_dict(d)
        prior.metadata = d.get("metadata", {})
        return prior


def gmm_fit(dataset, n_modes=8, seed=0, covariance_type=None,
            max_iter=200, tol=1e-8) -> GmmPrior:
    """EM fit with k-means++ initialization, deterministic per seed.

    Covariances default to full for dim <= 32 and diagonal above (EM on
    large full covariances from small corpora is ill-conditioned).
    """
    data = np.asarray(dataset, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise EmptyDataset("dataset must be a nonempty (N, D) array")
    if data.shape[0] < n_modes:
        raise InvalidConfig("dataset must have at least n_modes rows")
    if covariance_type is None:
        covariance_type = "full" if data.shape[1] <= 32 else "diag"
    gm = GaussianMixture(n_components=n_modes, covariance_type=covariance_type,
                         reg_covar=1e-6, max_iter=max_iter, tol=tol,
                         init_params="k-means++", random_state=seed)
    gm.fit(data)
    weights = gm.weights_ / gm.weights_.sum()
    return GmmPrior(weights, gm.means_, gm.covariances_,
                    covariance_type=covariance_type)
