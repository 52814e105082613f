"""Conjugate linear-Gaussian model used as an exact-information oracle.

y = theta * xi + noise with a Gaussian prior on the scalar theta, so the
information gain of any design sequence, the posterior, and the marginal
data density are all available in closed form. Not part of the science;
it exists to pin down the estimators with analytic ground truth.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from .base import ImplicitModel, gaussian_logpdf


class LinearGaussianModel(ImplicitModel):
    model_id = "lg"
    exchangeable = True
    has_likelihood = True
    design_dim = 1
    outcome_dim = 1
    param_dim = 1
    noise_dim = 1
    design_box = (-2.0, 2.0)
    baseline_box = (-2.0, 2.0)
    default_T = 2

    def __init__(self, prior_std: float = 1.0, noise_std: float = 1.0,
                 design_box: tuple[float, float] = (-2.0, 2.0)):
        self.prior_std = prior_std
        self.noise_std = noise_std
        self.design_box = design_box
        self.baseline_box = design_box

    def sample_prior(self, n, rng):
        return self.prior_std * rng.standard_normal(size=(n, 1))

    def prior_logpdf(self, theta):
        theta = np.atleast_2d(theta)
        z = theta[:, 0] / self.prior_std
        return -0.5 * z * z - np.log(self.prior_std) - 0.5 * np.log(2 * np.pi)

    def simulate(self, theta, xi, ctx, eps):
        self.check_design(xi.data)
        return T.constant(np.asarray(theta)) * xi + T.constant(self.noise_std * eps)

    def log_likelihood_pairs(self, designs, outcomes, thetas):
        thetas = np.atleast_2d(thetas)
        n_theta = thetas.shape[0]
        th = T.constant(thetas[:, 0][None, :])
        var = self.noise_std ** 2
        total = None
        for xi, y in zip(designs, outcomes):
            b = xi.shape[0]
            pred = T.broadcast_to(th, (b, n_theta)) * T.broadcast_to(xi, (b, n_theta))
            resid = T.broadcast_to(y, (b, n_theta)) - pred
            term = gaussian_logpdf(resid, var)
            total = term if total is None else total + term
        return total

    # -- closed forms ----------------------------------------------------
    def exact_eig(self, designs) -> float:
        """Total information of fixed designs: 0.5 ln(1 + sum xi^2 s_t^2/s_n^2)."""
        if self.prior_std <= 0 or self.noise_std <= 0:
            raise ValueError("prior and noise scales must be positive")
        designs = np.asarray(designs, dtype=np.float64).reshape(-1)
        snr = float(np.sum(designs ** 2)) * self.prior_std ** 2 / self.noise_std ** 2
        return 0.5 * np.log1p(snr)

    def posterior(self, designs, outcomes) -> tuple[float, float]:
        """Exact Gaussian posterior (mean, std) after the given history."""
        designs = np.asarray(designs, dtype=np.float64).reshape(-1)
        outcomes = np.asarray(outcomes, dtype=np.float64).reshape(-1)
        precision = 1.0 / self.prior_std ** 2 + np.sum(designs ** 2) / self.noise_std ** 2
        mean = (designs @ outcomes / self.noise_std ** 2) / precision
        return float(mean), float(1.0 / np.sqrt(precision))

    def log_marginal(self, designs, outcomes) -> np.ndarray:
        """log p(y_(1:T) | xi_(1:T)) for a batch of histories.

        designs: (B, T); outcomes: (B, T). The marginal is Gaussian with
        covariance s_t^2 xi xi^T + s_n^2 I, evaluated row by row.
        """
        designs = np.atleast_2d(np.asarray(designs, dtype=np.float64))
        outcomes = np.atleast_2d(np.asarray(outcomes, dtype=np.float64))
        out = np.empty(designs.shape[0])
        t = designs.shape[1]
        for i in range(designs.shape[0]):
            cov = self.prior_std ** 2 * np.outer(designs[i], designs[i]) \
                + self.noise_std ** 2 * np.eye(t)
            sign, logdet = np.linalg.slogdet(cov)
            sol = np.linalg.solve(cov, outcomes[i])
            out[i] = -0.5 * (outcomes[i] @ sol) - 0.5 * logdet - 0.5 * t * np.log(2 * np.pi)
        return out
