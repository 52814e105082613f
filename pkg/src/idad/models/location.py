"""Source-localization model: K hidden emitters in d-dimensional space.

Each source contributes signal alpha / (m + squared distance) and a
constant background b keeps the total strictly positive. The observable
is the log of the total intensity with Gaussian noise, and outcomes are
stored on that log scale, which both matches the noise model and hands
the networks a well-conditioned input.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from .base import ImplicitModel, gaussian_logpdf


class LocationFindingModel(ImplicitModel):
    model_id = "locfin"
    exchangeable = True
    has_likelihood = True
    noise_dim = 1
    outcome_dim = 1
    design_box = None
    baseline_box = (-4.0, 4.0)
    default_T = 4

    def __init__(self, sources: int = 2, spatial_dim: int = 2, alpha: float = 1.0,
                 base_signal: float = 0.1, max_signal: float = 1e-4,
                 noise_scale: float = 0.5):
        self.sources = sources
        self.spatial_dim = spatial_dim
        self.alpha = alpha
        self.base_signal = base_signal
        self.max_signal = max_signal
        self.noise_scale = noise_scale
        self.design_dim = spatial_dim
        self.param_dim = sources * spatial_dim

    # -- prior ---------------------------------------------------------
    def sample_prior(self, n, rng):
        return rng.standard_normal(size=(n, self.param_dim))

    def prior_logpdf(self, theta):
        theta = np.atleast_2d(theta)
        return -0.5 * np.sum(theta * theta, axis=1) - 0.5 * self.param_dim * np.log(2 * np.pi)

    # -- simulator -------------------------------------------------------
    def total_intensity(self, theta: np.ndarray, xi: Tensor) -> Tensor:
        """mu(theta, xi) >= base_signal for a batch of (theta_i, xi_i) rows."""
        n = xi.shape[0]
        k, d = self.sources, self.spatial_dim
        th = T.constant(theta.reshape(n, k, d))
        x = T.broadcast_to(T.reshape(xi, (n, 1, d)), (n, k, d))
        dist2 = T.sum_((x - th) * (x - th), axis=2)  # (n, k)
        signal = self.alpha / (self.max_signal + dist2)
        return self.base_signal + T.sum_(signal, axis=1, keepdims=True)  # (n, 1)

    def simulate(self, theta, xi, ctx, eps):
        self.check_design(xi.data)
        mu = self.total_intensity(np.asarray(theta), xi)
        return T.log(mu) + self.noise_scale * T.constant(eps)

    # -- likelihood (density of the stored log-intensity) ----------------
    def log_likelihood_pairs(self, designs, outcomes, thetas):
        thetas = np.atleast_2d(thetas)
        n_theta = thetas.shape[0]
        k, d = self.sources, self.spatial_dim
        th = T.constant(thetas.reshape(1, n_theta, k, d))
        total = None
        var = self.noise_scale ** 2
        for xi, y in zip(designs, outcomes):
            b = xi.shape[0]
            x = T.broadcast_to(T.reshape(xi, (b, 1, 1, d)), (b, n_theta, k, d))
            th_b = T.broadcast_to(th, (b, n_theta, k, d))
            dist2 = T.sum_((x - th_b) * (x - th_b), axis=3)
            mu = self.base_signal + T.sum_(self.alpha / (self.max_signal + dist2), axis=2)
            resid = T.broadcast_to(T.reshape(y, (b, 1)), (b, n_theta)) - T.log(mu)
            term = gaussian_logpdf(resid, var)
            total = term if total is None else total + term
        return total
