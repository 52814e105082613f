"""One-compartment pharmacokinetic model with first-order absorption.

Parameters are (absorption rate, elimination rate, volume); the design
is the blood-sampling time in hours within (0, 24). The measured
concentration carries multiplicative and additive Gaussian noise, so the
observation density stays Gaussian with a concentration-dependent
variance.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from .base import ImplicitModel, gaussian_logpdf


class PharmacokineticModel(ImplicitModel):
    model_id = "pk"
    exchangeable = True
    has_likelihood = True
    design_dim = 1
    outcome_dim = 1
    param_dim = 3
    noise_dim = 2
    design_box = (0.0, 24.0)
    baseline_box = (0.0, 24.0)
    default_T = 5

    dose_over_unit = 400.0
    mult_noise_var = 0.01
    add_noise_var = 0.1
    prior_log_mean = np.log(np.array([1.0, 0.1, 20.0]))
    prior_log_var = 0.05

    def sample_prior(self, n, rng):
        z = rng.standard_normal(size=(n, 3))
        return np.exp(self.prior_log_mean + np.sqrt(self.prior_log_var) * z)

    def prior_logpdf(self, theta):
        theta = np.atleast_2d(theta)
        log_t = np.log(theta)
        resid = log_t - self.prior_log_mean
        normal = -0.5 * np.sum(resid * resid, axis=1) / self.prior_log_var \
            - 1.5 * np.log(2 * np.pi * self.prior_log_var)
        return normal - np.sum(log_t, axis=1)

    def concentration(self, theta: np.ndarray, xi: Tensor) -> Tensor:
        """Drug concentration z(xi; theta), rowwise over the batch."""
        k_abs = theta[:, 0:1]
        k_el = theta[:, 1:2]
        vol = theta[:, 2:3]
        scale = T.constant(self.dose_over_unit / vol * (k_abs / (k_abs - k_el)))
        decay = T.exp(-T.constant(k_el) * xi) - T.exp(-T.constant(k_abs) * xi)
        return scale * decay

    def simulate(self, theta, xi, ctx, eps):
        self.check_design(xi.data)
        z = self.concentration(np.asarray(theta), xi)
        mult = np.sqrt(self.mult_noise_var) * eps[:, 0:1]
        add = np.sqrt(self.add_noise_var) * eps[:, 1:2]
        return z * T.constant(1.0 + mult) + T.constant(add)

    def log_likelihood_pairs(self, designs, outcomes, thetas):
        thetas = np.atleast_2d(thetas)
        n_theta = thetas.shape[0]
        k_abs = T.constant(thetas[:, 0][None, :])
        k_el = T.constant(thetas[:, 1][None, :])
        scale = T.constant(
            (self.dose_over_unit / thetas[:, 2] * (thetas[:, 0] / (thetas[:, 0] - thetas[:, 1])))[None, :]
        )
        total = None
        for xi, y in zip(designs, outcomes):
            b = xi.shape[0]
            x = T.broadcast_to(xi, (b, n_theta))
            ka = T.broadcast_to(k_abs, (b, n_theta))
            ke = T.broadcast_to(k_el, (b, n_theta))
            z = T.broadcast_to(scale, (b, n_theta)) * (T.exp(-ke * x) - T.exp(-ka * x))
            var = self.mult_noise_var * z * z + self.add_noise_var
            resid = T.broadcast_to(y, (b, n_theta)) - z
            term = gaussian_logpdf(resid, var)
            total = term if total is None else total + term
        return total
