"""Shared interface for differentiable implicit models.

Every model is reparameterized: randomness enters `simulate` only
through noise draws made independently of (theta, design), so the map
from design to outcome is deterministic and differentiable once the
noise is fixed. Models with a tractable observation density additionally
expose batched log-likelihood evaluation, used by the likelihood-based
evaluation bounds and the likelihood-based policy trainer.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor import Tensor


class LikelihoodUnavailable(RuntimeError):
    """Raised when an explicit observation density is requested from a
    simulator that does not have one."""


class ImplicitModel:
    model_id: str = "?"
    design_dim: int = 1
    outcome_dim: int = 1
    param_dim: int = 1
    noise_dim: int = 1
    design_box: tuple[float, float] | None = None
    # box used by uniform-design baselines when design_box is unbounded
    baseline_box: tuple[float, float] = (-1.0, 1.0)
    exchangeable: bool = True
    has_likelihood: bool = False
    default_T: int = 1

    # -- sampling ------------------------------------------------------
    def sample_prior(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def prior_logpdf(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def draw_joint(self, n: int, rng: np.random.Generator):
        """Draw (theta, simulation context) for `n` rollouts."""
        return self.sample_prior(n, rng), None

    def sample_noise(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """One experiment step's worth of noise draws, shape (n, noise_dim)."""
        if self.noise_dim == 0:
            return np.zeros((n, 0))
        return rng.standard_normal(size=(n, self.noise_dim))

    # -- simulation ------------------------------------------------------
    def simulate(self, theta: np.ndarray, xi: Tensor, ctx, eps: np.ndarray) -> Tensor:
        """Outcome batch (n, outcome_dim), differentiable in `xi`."""
        raise NotImplementedError

    def check_design(self, xi_data: np.ndarray) -> None:
        if self.design_box is not None:
            lo, hi = self.design_box
            if np.any(xi_data < lo) or np.any(xi_data > hi):
                raise ValueError(
                    f"{self.model_id}: design outside box [{lo}, {hi}]"
                )

    # -- explicit likelihood (optional) -----------------------------------
    def log_likelihood_pairs(self, designs, outcomes, thetas: np.ndarray) -> Tensor:
        """log p(h | theta) for every (history row, theta row) pair.

        `designs` and `outcomes` are length-T lists of (B, d) tensors;
        `thetas` is (N, param_dim). Result is (B, N), differentiable in
        the designs and outcomes.
        """
        raise LikelihoodUnavailable(f"{self.model_id}: no explicit likelihood")

    def log_likelihood(self, y, theta, xi) -> float:
        """Single-step density log p(y | theta, xi)."""
        d = [T.constant(np.asarray(xi, dtype=np.float64).reshape(1, -1))]
        o = [T.constant(np.asarray(y, dtype=np.float64).reshape(1, -1))]
        th = np.asarray(theta, dtype=np.float64).reshape(1, -1)
        return float(self.log_likelihood_pairs(d, o, th).data[0, 0])


_GAUSS_CONST = 0.5 * np.log(2.0 * np.pi)


def gaussian_logpdf(resid: Tensor, var) -> Tensor:
    """Elementwise log N(resid; 0, var); `var` may be a Tensor or a float."""
    if isinstance(var, Tensor):
        return -0.5 * (resid * resid) / var - 0.5 * T.log(var) - _GAUSS_CONST
    return (
        -0.5 * (resid * resid) * (1.0 / var)
        - (0.5 * np.log(var) + _GAUSS_CONST)
    )
