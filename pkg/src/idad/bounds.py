"""Mutual-information bound estimators over simulated histories.

Training objectives (NWJ, InfoNCE, sLACE) score (history, parameter)
pairs with a critic network and are differentiable end to end, so one
backward pass yields gradients for both the design policy and the
critic. Evaluation bounds (sPCE lower, sNMC upper) replace the critic
with an explicit likelihood and are computed in paired fashion on the
same histories and contrastive draws.

Score-level helpers (`infonce_values`, `spce_values`, ...) operate on
plain score tensors, which keeps them reusable with oracle critics in
tests; the batch-level wrappers assemble scores from a critic and a
rollout batch using in-batch contrastive pairings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

# NWJ exponentiates raw critic scores; cap them to keep a single wild
# score from destroying the step, and count how often the cap binds.
NWJ_SCORE_CLAMP = 80.0


@dataclass
class BoundEstimate:
    """A bound value in nats with its Monte Carlo standard error."""

    value: float
    std_error: float
    n_histories: int
    contrastive: int
    kind: str  # "lower" | "upper"
    objective: str
    overflow: int = 0

    def ceiling(self) -> float:
        """log(L+1) cap for contrastive lower bounds."""
        return float(np.log(self.contrastive + 1))


@dataclass
class BoundResult:
    """Differentiable objective plus its detached point estimate."""

    objective: Tensor
    estimate: BoundEstimate


@dataclass
class RolloutBatch:
    """Histories simulated under a policy, with their parameter draws.

    designs/outcomes are length-T lists of (B, d) tensors living on the
    training tape; `theta` rows are the joint draws that produced each
    history. In-batch objectives use the other rows of `theta` as
    contrastive samples, which is valid because rows are i.i.d.
    """

    theta: np.ndarray
    designs: list[Tensor]
    outcomes: list[Tensor]

    @property
    def batch(self) -> int:
        return self.theta.shape[0]

    def designs_data(self) -> np.ndarray:
        return np.stack([d.data for d in self.designs], axis=1)

    def outcomes_data(self) -> np.ndarray:
        return np.stack([y.data for y in self.outcomes], axis=1)


def _estimate(values: np.ndarray, contrastive: int, kind: str, objective: str,
              overflow: int = 0) -> BoundEstimate:
    n = values.size
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return BoundEstimate(
        value=float(values.mean()), std_error=se, n_histories=n,
        contrastive=contrastive, kind=kind, objective=objective, overflow=overflow,
    )


# ---------------------------------------------------------------------------
# Score-level forms


def infonce_values(joint: Tensor, all_scores: Tensor) -> Tensor:
    """Per-history InfoNCE values.

    joint: (B,) scores of the matched pair; all_scores: (B, L+1) scores
    of the matched parameter plus L contrastives (the matched column
    must be included). Each value is capped by log(L+1) by construction.
    """
    count = all_scores.shape[1]
    return joint - T.logsumexp(all_scores, axis=1) + np.log(float(count))


def spce_values(matched_ll: Tensor, contrast_ll: Tensor) -> Tensor:
    """Sequential prior-contrastive lower-bound values from explicit
    log-likelihoods: matched_ll (B,), contrast_ll (B, L)."""
    b = matched_ll.shape[0]
    full = T.concat([T.reshape(matched_ll, (b, 1)), contrast_ll], axis=1)
    return infonce_values(matched_ll, full)


def snmc_values(matched_ll: Tensor, contrast_ll: Tensor) -> Tensor:
    """Sister upper-bound values: the matched likelihood is excluded
    from the marginal estimate, making the denominator an unbiased
    marginal estimator and the bound an upper one."""
    length = contrast_ll.shape[1]
    return matched_ll - T.logsumexp(contrast_ll, axis=1) + np.log(float(length))


# ---------------------------------------------------------------------------
# Critic-based objectives (differentiable)


def _score_matrix(critic, batch: RolloutBatch) -> Tensor:
    pairs = list(zip(batch.designs, batch.outcomes))
    h_emb = critic.history_embedding(pairs, batch.batch)
    p_emb = critic.param_embedding(batch.theta)
    return critic.score_matrix(h_emb, p_emb)


def infonce(batch: RolloutBatch, critic) -> BoundResult:
    """InfoNCE with in-batch contrastives (L = batch - 1)."""
    scores = _score_matrix(critic, batch)
    b = batch.batch
    idx = np.arange(b)
    joint = T.select_pairs(scores, idx, idx)
    values = infonce_values(joint, scores)
    objective = T.mean(values)
    return BoundResult(objective, _estimate(values.data, b - 1, "lower", "InfoNCE"))


def nwj(batch: RolloutBatch, critic, shuffle_rng: np.random.Generator) -> BoundResult:
    """NWJ bound; the marginal term pairs each history with another
    row's parameter draw via a random cyclic derangement."""
    scores = _score_matrix(critic, batch)
    b = batch.batch
    idx = np.arange(b)
    shift = int(shuffle_rng.integers(1, b))
    partner = (idx + shift) % b
    joint = T.select_pairs(scores, idx, idx)
    marg_raw = T.select_pairs(scores, idx, partner)
    overflow = int(np.sum(marg_raw.data > NWJ_SCORE_CLAMP))
    marg = T.exp(T.clamp_max(marg_raw, NWJ_SCORE_CLAMP))
    values = joint - float(np.exp(-1.0)) * marg
    objective = T.mean(values)
    return BoundResult(objective, _estimate(values.data, b - 1, "lower", "NWJ", overflow))


class PriorProposal:
    """sLACE proposal equal to the prior; importance weights vanish and
    the bound coincides with InfoNCE on the same samples."""

    def __init__(self, model):
        self.model = model

    def sample_and_logpdf(self, batch: RolloutBatch, length: int, rng):
        b = batch.batch
        flat = self.model.sample_prior(b * length, rng)
        theta = flat.reshape(b, length, -1)
        logq = self.model.prior_logpdf(flat).reshape(b, length)
        return theta, logq

    def logpdf_matched(self, batch: RolloutBatch) -> np.ndarray:
        return self.model.prior_logpdf(batch.theta)


def slace(batch: RolloutBatch, critic, proposal, length: int,
          rng: np.random.Generator, prior_logpdf) -> BoundResult:
    """Likelihood-free contrastive bound with an importance proposal.

    Contrastive parameters are drawn from `proposal` (which may condition
    on each history); denominator terms are weighted by prior/proposal
    density ratios, the matched draw included.
    """
    if length < 1:
        raise ValueError("slace: need at least one contrastive sample")
    theta_q, logq = proposal.sample_and_logpdf(batch, length, rng)
    if not np.all(np.isfinite(logq)):
        raise FloatingPointError("slace: zero proposal density at a sampled parameter")
    b = batch.batch
    m = critic.config.encoding_dim
    pairs = list(zip(batch.designs, batch.outcomes))
    h_emb = critic.history_embedding(pairs, b)

    p0 = critic.param_embedding(batch.theta)
    joint = T.sum_(h_emb * p0, axis=1)

    flat = theta_q.reshape(b * length, -1)
    pq = T.reshape(critic.param_embedding(flat), (b, length, m))
    h3 = T.broadcast_to(T.reshape(h_emb, (b, 1, m)), (b, length, m))
    contrast = T.sum_(h3 * pq, axis=2)  # (b, length)

    logp_q = prior_logpdf(flat).reshape(b, length)
    logw_contrast = T.constant(logp_q - logq)
    logw_matched = T.constant(prior_logpdf(batch.theta) - proposal.logpdf_matched(batch))

    weighted = T.concat(
        [T.reshape(joint + logw_matched, (b, 1)), contrast + logw_contrast], axis=1
    )
    values = joint - T.logsumexp(weighted, axis=1) + np.log(float(length + 1))
    objective = T.mean(values)
    return BoundResult(objective, _estimate(values.data, length, "lower", "sLACE"))


# ---------------------------------------------------------------------------
# Likelihood-based evaluation (paired sPCE / sNMC)


def _history_tensors(designs_data: np.ndarray, outcomes_data: np.ndarray):
    t = designs_data.shape[1]
    designs = [T.constant(designs_data[:, s, :]) for s in range(t)]
    outcomes = [T.constant(outcomes_data[:, s, :]) for s in range(t)]
    return designs, outcomes


def likelihood_bound_values(model, designs_data: np.ndarray, outcomes_data: np.ndarray,
                            theta0: np.ndarray, contrastive: np.ndarray,
                            hist_chunk: int = 256, contrast_chunk: int = 8192,
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Per-history paired lower/upper bound values from an explicit
    likelihood.

    designs_data: (B, T, d_xi); outcomes_data: (B, T, d_y);
    theta0: (B, d_theta) matched draws; contrastive: (L, d_theta)
    independent prior draws shared across histories. Work is chunked
    over both histories and contrastive samples with a streaming
    log-sum-exp so L can be large.
    """
    b = theta0.shape[0]
    length = contrastive.shape[0]
    lower = np.empty(b)
    upper = np.empty(b)
    for start in range(0, b, hist_chunk):
        stop = min(start + hist_chunk, b)
        designs, outcomes = _history_tensors(designs_data[start:stop], outcomes_data[start:stop])
        rows = np.arange(stop - start)
        matched = model.log_likelihood_pairs(designs, outcomes, theta0[start:stop])
        matched = T.select_pairs(matched, rows, rows).data
        run_max = np.full(stop - start, -np.inf)
        run_sum = np.zeros(stop - start)
        for cs in range(0, length, contrast_chunk):
            ce = min(cs + contrast_chunk, length)
            ll = model.log_likelihood_pairs(designs, outcomes, contrastive[cs:ce]).data
            chunk_max = ll.max(axis=1)
            new_max = np.maximum(run_max, chunk_max)
            run_sum = run_sum * np.exp(run_max - new_max) + np.exp(ll - new_max[:, None]).sum(axis=1)
            run_max = new_max
        contrast_lse = run_max + np.log(run_sum)
        full_lse = np.logaddexp(contrast_lse, matched)
        lower[start:stop] = matched - full_lse + np.log(length + 1.0)
        upper[start:stop] = matched - contrast_lse + np.log(float(length))
    return lower, upper


def likelihood_bounds(model, designs_data: np.ndarray, outcomes_data: np.ndarray,
                      theta0: np.ndarray, contrastive: np.ndarray,
                      hist_chunk: int = 256, contrast_chunk: int = 8192,
                      ) -> tuple[BoundEstimate, BoundEstimate]:
    """Paired sPCE/sNMC estimates on the same histories and draws."""
    lower, upper = likelihood_bound_values(
        model, designs_data, outcomes_data, theta0, contrastive,
        hist_chunk=hist_chunk, contrast_chunk=contrast_chunk,
    )
    length = contrastive.shape[0]
    return (
        _estimate(lower, length, "lower", "sPCE"),
        _estimate(upper, length, "upper", "sNMC"),
    )


# ---------------------------------------------------------------------------
# Critic-derived posterior/prior density ratio


def density_ratio_from_critic(critic, history_pairs, thetas: np.ndarray,
                              objective: str, normalizing_set: np.ndarray | None = None,
                              ) -> np.ndarray:
    """Approximate p(theta | h) / p(theta) at each row of `thetas`.

    The NWJ critic self-normalizes, so the ratio is exp(U - 1) directly;
    contrastive critics are only defined up to a per-history constant
    and are normalized so the ratio averages to one over
    `normalizing_set` (prior samples or a quadrature grid).
    """
    h_emb = critic.history_embedding(history_pairs, 1)
    scores = critic.score_matrix(h_emb, critic.param_embedding(thetas)).data[0]
    if objective == "NWJ":
        return np.exp(scores - 1.0)
    if normalizing_set is None or len(normalizing_set) == 0:
        raise ValueError("density_ratio_from_critic: contrastive critics need a normalizing set")
    ref = critic.score_matrix(h_emb, critic.param_embedding(normalizing_set)).data[0]
    log_norm = float(np.logaddexp.reduce(ref) - np.log(ref.size))
    return np.exp(scores - log_norm)
