"""Policy evaluation: paired likelihood bounds, heuristic baselines,
critic-based posteriors, and deployment timing.

Evaluation rollouts use their own seed streams, so they never overlap
training draws, and re-running with the same seed reproduces the report
bitwise. For models with an explicit likelihood the headline numbers are
the paired lower/upper estimates on fresh histories; for truly implicit
models the trained critic's own bound is reported instead and flagged,
since its value inherits whatever slack the critic has.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import bounds, rng as rngmod
from . import tensor as T
from .models import ImplicitModel, SIRModel
from .nets import History
from .train import RolloutInputs, rollout

CSV_HEADER = (
    "model,policy,objective,T,n_histories,L,seed,"
    "lower,lower_se,upper,upper_se,likelihood_free,latency_mean_s,latency_rel_err"
)


def worker_count() -> int:
    """Worker cap from IDAD_THREADS (defaults to 1)."""
    try:
        return max(1, int(os.environ.get("IDAD_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class EvalReport:
    model_id: str
    policy_kind: str
    objective: str
    T: int
    n_histories: int
    contrastive: int
    seed: int
    lower: bounds.BoundEstimate | None
    upper: bounds.BoundEstimate | None
    likelihood_free: bool
    latency_mean_s: float | None = None
    latency_rel_err: float | None = None

    def to_text(self) -> str:
        lines = [
            f"model = {self.model_id}",
            f"policy = {self.policy_kind}",
            f"objective = {self.objective}",
            f"T = {self.T}",
            f"n_histories = {self.n_histories}",
            f"L = {self.contrastive}",
            f"seed = {self.seed}",
            f"likelihood_free = {str(self.likelihood_free).lower()}",
        ]
        if self.lower is not None:
            lines.append(f"lower = {self.lower.value:.6f} +- {self.lower.std_error:.6f}")
        if self.upper is not None:
            lines.append(f"upper = {self.upper.value:.6f} +- {self.upper.std_error:.6f}")
        if self.latency_mean_s is not None:
            lines.append(
                f"latency_s = {self.latency_mean_s:.6f} +- {100 * self.latency_rel_err:.1f}%"
            )
        return "\n".join(lines) + "\n"

    def to_csv_row(self) -> str:
        def num(x, fmt="{:.6f}"):
            return fmt.format(x) if x is not None else ""

        lower = self.lower.value if self.lower else None
        lower_se = self.lower.std_error if self.lower else None
        upper = self.upper.value if self.upper else None
        upper_se = self.upper.std_error if self.upper else None
        return ",".join([
            self.model_id, self.policy_kind, self.objective, str(self.T),
            str(self.n_histories), str(self.contrastive), str(self.seed),
            num(lower), num(lower_se), num(upper), num(upper_se),
            str(self.likelihood_free).lower(),
            num(self.latency_mean_s), num(self.latency_rel_err, "{:.4f}"),
        ])


def append_results_row(path: str, report: EvalReport) -> None:
    """Append one row to the results table, creating the header first."""
    existing = ""
    if os.path.exists(path):
        with open(path) as fh:
            existing = fh.read()
    if not existing:
        existing = CSV_HEADER + "\n"
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(existing + report.to_csv_row() + "\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Baseline policies


class RandomPolicy:
    """Uniform designs over the model's box, independent of history."""

    def __init__(self, model: ImplicitModel, seed: int = 0):
        self.box = model.design_box if model.design_box is not None else model.baseline_box
        self.design_dim = model.design_dim
        self.seed = seed
        self.reset()

    def reset(self) -> None:
        self._rng = rngmod.stream(self.seed, "random-policy")

    def propose(self, pairs, batch: int):
        lo, hi = self.box
        return T.constant(self._rng.uniform(lo, hi, size=(batch, self.design_dim)))

    def act(self, history: History) -> np.ndarray:
        return self.propose([], 1).data[0]

    def params(self):
        return {}


class EqualIntervalPolicy:
    """Interior grid over a one-dimensional bounded design box:
    xi_t = lo + t (hi - lo) / (T + 1), t = 1..T."""

    def __init__(self, model: ImplicitModel, steps: int):
        if model.design_box is None:
            raise ValueError("equal-interval designs need a bounded design box")
        if model.design_dim != 1:
            raise ValueError("equal-interval designs need a one-dimensional design")
        lo, hi = model.design_box
        self.designs = np.array([
            [lo + (t + 1) * (hi - lo) / (steps + 1)] for t in range(steps)
        ])

    def propose(self, pairs, batch: int):
        t = len(pairs)
        return T.constant(np.broadcast_to(self.designs[t], (batch, 1)).copy())

    def act(self, history: History) -> np.ndarray:
        return self.designs[len(history)].copy()

    def params(self):
        return {}


def baseline_policy(kind: str, model: ImplicitModel, steps: int | None = None, seed: int = 0):
    if kind == "random":
        return RandomPolicy(model, seed=seed)
    if kind == "equal_interval":
        return EqualIntervalPolicy(model, steps or model.default_T)
    raise ValueError(f"unknown baseline kind '{kind}'")


# ---------------------------------------------------------------------------
# Evaluation rollouts


def _draw_eval_inputs(model: ImplicitModel, n: int, steps: int, rng) -> RolloutInputs:
    # fresh parameter draws; SIR paths are re-simulated rather than read
    # from the training bank so evaluation never reuses training noise
    if isinstance(model, SIRModel):
        theta = model.sample_prior(n, rng)
        ctx = model.fresh_context(theta, rng)
    else:
        theta, ctx = model.draw_joint(n, rng)
    noises = [model.sample_noise(n, rng) for _ in range(steps)]
    return RolloutInputs(theta=theta, ctx=ctx, noises=noises)


def evaluate_policy(policy, model: ImplicitModel, n_histories: int, contrastive: int,
                    seed: int, steps: int | None = None, critic=None,
                    policy_kind: str = "network", measure_latency: bool = True,
                    ) -> EvalReport:
    """Fresh rollouts scored with paired lower/upper bounds.

    With an explicit likelihood the bounds are sPCE/sNMC on the same
    histories and shared contrastive draws; otherwise the trained
    critic's contrastive bound is reported and flagged likelihood-free.
    """
    steps = steps or model.default_T
    if hasattr(policy, "reset"):
        policy.reset()
    roll_rng = rngmod.stream(seed, "eval-rollout")
    contr_rng = rngmod.stream(seed, "eval-contrastive")
    inputs = _draw_eval_inputs(model, n_histories, steps, roll_rng)
    rb = rollout(policy, model, inputs)
    contrast = model.sample_prior(contrastive, contr_rng)

    if model.has_likelihood:
        lower, upper = likelihood_eval(model, rb, contrast)
        likelihood_free = False
        objective = "sPCE/sNMC"
    else:
        if critic is None:
            raise ValueError("likelihood-free evaluation needs the trained critic")
        lower = critic_bound_eval(critic, rb, contrast)
        upper = None
        likelihood_free = True
        objective = "InfoNCE(critic)"

    latency_mean = latency_rel = None
    if measure_latency:
        latency_mean, latency_rel = time_deployment(
            policy, model, n_trials=10, steps=steps, seed=seed
        )
    return EvalReport(
        model_id=model.model_id, policy_kind=policy_kind, objective=objective,
        T=steps, n_histories=n_histories, contrastive=contrastive, seed=seed,
        lower=lower, upper=upper, likelihood_free=likelihood_free,
        latency_mean_s=latency_mean, latency_rel_err=latency_rel,
    )


def likelihood_eval(model, rb: bounds.RolloutBatch, contrast: np.ndarray,
                    hist_chunk: int = 256):
    """Paired sPCE/sNMC, optionally fanned out over history chunks.

    Chunks are independent and results are concatenated in chunk order,
    so the reduction is deterministic whatever the completion order.
    """
    designs = rb.designs_data()
    outcomes = rb.outcomes_data()
    workers = worker_count()
    length = contrast.shape[0]
    if workers <= 1:
        return bounds.likelihood_bounds(model, designs, outcomes, rb.theta, contrast)
    n = rb.batch
    chunks = [(s, min(s + hist_chunk, n)) for s in range(0, n, hist_chunk)]

    def run(span):
        s, e = span
        return bounds.likelihood_bound_values(
            model, designs[s:e], outcomes[s:e], rb.theta[s:e], contrast
        )

    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, chunks))
    lower = np.concatenate([p[0] for p in parts])
    upper = np.concatenate([p[1] for p in parts])
    return (
        bounds._estimate(lower, length, "lower", "sPCE"),
        bounds._estimate(upper, length, "upper", "sNMC"),
    )


def critic_bound_eval(critic, rb: bounds.RolloutBatch, contrast: np.ndarray,
                      ) -> bounds.BoundEstimate:
    """Contrastive lower bound scored by a trained critic with a shared
    fresh contrastive set (the headline metric when the likelihood is
    intractable)."""
    pairs = list(zip(rb.designs, rb.outcomes))
    h_emb = critic.history_embedding(pairs, rb.batch)
    p0 = critic.param_embedding(rb.theta)
    joint = T.sum_(h_emb * p0, axis=1).data
    ref = critic.score_matrix(h_emb, critic.param_embedding(contrast)).data
    full = np.concatenate([joint[:, None], ref], axis=1)
    values = joint - np.logaddexp.reduce(full, axis=1) + np.log(full.shape[1])
    return bounds._estimate(values, contrast.shape[0], "lower", "InfoNCE")


# ---------------------------------------------------------------------------
# Posterior maps


def posterior_map(critic, history_pairs, grid: np.ndarray, prior_logpdf,
                  objective: str) -> np.ndarray:
    """Normalized posterior weights over a parameter grid.

    weight_i is proportional to prior(theta_i) * ratio(theta_i) with the
    density ratio read off the trained critic; weights sum to one.
    """
    if len(grid) == 0:
        raise ValueError("posterior_map: empty grid")
    ratio = bounds.density_ratio_from_critic(
        critic, history_pairs, grid, objective, normalizing_set=grid
    )
    log_prior = prior_logpdf(grid)
    log_w = log_prior + np.log(np.maximum(ratio, 1e-300))
    log_w -= log_w.max()
    weights = np.exp(log_w)
    total = weights.sum()
    if total <= 0.0 or not np.isfinite(total):
        raise ValueError("posterior_map: all-zero weights")
    return weights / total


def highest_weight_region(weights: np.ndarray, mass: float = 0.9) -> np.ndarray:
    """Boolean mask of the smallest weight set holding `mass` probability."""
    order = np.argsort(weights)[::-1]
    cum = np.cumsum(weights[order])
    take = int(np.searchsorted(cum, mass)) + 1
    mask = np.zeros(weights.size, dtype=bool)
    mask[order[:take]] = True
    return mask


# ---------------------------------------------------------------------------
# Deployment timing


def time_deployment(policy, model: ImplicitModel, n_trials: int, steps: int | None = None,
                    seed: int = 0) -> tuple[float, float]:
    """Wall-clock per design proposal over simulated sessions.

    The first design is excluded: it does not depend on data and can be
    precomputed. Returns (mean seconds, relative standard error).
    """
    steps = steps or model.default_T
    rng = rngmod.stream(seed, "timing")
    samples = []
    for _ in range(n_trials):
        inputs = _draw_eval_inputs(model, 1, steps, rng)
        history = History()
        design = policy.act(history)  # untimed: precomputable
        for t in range(steps - 1):
            y = model.simulate(
                inputs.theta, T.constant(design[None, :]), inputs.ctx, inputs.noises[t][:1]
            ).data[0]
            history.append(design, y)
            t0 = time.perf_counter()
            design = policy.act(history)
            samples.append(time.perf_counter() - t0)
    if not samples:
        return 0.0, 0.0
    arr = np.array(samples)
    mean = float(arr.mean())
    rel = float(arr.std(ddof=1) / np.sqrt(arr.size) / mean) if arr.size > 1 and mean > 0 else 0.0
    return mean, rel
