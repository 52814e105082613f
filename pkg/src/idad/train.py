"""Training loops for adaptive design policies and their critics.

One step is: draw all randomness up front (parameter draws, per-step
simulator noise), roll the policy and simulator forward on a fresh tape
to produce a batch of histories, evaluate a variational bound, and take
one joint Adam ascent step on every parameter that participated. Because
the noise is drawn outside the differentiable pass, gradients flow
through the simulated outcomes into the policy exactly.

Three trainers share that skeleton: the likelihood-free one (critic
plus policy), the likelihood-based reference (policy alone on the
contrastive likelihood bound), and the static-design baselines that
optimize T free designs with a critic but no policy network.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import bounds, nets, rng as rngmod
from . import tensor as T
from .models import ImplicitModel, SIRModel, build_path_bank, get_model
from .nets import EncoderConfig
from .tensor import Tensor

OBJECTIVES = ("InfoNCE", "NWJ", "sLACE", "sPCE")


class TrainingDiverged(RuntimeError):
    """Objective became non-finite; carries the failing step index."""


@dataclass
class TrainConfig:
    model_id: str
    objective: str
    encoder: EncoderConfig
    T: int
    batch: int = 256
    steps: int = 5000
    lr: float = 5e-4
    seed: int = 0
    anneal_factor: float = 0.8
    anneal_patience: int = 2000
    lr_floor: float = 1e-6
    improvement_threshold: float = 1e-3
    grad_clip: float | None = None
    slace_contrastives: int = 31
    sir_bank_size: int = 2000
    model_kwargs: dict = field(default_factory=dict)
    preset: str = ""
    log_path: str | None = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective '{self.objective}' (one of {OBJECTIVES})")
        if self.batch < 2:
            raise ValueError("batch must be >= 2: in-batch contrastives need L >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig.from_dict(d["encoder"])
        return cls(**d)


@dataclass
class TrainingTrace:
    objective: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    overflow: list[int] = field(default_factory=list)
    wall: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.objective)


# ---------------------------------------------------------------------------
# Rollouts


@dataclass
class RolloutInputs:
    """All randomness for one batch of rollouts, drawn before the
    differentiable pass so the pass itself is a deterministic map."""

    theta: np.ndarray
    ctx: object
    noises: list[np.ndarray]


def draw_rollout_inputs(model: ImplicitModel, batch: int, steps: int,
                        rng: np.random.Generator) -> RolloutInputs:
    theta, ctx = model.draw_joint(batch, rng)
    noises = [model.sample_noise(batch, rng) for _ in range(steps)]
    return RolloutInputs(theta=theta, ctx=ctx, noises=noises)


def rollout(policy, model: ImplicitModel, inputs: RolloutInputs) -> bounds.RolloutBatch:
    """Alternate policy calls and simulator calls on the current tape."""
    batch = inputs.theta.shape[0]
    pairs: list[tuple[Tensor, Tensor]] = []
    designs: list[Tensor] = []
    outcomes: list[Tensor] = []
    for eps in inputs.noises:
        xi = policy.propose(pairs, batch)
        y = model.simulate(inputs.theta, xi, inputs.ctx, eps)
        pairs.append((xi, y))
        designs.append(xi)
        outcomes.append(y)
    return bounds.RolloutBatch(theta=inputs.theta, designs=designs, outcomes=outcomes)


class StaticDesignPolicy:
    """T free design vectors shared by every rollout row; the trainable
    half of the non-adaptive baselines."""

    def __init__(self, steps: int, design_dim: int, rng,
                 transform: tuple[float, float] | None):
        self.transform = transform
        self.raw = T.parameter(rng.normal(scale=0.5, size=(steps, design_dim)))

    def propose(self, pairs, batch: int) -> Tensor:
        t = len(pairs)
        row = T.take(self.raw, [t], axis=0)  # (1, d)
        if self.transform is not None:
            lo, hi = self.transform
            row = lo + (hi - lo) * T.sigmoid(row)
        return T.broadcast_to(row, (batch, self.raw.shape[1]))

    def act(self, history) -> np.ndarray:
        return self.propose(history.as_pairs() if hasattr(history, "as_pairs") else [], 1).data[0]

    def designs(self) -> np.ndarray:
        return self.propose([], 1).data  # transformed first row only

    def all_designs(self) -> np.ndarray:
        out = []
        for t in range(self.raw.shape[0]):
            row = self.raw.data[t]
            if self.transform is not None:
                lo, hi = self.transform
                row = lo + (hi - lo) / (1.0 + np.exp(-row))
            out.append(row)
        return np.stack(out)

    def params(self) -> dict[str, Tensor]:
        return {"static.designs": self.raw}


# ---------------------------------------------------------------------------
# Plateau learning-rate schedule


@dataclass
class PlateauState:
    lr: float
    factor: float = 0.8
    patience: int = 2000
    floor: float = 1e-6
    threshold: float = 1e-3
    best: float = -np.inf
    stagnant: int = 0


def lr_plateau_step(state: PlateauState, objective_value: float) -> float:
    """Anneal the rate after `patience` steps without improvement; an
    improvement must beat the best seen by `threshold` nats."""
    if state.patience < 1:
        raise ValueError("plateau patience must be >= 1")
    if objective_value > state.best + state.threshold:
        state.best = objective_value
        state.stagnant = 0
    else:
        state.stagnant += 1
        if state.stagnant >= state.patience:
            state.lr = max(state.lr * state.factor, state.floor)
            state.stagnant = 0
    return state.lr


# ---------------------------------------------------------------------------
# Shared step machinery


def _build_model(config: TrainConfig) -> ImplicitModel:
    model = get_model(config.model_id, **config.model_kwargs)
    if isinstance(model, SIRModel) and model.bank is None:
        model.bank = build_path_bank(config.sir_bank_size, seed=config.seed)
    return model


def _ascend(params: dict[str, Tensor], id_to_name: dict[int, str],
            grads_by_tensor: dict[Tensor, np.ndarray], adam: T.AdamState,
            clip: float | None) -> None:
    grads = {
        id_to_name[id(t)]: g for t, g in grads_by_tensor.items() if id(t) in id_to_name
    }
    if clip is not None:
        grads, _ = T.clip_global_norm(grads, clip)
    grads = {name: -g for name, g in grads.items()}  # Adam descends; we ascend
    T.adam_step(params, grads, adam)


def _check_ceiling(estimate: bounds.BoundEstimate, step: int) -> None:
    if estimate.objective in ("InfoNCE", "sLACE", "sPCE"):
        if estimate.value > estimate.ceiling() + 1e-9:
            raise AssertionError(
                f"step {step}: {estimate.objective} value {estimate.value:.6f} "
                f"exceeds log(L+1) = {estimate.ceiling():.6f}"
            )


class _StepLogger:
    def __init__(self, path: str | None):
        self._fh = open(path, "w") if path else None

    def log(self, step: int, value: float, lr: float, overflow: int) -> None:
        if self._fh is not None:
            record = {"step": step, "objective": value, "lr": lr, "overflow": overflow}
            self._fh.write(json.dumps(record) + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _run_loop(config: TrainConfig, model: ImplicitModel, policy, critic,
              objective_fn) -> TrainingTrace:
    params: dict[str, Tensor] = dict(policy.params())
    if critic is not None:
        params.update(critic.params())
    id_to_name = {id(t): n for n, t in params.items()}
    adam = T.AdamState(lr=config.lr)
    plateau = PlateauState(
        lr=config.lr, factor=config.anneal_factor, patience=config.anneal_patience,
        floor=config.lr_floor, threshold=config.improvement_threshold,
    )
    rollout_rng = rngmod.stream(config.seed, "train-rollout")
    shuffle_rng = rngmod.stream(config.seed, "train-shuffle")
    trace = TrainingTrace()
    logger = _StepLogger(config.log_path)
    try:
        for step in range(config.steps):
            t0 = time.perf_counter()
            inputs = draw_rollout_inputs(model, config.batch, config.T, rollout_rng)
            with T.Tape() as tape:
                rb = rollout(policy, model, inputs)
                result = objective_fn(rb, shuffle_rng)
                value = result.estimate.value
                if not np.isfinite(value):
                    raise TrainingDiverged(f"objective became non-finite at step {step}")
                grads = tape.backward(result.objective)
            _check_ceiling(result.estimate, step)
            _ascend(params, id_to_name, grads, adam, config.grad_clip)
            adam.lr = lr_plateau_step(plateau, value)
            trace.objective.append(value)
            trace.lr.append(adam.lr)
            trace.overflow.append(result.estimate.overflow)
            trace.wall.append(time.perf_counter() - t0)
            logger.log(step, value, adam.lr, result.estimate.overflow)
    finally:
        logger.close()
    return trace


# ---------------------------------------------------------------------------
# Trainers


def train_idad(config: TrainConfig, model: ImplicitModel | None = None):
    """Jointly train a policy network and critic on a likelihood-free
    bound. Returns (policy, critic, model, trace)."""
    if config.objective not in ("InfoNCE", "NWJ", "sLACE"):
        raise ValueError("likelihood-free training needs InfoNCE, NWJ or sLACE")
    model = model or _build_model(config)
    policy = nets.PolicyNet(config.encoder, rngmod.stream(config.seed, "init-policy"))
    critic = nets.CriticNet(config.encoder, rngmod.stream(config.seed, "init-critic"))
    slace_rng = rngmod.stream(config.seed, "train-slace")
    proposal = bounds.PriorProposal(model)

    def objective_fn(rb, shuffle_rng):
        if config.objective == "InfoNCE":
            return bounds.infonce(rb, critic)
        if config.objective == "NWJ":
            return bounds.nwj(rb, critic, shuffle_rng)
        return bounds.slace(rb, critic, proposal, config.slace_contrastives,
                            slace_rng, model.prior_logpdf)

    trace = _run_loop(config, model, policy, critic, objective_fn)
    return policy, critic, model, trace


def train_dad(config: TrainConfig, model: ImplicitModel | None = None):
    """Train a policy alone on the explicit-likelihood contrastive bound
    (the reference for how much the critic costs). Returns
    (policy, model, trace)."""
    if config.objective != "sPCE":
        raise ValueError("likelihood-based training uses the sPCE objective")
    model = model or _build_model(config)
    if not model.has_likelihood:
        raise ValueError(f"{model.model_id}: likelihood unavailable; cannot train on sPCE")
    policy = nets.PolicyNet(config.encoder, rngmod.stream(config.seed, "init-policy"))

    def objective_fn(rb, _shuffle_rng):
        ll = model.log_likelihood_pairs(rb.designs, rb.outcomes, rb.theta)
        idx = np.arange(rb.batch)
        values = bounds.infonce_values(T.select_pairs(ll, idx, idx), ll)
        estimate = bounds._estimate(values.data, rb.batch - 1, "lower", "sPCE")
        return bounds.BoundResult(T.mean(values), estimate)

    trace = _run_loop(config, model, policy, None, objective_fn)
    return policy, model, trace


def train_static(config: TrainConfig, model: ImplicitModel | None = None):
    """Optimize T fixed designs jointly with a critic (no policy
    network); the non-adaptive baselines. Returns
    (static policy, critic, model, trace)."""
    if config.objective not in ("InfoNCE", "NWJ"):
        raise ValueError("static baselines train on InfoNCE or NWJ")
    model = model or _build_model(config)
    box = model.design_box
    static = StaticDesignPolicy(
        config.T, model.design_dim, rngmod.stream(config.seed, "init-static"), box
    )
    critic = nets.CriticNet(config.encoder, rngmod.stream(config.seed, "init-critic"))

    def objective_fn(rb, shuffle_rng):
        if config.objective == "InfoNCE":
            return bounds.infonce(rb, critic)
        return bounds.nwj(rb, critic, shuffle_rng)

    trace = _run_loop(config, model, static, critic, objective_fn)
    return static, critic, model, trace
