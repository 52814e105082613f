"""Design policy and critic networks over experiment histories.

Both networks share the same two-stage history encoder: a pair MLP maps
each (design, outcome) pair to an m-dimensional token, and a pooling
stage aggregates the tokens. For exchangeable experiments the pooling is
one residual block of 8-head self-attention followed by a sum over time,
which is permutation invariant; for time-series-like models it is a
two-layer LSTM whose last top-layer hidden state is kept, which is
deliberately order sensitive.

The critic scores a (history, parameter) pair as the dot product of its
history embedding and parameter embedding, so a whole batch-vs-batch
score matrix is a single matrix product.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

Pairs = Sequence[tuple[Tensor, Tensor]]


@dataclass
class History:
    """Ordered, append-only record of (design, outcome) pairs."""

    designs: list[np.ndarray] = field(default_factory=list)
    outcomes: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.designs)

    def append(self, design, outcome) -> None:
        design = np.atleast_1d(np.asarray(design, dtype=np.float64))
        outcome = np.atleast_1d(np.asarray(outcome, dtype=np.float64))
        if self.designs and design.shape != self.designs[0].shape:
            raise ValueError("design dimension changed mid-history")
        if self.outcomes and outcome.shape != self.outcomes[0].shape:
            raise ValueError("outcome dimension changed mid-history")
        self.designs.append(design)
        self.outcomes.append(outcome)

    def as_pairs(self) -> Pairs:
        """Batch-of-one constant tensors, for single-session inference."""
        return [
            (T.constant(d[None, :]), T.constant(y[None, :]))
            for d, y in zip(self.designs, self.outcomes)
        ]


@dataclass(frozen=True)
class EncoderConfig:
    """Shapes and pooling choices shared by policy and critic."""

    design_dim: int
    outcome_dim: int
    param_dim: int
    encoding_dim: int
    pair_hidden: tuple[int, ...]
    pooling: str  # "attention" | "recurrent"
    heads: int = 8
    emitter_hidden: tuple[int, ...] = (64,)
    critic_head_hidden: tuple[int, ...] = (64,)
    param_hidden: tuple[int, ...] = (64,)
    design_transform: tuple[float, float] | None = None
    # parameter-encoder input scaling: x -> (log(x) - shift) / scale when
    # param_log is set (positive-support priors), else (x - shift) / scale
    param_log: bool = False
    param_shift: tuple[float, ...] = ()
    param_scale: tuple[float, ...] = ()
    design_scale: float = 1.0
    outcome_scale: float = 1.0

    def __post_init__(self):
        if self.pooling not in ("attention", "recurrent"):
            raise ValueError(f"unknown pooling kind '{self.pooling}'")
        if self.pooling == "attention" and self.encoding_dim % self.heads != 0:
            raise ValueError(
                f"encoding_dim {self.encoding_dim} not divisible by {self.heads} heads"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        for key in ("pair_hidden", "emitter_hidden", "critic_head_hidden", "param_hidden",
                    "param_shift", "param_scale"):
            d[key] = tuple(d[key])
        if d.get("design_transform") is not None:
            d["design_transform"] = tuple(d["design_transform"])
        return cls(**d)


# ---------------------------------------------------------------------------
# Layers


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear:
    def __init__(self, rng, fan_in: int, fan_out: int):
        self.w = T.parameter(_glorot(rng, fan_in, fan_out))
        self.b = T.parameter(np.zeros(fan_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.w) + self.b

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class MLP:
    """Fully connected stack with ReLU between layers, linear output."""

    def __init__(self, rng, sizes: Sequence[int]):
        self.layers = [Linear(rng, sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = T.relu(layer(x))
        return self.layers[-1](x)

    def params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.{i}"))
        return out


class SelfAttention:
    """One multi-head self-attention block with a residual connection."""

    def __init__(self, rng, dim: int, heads: int):
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = T.parameter(_glorot(rng, dim, dim))
        self.wk = T.parameter(_glorot(rng, dim, dim))
        self.wv = T.parameter(_glorot(rng, dim, dim))
        self.wo = T.parameter(_glorot(rng, dim, dim))

    def __call__(self, tokens: Tensor) -> Tensor:
        """tokens: (B, t, m) -> (B, t, m), permutation equivariant."""
        b, t, m = tokens.shape

        def split_heads(x):
            return T.transpose(T.reshape(x, (b, t, self.heads, self.head_dim)), (0, 2, 1, 3))

        q = split_heads(T.matmul(tokens, self.wq))
        k = split_heads(T.matmul(tokens, self.wk))
        v = split_heads(T.matmul(tokens, self.wv))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.head_dim))
        attended = T.matmul(T.softmax(scores, axis=-1), v)  # (B, H, t, dh)
        merged = T.reshape(T.transpose(attended, (0, 2, 1, 3)), (b, t, m))
        return tokens + T.matmul(merged, self.wo)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.wq": self.wq,
            f"{prefix}.wk": self.wk,
            f"{prefix}.wv": self.wv,
            f"{prefix}.wo": self.wo,
        }


class LSTM:
    """Stacked LSTM; forget-gate biases start at 1.0."""

    def __init__(self, rng, input_dim: int, hidden_dim: int, layers: int = 2):
        self.hidden_dim = hidden_dim
        self.cells = []
        for i in range(layers):
            d_in = input_dim if i == 0 else hidden_dim
            wx = T.parameter(_glorot(rng, d_in, 4 * hidden_dim))
            wh = T.parameter(_glorot(rng, hidden_dim, 4 * hidden_dim))
            b = np.zeros(4 * hidden_dim)
            b[hidden_dim: 2 * hidden_dim] = 1.0
            self.cells.append((wx, wh, T.parameter(b)))

    def last_hidden(self, tokens: Tensor) -> Tensor:
        """tokens: (B, t, m_in) -> last top-layer hidden state (B, m)."""
        b, t, _ = tokens.shape
        m = self.hidden_dim
        gates_idx = [np.arange(i * m, (i + 1) * m) for i in range(4)]
        d_in = tokens.shape[2]
        layer_inputs = [T.reshape(T.take(tokens, [s], axis=1), (b, d_in)) for s in range(t)]
        for wx, wh, bias in self.cells:
            h = T.constant(np.zeros((b, m)))
            c = T.constant(np.zeros((b, m)))
            outputs = []
            for x in layer_inputs:
                gates = T.matmul(x, wx) + T.matmul(h, wh) + bias
                i_g = T.sigmoid(T.take(gates, gates_idx[0], axis=1))
                f_g = T.sigmoid(T.take(gates, gates_idx[1], axis=1))
                g_g = T.tanh(T.take(gates, gates_idx[2], axis=1))
                o_g = T.sigmoid(T.take(gates, gates_idx[3], axis=1))
                c = f_g * c + i_g * g_g
                h = o_g * T.tanh(c)
                outputs.append(h)
            layer_inputs = outputs
        return layer_inputs[-1]

    def params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (wx, wh, b) in enumerate(self.cells):
            out[f"{prefix}.{i}.wx"] = wx
            out[f"{prefix}.{i}.wh"] = wh
            out[f"{prefix}.{i}.b"] = b
        return out


# ---------------------------------------------------------------------------
# History encoder


class HistoryEncoder:
    """Pair MLP plus pooling; an empty history encodes to the zero vector."""

    def __init__(self, config: EncoderConfig, rng):
        self.config = config
        d_pair = config.design_dim + config.outcome_dim
        self.pair_mlp = MLP(rng, [d_pair, *config.pair_hidden, config.encoding_dim])
        if config.pooling == "attention":
            self.attention = SelfAttention(rng, config.encoding_dim, config.heads)
            self.lstm = None
        else:
            self.attention = None
            self.lstm = LSTM(rng, config.encoding_dim, config.encoding_dim, layers=2)

    def embed_pairs(self, pairs: Pairs) -> Tensor | None:
        """Token matrix (B, t, m); None for an empty history."""
        if not pairs:
            return None
        cfg = self.config
        tokens = []
        for design, outcome in pairs:
            if cfg.design_scale != 1.0:
                design = design * (1.0 / cfg.design_scale)
            if cfg.outcome_scale != 1.0:
                outcome = outcome * (1.0 / cfg.outcome_scale)
            tokens.append(T.concat([design, outcome], axis=1))
        b = pairs[0][0].shape[0]
        t = len(pairs)
        flat = T.concat(tokens, axis=0)  # (t*B, d_pair)
        r = self.pair_mlp(flat)
        return T.transpose(T.reshape(r, (t, b, cfg.encoding_dim)), (1, 0, 2))

    def encode(self, pairs: Pairs, batch: int) -> Tensor:
        """Pooled history embedding (B, m)."""
        tokens = self.embed_pairs(pairs)
        if tokens is None:
            return T.constant(np.zeros((batch, self.config.encoding_dim)))
        if self.attention is not None:
            return T.sum_(self.attention(tokens), axis=1)
        return self.lstm.last_hidden(tokens)

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = self.pair_mlp.params(f"{prefix}.pair")
        if self.attention is not None:
            out.update(self.attention.params(f"{prefix}.attn"))
        else:
            out.update(self.lstm.params(f"{prefix}.lstm"))
        return out


# ---------------------------------------------------------------------------
# Policy and critic


class PolicyNet:
    """Deterministic design function: history -> next design."""

    def __init__(self, config: EncoderConfig, rng):
        self.config = config
        self.encoder = HistoryEncoder(config, rng)
        self.emitter = MLP(
            rng, [config.encoding_dim, *config.emitter_hidden, config.design_dim]
        )

    def propose(self, pairs: Pairs, batch: int) -> Tensor:
        """Next design for a batch of histories, inside the design box."""
        raw = self.emitter(self.encoder.encode(pairs, batch))
        box = self.config.design_transform
        if box is None:
            return raw
        lo, hi = box
        return lo + (hi - lo) * T.sigmoid(raw)

    def act(self, history: History) -> np.ndarray:
        """Single-history inference path (no gradient tracking)."""
        return self.propose(history.as_pairs(), batch=1).data[0]

    def params(self) -> dict[str, Tensor]:
        out = self.encoder.params("policy.enc")
        out.update(self.emitter.params("policy.emit"))
        return out


class CriticNet:
    """Separable critic: score(h, theta) = <E_h(h), E_theta(theta)>."""

    def __init__(self, config: EncoderConfig, rng):
        self.config = config
        self.encoder = HistoryEncoder(config, rng)
        self.head = MLP(
            rng, [config.encoding_dim, *config.critic_head_hidden, config.encoding_dim]
        )
        self.param_encoder = MLP(
            rng, [config.param_dim, *config.param_hidden, config.encoding_dim]
        )

    def history_embedding(self, pairs: Pairs, batch: int) -> Tensor:
        return self.head(self.encoder.encode(pairs, batch))

    def _param_input(self, theta: np.ndarray) -> np.ndarray:
        cfg = self.config
        x = np.asarray(theta, dtype=np.float64)
        if cfg.param_log:
            x = np.log(x)
        if cfg.param_shift:
            x = x - np.asarray(cfg.param_shift)
        if cfg.param_scale:
            x = x / np.asarray(cfg.param_scale)
        return x

    def param_embedding(self, theta: np.ndarray) -> Tensor:
        """theta: (n, d_theta) raw parameter draws -> (n, m)."""
        return self.param_encoder(T.constant(self._param_input(theta)))

    def score_matrix(self, h_emb: Tensor, p_emb: Tensor) -> Tensor:
        """(B, m) x (N, m) -> all-pairs scores (B, N)."""
        return T.matmul(h_emb, T.transpose(p_emb, (1, 0)))

    def score(self, history: History, theta: np.ndarray) -> float:
        h = self.history_embedding(history.as_pairs(), batch=1)
        p = self.param_embedding(np.asarray(theta, dtype=np.float64)[None, :])
        return float(self.score_matrix(h, p).data[0, 0])

    def params(self) -> dict[str, Tensor]:
        out = self.encoder.params("critic.enc")
        out.update(self.head.params("critic.head"))
        out.update(self.param_encoder.params("critic.param"))
        return out


def build_policy(config: EncoderConfig, rng) -> PolicyNet:
    return PolicyNet(config, rng)


def build_critic(config: EncoderConfig, rng) -> CriticNet:
    return CriticNet(config, rng)


def set_params(net, values: dict[str, np.ndarray]) -> None:
    """Load named arrays into an existing network (shapes must match)."""
    params = net.params()
    missing = set(params) - set(values)
    if missing:
        raise KeyError(f"missing parameter tensors: {sorted(missing)[:3]}...")
    for name, tensor in params.items():
        arr = np.asarray(values[name], dtype=np.float64)
        if arr.shape != tensor.shape:
            raise ValueError(f"shape mismatch for '{name}': {arr.shape} vs {tensor.shape}")
        tensor.data = arr.copy()
