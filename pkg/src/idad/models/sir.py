"""Stochastic SIR epidemic model driven by an Ito SDE.

State is (susceptible, infected) in a closed population; infection and
recovery events enter as drift plus square-root diffusion terms, so the
paths are continuous and the observable (infected count at the chosen
measurement time) is differentiable in the design. Paths are expensive,
so they are pre-simulated on a fixed time grid into a bank paired with
their parameter draws; training resamples bank rows and reads the bank
by linear interpolation, whose gradient in the measurement time is the
local path slope.

Because only the interpolated path is observed, the model has no
tractable observation density.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from .. import tensor as T
from ..tensor import Tensor
from .base import ImplicitModel

BANK_MAGIC = b"IDADSIRB"
BANK_VERSION = 1

POPULATION = 500.0
TIME_STEP = 1e-2
HORIZON = 100.0
# printed initial state (0, 2) leaves nobody to infect; start the
# remaining population susceptible instead
INITIAL_STATE = (POPULATION - 2.0, 2.0)


@dataclass
class SDEPathGrid:
    """States on the uniform simulation grid for a batch of paths."""

    times: np.ndarray  # (n_grid,)
    states: np.ndarray  # (n_paths, n_grid, 2) -> (S, I)
    seed: int | None = None

    @property
    def infected(self) -> np.ndarray:
        return self.states[:, :, 1]


def euler_maruyama(theta: np.ndarray, dt: float, horizon: float,
                   eps_path: np.ndarray, x0=INITIAL_STATE,
                   population: float = POPULATION) -> SDEPathGrid:
    """Explicit first-order SDE stepping with post-step clamping.

    theta: (n, 2) infection/recovery rates; eps_path: (n, steps, 2)
    standard normal increments, one column per noise channel. States are
    clamped to S >= 0 and 0 <= I <= population - S after every step,
    since the square-root diffusion is undefined for negative states.
    """
    if dt <= 0:
        raise ValueError("euler_maruyama: time step must be positive")
    theta = np.atleast_2d(theta)
    n = theta.shape[0]
    steps = int(round(horizon / dt))
    if eps_path.shape != (n, steps, 2):
        raise ValueError(f"euler_maruyama: noise shape {eps_path.shape} != {(n, steps, 2)}")
    beta = theta[:, 0]
    gamma = theta[:, 1]
    times = np.arange(steps + 1) * dt
    states = np.empty((n, steps + 1, 2))
    s = np.full(n, float(x0[0]))
    i = np.full(n, float(x0[1]))
    states[:, 0, 0] = s
    states[:, 0, 1] = i
    sqrt_dt = np.sqrt(dt)
    for j in range(steps):
        infection = beta * s * i / population
        recovery = gamma * i
        noise_inf = np.sqrt(infection) * sqrt_dt * eps_path[:, j, 0]
        noise_rec = np.sqrt(recovery) * sqrt_dt * eps_path[:, j, 1]
        s = s - infection * dt - noise_inf
        i = i + (infection - recovery) * dt + noise_inf - noise_rec
        np.clip(s, 0.0, population, out=s)
        np.clip(i, 0.0, population - s, out=i)
        states[:, j + 1, 0] = s
        states[:, j + 1, 1] = i
    return SDEPathGrid(times=times, states=states, seed=None)


def observe_path(values: np.ndarray, times: np.ndarray, tau: float) -> float:
    """Linear interpolation of one stored path at measurement time tau."""
    if tau < times[0] or tau > times[-1]:
        raise ValueError(f"measurement time {tau} outside horizon [{times[0]}, {times[-1]}]")
    return float(np.interp(tau, times, values))


# ---------------------------------------------------------------------------
# Path bank


@dataclass
class PathBank:
    """Pre-simulated infected-count paths paired with their parameters."""

    times: np.ndarray     # (n_grid,)
    theta: np.ndarray     # (count, 2)
    infected: np.ndarray  # (count, n_grid)
    population: float
    dt: float
    horizon: float
    seed: int

    @property
    def count(self) -> int:
        return self.theta.shape[0]


def build_path_bank(count: int, seed: int, chunk: int = 256) -> PathBank:
    """Simulate `count` prior draws and their full paths, reproducibly."""
    model = SIRModel(bank=None)
    prior_rng = rngmod.stream(seed, "sir-bank-prior")
    noise_rng = rngmod.stream(seed, "sir-bank-noise")
    theta = model.sample_prior(count, prior_rng)
    steps = int(round(HORIZON / TIME_STEP))
    times = np.arange(steps + 1) * TIME_STEP
    infected = np.empty((count, steps + 1))
    for start in range(0, count, chunk):
        stop = min(start + chunk, count)
        eps = noise_rng.standard_normal(size=(stop - start, steps, 2))
        grid = euler_maruyama(theta[start:stop], TIME_STEP, HORIZON, eps)
        infected[start:stop] = grid.infected
    return PathBank(
        times=times, theta=theta, infected=infected,
        population=POPULATION, dt=TIME_STEP, horizon=HORIZON, seed=seed,
    )


def save_path_bank(path: str, bank: PathBank) -> None:
    """Binary file: 16-byte magic+version header, then little-endian
    float64 sections (grid, parameter draws, infected states), plus a
    human-readable sidecar `<path>.meta` describing the contents.
    """
    buf = io.BytesIO()
    buf.write(BANK_MAGIC)
    buf.write(struct.pack("<II", BANK_VERSION, 0))
    buf.write(bank.times.astype("<f8").tobytes())
    buf.write(bank.theta.astype("<f8").tobytes())
    buf.write(bank.infected.astype("<f8").tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)
    meta = (
        f"population = {bank.population}\n"
        f"dt = {bank.dt}\n"
        f"horizon = {bank.horizon}\n"
        f"seed = {bank.seed}\n"
        f"count = {bank.count}\n"
        f"grid_points = {bank.times.size}\n"
    )
    tmp = path + ".meta.tmp"
    with open(tmp, "w") as fh:
        fh.write(meta)
    os.replace(tmp, path + ".meta")


def load_path_bank(path: str) -> PathBank:
    meta: dict[str, str] = {}
    with open(path + ".meta") as fh:
        for line in fh:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    count = int(meta["count"])
    n_grid = int(meta["grid_points"])
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != BANK_MAGIC:
            raise ValueError(f"bad path-bank magic {magic!r}")
        version, _ = struct.unpack("<II", fh.read(8))
        if version != BANK_VERSION:
            raise ValueError(f"unsupported path-bank version {version} (reader supports {BANK_VERSION})")
        data = np.frombuffer(fh.read(), dtype="<f8")
    expected = n_grid + count * 2 + count * n_grid
    if data.size != expected:
        raise ValueError(f"truncated path bank: {data.size} values, expected {expected}")
    times = data[:n_grid].copy()
    theta = data[n_grid:n_grid + 2 * count].reshape(count, 2).copy()
    infected = data[n_grid + 2 * count:].reshape(count, n_grid).copy()
    return PathBank(
        times=times, theta=theta, infected=infected,
        population=float(meta["population"]), dt=float(meta["dt"]),
        horizon=float(meta["horizon"]), seed=int(meta["seed"]),
    )


# ---------------------------------------------------------------------------
# Model


class SIRModel(ImplicitModel):
    model_id = "sir"
    exchangeable = False
    has_likelihood = False
    design_dim = 1
    outcome_dim = 1
    param_dim = 2
    noise_dim = 0
    design_box = (0.0, HORIZON)
    baseline_box = (0.0, HORIZON)
    default_T = 5

    # underlying normal (mean, std) for log beta and log gamma
    log_beta = (0.50, 0.50)
    log_gamma = (0.10, 0.50)

    def __init__(self, bank: PathBank | None = None):
        self.bank = bank

    def sample_prior(self, n, rng):
        z = rng.standard_normal(size=(n, 2))
        beta = np.exp(self.log_beta[0] + self.log_beta[1] * z[:, 0])
        gamma = np.exp(self.log_gamma[0] + self.log_gamma[1] * z[:, 1])
        return np.column_stack([beta, gamma])

    def prior_logpdf(self, theta):
        theta = np.atleast_2d(theta)
        log_t = np.log(theta)
        out = np.zeros(theta.shape[0])
        for col, (mu, sd) in enumerate((self.log_beta, self.log_gamma)):
            resid = (log_t[:, col] - mu) / sd
            out += -0.5 * resid * resid - np.log(sd) - 0.5 * np.log(2 * np.pi) - log_t[:, col]
        return out

    def draw_joint(self, n, rng):
        """Resample (theta, path) rows from the bank, with replacement."""
        if self.bank is None:
            raise RuntimeError("sir: no path bank attached; build or load one first")
        idx = rng.integers(0, self.bank.count, size=n)
        return self.bank.theta[idx].copy(), {"paths": self.bank.infected[idx]}

    def fresh_context(self, theta: np.ndarray, rng: np.random.Generator):
        """Simulate new paths for the given draws (evaluation/deployment)."""
        theta = np.atleast_2d(theta)
        steps = int(round(HORIZON / TIME_STEP))
        eps = rng.standard_normal(size=(theta.shape[0], steps, 2))
        grid = euler_maruyama(theta, TIME_STEP, HORIZON, eps)
        return {"paths": grid.infected}

    def simulate(self, theta, xi, ctx, eps):
        """Read I(tau) from each row's stored path at tau = design."""
        self.check_design(xi.data)
        paths = ctx["paths"]
        n_grid = paths.shape[1]
        tau = xi.data[:, 0]
        j = np.minimum((tau / TIME_STEP).astype(np.intp), n_grid - 2)
        left = paths[np.arange(paths.shape[0]), j][:, None]
        right = paths[np.arange(paths.shape[0]), j + 1][:, None]
        frac = (xi - T.constant((j * TIME_STEP)[:, None])) * (1.0 / TIME_STEP)
        return T.constant(left) + T.constant(right - left) * frac
