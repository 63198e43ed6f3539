"""Model-based control on cart-pole: meta-trained NP dynamics plus a CEM planner.

The NP maps normalised (state, action) to normalised (state delta, reward).
Adapting to a new system is conditioning on its replay transitions; no weights change.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from metasurrogate.baselines.multitask_mlp import MLPConfig, mlp_predict, multitask_mlp_fit
from metasurrogate.decision.bo import RunRecord
from metasurrogate.diffmath import ParamSet
from metasurrogate.neural_process import NeuralProcess, NPConfig, PointSet, meta_train
from metasurrogate.tasks.cartpole import (
    STATE_DIM,
    CartPoleParams,
    cartpole_step,
    exploration_rollout,
    make_state,
    sample_cartpole_task,
    transitions_to_arrays,
)

log = logging.getLogger(__name__)

IN_DIM = STATE_DIM + 1
OUT_DIM = STATE_DIM + 1


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 20
    population: int = 300
    elites: int = 30
    iterations: int = 4
    gamma: float = 1.0
    init_std: float = 1.0
    min_std: float = 0.05

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 1 <= self.elites <= self.population:
            raise ValueError(f"need 1 <= elites <= population, got {self.elites} and {self.population}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass(frozen=True)
class Normalizer:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray) -> "Normalizer":
        def _std(a):
            s = a.std(axis=0)
            return np.where(s > 1e-8, s, 1.0)

        return cls(x.mean(axis=0), _std(x), y.mean(axis=0), _std(y))

    def norm_x(self, x):
        return (x - self.x_mean) / self.x_std

    def norm_y(self, y):
        return (y - self.y_mean) / self.y_std

    def denorm_y(self, y):
        return y * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("x_mean", "x_std", "y_mean", "y_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("x_mean", "x_std", "y_mean", "y_std")))


@dataclass(frozen=True)
class MBRLConfig:
    num_tasks: int = 2000
    rollouts_per_task: int = 10
    rollout_length: int = 100
    iters: int = 20000
    batch: int = 16
    lr: float = 1e-4
    points_per_draw: int = 400
    max_extra_targets: int = 100
    np_config: NPConfig = field(
        default_factory=lambda: NPConfig(IN_DIM, OUT_DIM, max_context_size=300, min_sigma=0.1, latent_dim=64)
    )


@dataclass
class CartPoleTransitionSource:
    """Training source: each draw is a random subset of one task's normalised transitions."""

    data: list  # (x, y) per task, already normalised
    points_per_draw: int = 400
    input_dim: int = IN_DIM
    output_dim: int = OUT_DIM

    def sample_task(self, rng: np.random.Generator):
        x, y = self.data[int(rng.integers(len(self.data)))]
        idx = rng.permutation(len(x))[: self.points_per_draw]
        return x[idx], y[idx]

    def describe(self) -> dict:
        return {"kind": "cartpole", "num_tasks": len(self.data), "points_per_draw": self.points_per_draw}


def collect_cartpole_data(num_tasks: int, rollouts: int, length: int, rng: np.random.Generator) -> list:
    """Raw (params, x, y) per sampled task from exploration rollouts."""
    out = []
    base = CartPoleParams(episode_length=length)
    for _ in range(num_tasks):
        params = sample_cartpole_task(rng, base)
        trans = []
        for _ in range(rollouts):
            trans.extend(exploration_rollout(params, rng))
        x, y = transitions_to_arrays(trans)
        out.append((params, x, y))
    return out


@dataclass
class MBRLModel:
    np_model: NeuralProcess
    normalizer: Normalizer
    loss_trace: list = field(default_factory=list)

    def condition(self, x_raw: np.ndarray, y_raw: np.ndarray) -> "NPDynamicsView":
        ctx = PointSet(self.normalizer.norm_x(np.atleast_2d(x_raw).reshape(-1, IN_DIM)),
                       self.normalizer.norm_y(np.atleast_2d(y_raw).reshape(-1, OUT_DIM)))
        return NPDynamicsView(self, self.np_model.condition(ctx))


@dataclass(frozen=True)
class NPDynamicsView:
    model: MBRLModel
    posterior: object

    def predict_mean(self, x_raw: np.ndarray, z: Optional[np.ndarray] = None) -> np.ndarray:
        """Raw-scale (delta, reward) predictions under latent ``z`` (posterior mean by default)."""
        z = self.posterior.mean if z is None else z
        out = self.model.np_model.decode(self.model.normalizer.norm_x(x_raw), z).mean
        return self.model.normalizer.denorm_y(out)

    def dynamics(self, rng: np.random.Generator) -> Callable:
        """One latent draw; returns a batched step function (states, actions) -> (next_states, rewards)."""
        q = self.posterior
        z = q.mean + q.stddev * rng.standard_normal(len(q.mean))

        def step(states, actions):
            out = self.predict_mean(np.hstack([states, actions.reshape(-1, 1)]), z)
            return states + out[:, :STATE_DIM], out[:, STATE_DIM]

        return step


@dataclass
class MLPDynamics:
    """Pooled MLP on the same normalised data; conditioning is a no-op."""

    params: ParamSet
    config: MLPConfig
    normalizer: Normalizer

    def condition(self, x_raw=None, y_raw=None) -> "MLPDynamics":
        return self

    def predict_mean(self, x_raw: np.ndarray, z=None) -> np.ndarray:
        return self.normalizer.denorm_y(mlp_predict(self.params, self.config, self.normalizer.norm_x(x_raw)))

    def dynamics(self, rng: np.random.Generator) -> Callable:
        def step(states, actions):
            out = self.predict_mean(np.hstack([states, actions.reshape(-1, 1)]))
            return states + out[:, :STATE_DIM], out[:, STATE_DIM]

        return step


def _prepare(config: MBRLConfig, rng: np.random.Generator):
    raw = collect_cartpole_data(config.num_tasks, config.rollouts_per_task, config.rollout_length, rng)
    norm = Normalizer.fit(np.vstack([x for _, x, _ in raw]), np.vstack([y for _, _, y in raw]))
    data = [(norm.norm_x(x), norm.norm_y(y)) for _, x, y in raw]
    return norm, CartPoleTransitionSource(data, config.points_per_draw)


def mbrl_meta_train(config: MBRLConfig, rng: np.random.Generator, log_every: int = 0) -> MBRLModel:
    """Exploration data from sampled tasks, then episodic NP training on per-task splits."""
    norm, source = _prepare(config, rng)
    res = meta_train(config.np_config, source, config.iters, config.batch, config.lr, rng,
                     max_extra_targets=config.max_extra_targets, log_every=log_every)
    if not res.loss_trace:
        # no updates: report the loss of the initial parameters on one batch
        probe = meta_train(config.np_config, source, 1, config.batch, 0.0, rng, init=res.model.params,
                           max_extra_targets=config.max_extra_targets)
        res.loss_trace.extend(probe.loss_trace)
    return MBRLModel(res.model, norm, list(res.loss_trace))


def mlp_dynamics_train(config: MBRLConfig, mlp: MLPConfig, rng: np.random.Generator, iters: Optional[int] = None,
                       lr: Optional[float] = None) -> MLPDynamics:
    norm, source = _prepare(config, rng)
    params, _ = multitask_mlp_fit(source, mlp, config.iters if iters is None else iters, rng,
                                  lr=config.lr if lr is None else lr)
    return MLPDynamics(params, mlp, norm)


# ---------------------------------------------------------------- planning


def rollout_returns(step: Callable, state: np.ndarray, actions: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted model returns for a population of action sequences (P, H) from ``state``."""
    p, h = actions.shape
    states = np.repeat(np.asarray(state, dtype=np.float64).reshape(1, -1), p, axis=0)
    total = np.zeros(p)
    disc = 1.0
    for t in range(h):
        states, rewards = step(states, actions[:, t])
        total += disc * rewards
        disc *= gamma
        if disc == 0.0:
            break
    return total


def cem_plan_sequence(view, state, cfg: PlannerConfig, rng: np.random.Generator, init_mean: Optional[np.ndarray] = None):
    """Final CEM mean over action sequences of length H."""
    step = view.dynamics(rng)
    mean = np.zeros(cfg.horizon) if init_mean is None else np.asarray(init_mean, dtype=np.float64).copy()
    std = np.full(cfg.horizon, cfg.init_std)
    for _ in range(cfg.iterations):
        acts = np.clip(mean + std * rng.standard_normal((cfg.population, cfg.horizon)), -1.0, 1.0)
        ret = rollout_returns(step, state, acts, cfg.gamma)
        elite = acts[np.argsort(-ret, kind="stable")[: cfg.elites]]
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), cfg.min_std)
    return mean


def cem_plan(view, state, cfg: PlannerConfig, rng: np.random.Generator, init_mean: Optional[np.ndarray] = None) -> float:
    """First action of the refined plan, clamped to [-1, 1]."""
    return float(np.clip(cem_plan_sequence(view, state, cfg, rng, init_mean)[0], -1.0, 1.0))


# ---------------------------------------------------------------- meta-test


class ReplayBuffer:
    """Real-environment trajectories; oldest trajectories are evicted beyond ``capacity`` transitions."""

    def __init__(self, capacity: Optional[int] = None):
        self.capacity = capacity
        self._episodes: deque = deque()
        self._size = 0

    def __len__(self):
        return self._size

    @property
    def episodes(self) -> list:
        return list(self._episodes)

    def append(self, trajectory: list) -> None:
        self._episodes.append(list(trajectory))
        self._size += len(trajectory)
        while self.capacity is not None and self._size > self.capacity and len(self._episodes) > 1:
            self._size -= len(self._episodes.popleft())

    def arrays(self):
        trans = [t for ep in self._episodes for t in ep]
        if not trans:
            return np.zeros((0, IN_DIM)), np.zeros((0, OUT_DIM))
        return transitions_to_arrays(trans)

    def sample(self, max_size: int, rng: np.random.Generator):
        """Uniform subsample without replacement, capped at ``max_size``."""
        x, y = self.arrays()
        if len(x) > max_size:
            idx = np.sort(rng.choice(len(x), size=max_size, replace=False))
            x, y = x[idx], y[idx]
        return x, y


def run_episode(view, params: CartPoleParams, cfg: PlannerConfig, rng: np.random.Generator):
    """One real episode with CEM at every step (warm-started by shifting the previous plan)."""
    state = make_state()
    trajectory, total = [], 0.0
    plan = None
    for _ in range(params.episode_length):
        if plan is not None:
            plan = np.append(plan[1:], 0.0)
        plan = cem_plan_sequence(view, state, cfg, rng, plan)
        tr = cartpole_step(state, float(np.clip(plan[0], -1.0, 1.0)), params)
        trajectory.append(tr)
        total += tr.reward
        state = tr.next_state
    return trajectory, total


def mbrl_test_loop(
    model,
    target: CartPoleParams,
    episodes: int,
    cfg: PlannerConfig,
    rng: np.random.Generator,
    max_context: int = 250,
    capacity: Optional[int] = None,
    seed: Optional[int] = None,
    records: Optional[list] = None,
) -> list:
    """Act, store, re-condition on a capped replay subsample; returns per-episode rewards."""
    buffer = ReplayBuffer(capacity)
    rewards = []
    for ep in range(episodes):
        start = time.perf_counter()
        view = model.condition(*buffer.sample(max_context, rng))
        trajectory, total = run_episode(view, target, cfg, rng)
        buffer.append(trajectory)
        rewards.append(total)
        if records is not None:
            records.append(RunRecord(iter=ep, chosen=ep, observed=total, seed=seed,
                                     wall_ms=1e3 * (time.perf_counter() - start), episode_reward=total))
        log.info("episode %d reward %.2f", ep, total)
    return rewards


def one_step_rmse(view, x_raw: np.ndarray, y_raw: np.ndarray) -> float:
    """Next-state RMSE (state columns only) of the view's mean prediction."""
    pred = view.predict_mean(x_raw)
    return float(np.sqrt(np.mean((pred[:, :STATE_DIM] - y_raw[:, :STATE_DIM]) ** 2)))
