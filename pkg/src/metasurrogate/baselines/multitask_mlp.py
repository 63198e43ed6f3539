"""Multitask MLP: one regressor fit on the pooled data of every task.

Task identity is never given to the network, so on a family of tasks it can at
best learn the average input-output map.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from metasurrogate.diffmath import ParamSet, adam_init, adam_step, init_mlp, mlp_apply, value_and_gradient
from metasurrogate.diffmath import tensor as T


@dataclass(frozen=True)
class MLPConfig:
    input_dim: int
    output_dim: int
    hidden_sizes: tuple = (128, 128)
    activation: str = "relu"

    @property
    def layers(self) -> list:
        return [self.input_dim, *self.hidden_sizes, self.output_dim]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


def init_multitask_mlp(config: MLPConfig, rng) -> ParamSet:
    return ParamSet(init_mlp("mlp", config.layers, rng))


def mlp_predict(params, config: MLPConfig, x) -> np.ndarray:
    return mlp_apply(params, np.atleast_2d(x), config.layers, config.activation, prefix="mlp")


def mse_loss(params, config: MLPConfig, x, y):
    diff = T.sub(mlp_apply(params, x, config.layers, config.activation, prefix="mlp"), y)
    return T.mean(T.square(diff))


def regression_steps(params, config: MLPConfig, x, y, steps: int, lr: float, state=None):
    """Plain full-batch Adam on squared error; returns (params, state, losses)."""
    state = adam_init(params) if state is None else state
    losses = []
    for _ in range(steps):
        loss, grads = value_and_gradient(lambda p: mse_loss(p, config, x, y), params)
        losses.append(loss)
        if lr > 0:
            params, state = adam_step(params, grads, state, lr)
    return params, state, losses


def multitask_mlp_fit(source, config: MLPConfig, iters: int, rng: np.random.Generator, lr: float = 1e-3,
                      batch_tasks: int = 16, points_per_task: int = 32, init=None):
    """Pooled regression: each step mixes random points from ``batch_tasks`` draws of ``source``.

    Returns ``(params, loss_trace)``.
    """
    params = init_multitask_mlp(config, rng) if init is None else init
    state = adam_init(params)
    trace = []
    for _ in range(iters):
        xs, ys = [], []
        for _ in range(batch_tasks):
            x, y = source.sample_task(rng)
            idx = rng.permutation(len(x))[:points_per_task]
            xs.append(x[idx])
            ys.append(y[idx])
        x, y = np.vstack(xs), np.vstack(ys)
        loss, grads = value_and_gradient(lambda p: mse_loss(p, config, x, y), params)
        trace.append(loss)
        if lr > 0:
            params, state = adam_step(params, grads, state, lr)
    return params, trace
