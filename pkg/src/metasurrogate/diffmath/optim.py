from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from metasurrogate.diffmath.params import ParamSet
from metasurrogate.errors import DimensionError, NumericError


@dataclass
class OptState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params, beta1=0.9, beta2=0.999, eps=1e-8) -> OptState:
    return OptState(
        step=0,
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(params, grads, state: OptState, lr: float):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``; inputs are untouched.

    A parameter whose gradient is identically zero is treated as absent from
    the loss: its value and moment estimates carry over unchanged.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} vs parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if not g.any():
            new_params[name] = p
            new_m[name] = state.m.get(name, np.zeros_like(p))
            new_v[name] = state.v.get(name, np.zeros_like(p))
            continue
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    return ParamSet(new_params), OptState(t, new_m, new_v, b1, b2, state.eps)
