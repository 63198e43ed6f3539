"""Frictionless cart-pole swing-up with per-task masses."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

STATE_DIM = 5  # x, x_dot, sin(theta), cos(theta), theta_dot; theta = 0 is upright
POLE_MASS_RANGE = (0.01, 1.0)
CART_MASS_RANGE = (0.1, 3.0)


@dataclass(frozen=True)
class CartPoleParams:
    pole_mass: float = 0.1
    cart_mass: float = 1.0
    pole_length: float = 0.6
    gravity: float = 9.81
    dt: float = 0.05
    force_scale: float = 10.0
    episode_length: int = 100
    track_limit: float = 3.0
    reward_width: float = 0.6
    substeps: int = 25

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.pole_mass <= 0 or self.cart_mass <= 0:
            raise ValueError("masses must be > 0")


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray


def make_state(x=0.0, x_dot=0.0, theta=math.pi, theta_dot=0.0) -> np.ndarray:
    return np.array([x, x_dot, math.sin(theta), math.cos(theta), theta_dot])


def reward(state: np.ndarray, params: CartPoleParams) -> float:
    """exp(-d^2 / w^2), d = distance from the pole tip to the point one pole length above the origin."""
    x, _, s, c, _ = state
    length = params.pole_length
    dx = x + length * s
    dy = length * c - length
    return math.exp(-(dx * dx + dy * dy) / params.reward_width**2)


def _accelerations(theta, x_dot, theta_dot, force, p: CartPoleParams):
    total = p.cart_mass + p.pole_mass
    sin, cos = math.sin(theta), math.cos(theta)
    tmp = (-force - p.pole_mass * p.pole_length * theta_dot**2 * sin) / total
    theta_acc = (p.gravity * sin + cos * tmp) / (p.pole_length * (4.0 / 3.0 - p.pole_mass * cos**2 / total))
    x_acc = (force + p.pole_mass * p.pole_length * (theta_dot**2 * sin - theta_acc * cos)) / total
    return x_acc, theta_acc


def integrate(state: np.ndarray, action: float, params: CartPoleParams, dt: Optional[float] = None, substeps: Optional[int] = None) -> np.ndarray:
    """Advance by ``dt`` (default ``params.dt``) using ``substeps`` semi-implicit Euler steps.

    The force is held constant over the whole interval.
    """
    dt = params.dt if dt is None else dt
    n = params.substeps if substeps is None else substeps
    h = dt / n
    x, x_dot, s, c, theta_dot = (float(v) for v in state)
    theta = math.atan2(s, c)
    force = params.force_scale * float(np.clip(action, -1.0, 1.0))
    for _ in range(n):
        x_acc, theta_acc = _accelerations(theta, x_dot, theta_dot, force, params)
        x_dot += h * x_acc
        theta_dot += h * theta_acc
        x += h * x_dot
        theta += h * theta_dot
        if abs(x) > params.track_limit:
            x = math.copysign(params.track_limit, x)
            x_dot = 0.0
    return np.array([x, x_dot, math.sin(theta), math.cos(theta), theta_dot])


def cartpole_step(state: np.ndarray, action: float, params: CartPoleParams) -> Transition:
    if not -1.0 <= action <= 1.0:
        raise ValueError(f"action {action} outside [-1, 1]")
    nxt = integrate(state, action, params)
    return Transition(np.asarray(state, dtype=np.float64), float(action), reward(nxt, params), nxt)


def energy(state: np.ndarray, params: CartPoleParams) -> float:
    """Total mechanical energy, pole modelled as a uniform rod of half-length ``pole_length``."""
    _, x_dot, _, c, theta_dot = state
    m, mc, length = params.pole_mass, params.cart_mass, params.pole_length
    kinetic = 0.5 * (m + mc) * x_dot**2 + m * length * x_dot * theta_dot * c + 0.5 * (4.0 / 3.0) * m * length**2 * theta_dot**2
    return kinetic + m * params.gravity * length * c


def sample_cartpole_task(rng: np.random.Generator, base: CartPoleParams = CartPoleParams()) -> CartPoleParams:
    return replace(
        base,
        pole_mass=float(rng.uniform(*POLE_MASS_RANGE)),
        cart_mass=float(rng.uniform(*CART_MASS_RANGE)),
    )


def exploration_action(t: int, a0: float, u: float, w) -> float:
    """Random-walk exploration ``sin(a0 + u * sum(w[:t]))``."""
    w = np.asarray(w, dtype=np.float64)
    return math.sin(a0 + u * float(np.sum(w[:t])))


def exploration_rollout(params: CartPoleParams, rng: np.random.Generator, initial: Optional[np.ndarray] = None):
    """One episode under the random-walk policy; returns the list of transitions."""
    a0 = rng.uniform(0.0, 2.0 * math.pi)
    u = rng.uniform(0.0, 1.0)
    w = rng.standard_normal(params.episode_length)
    state = make_state() if initial is None else initial
    out = []
    walk = 0.0
    for t in range(params.episode_length):
        # running sum equals exploration_action(t, a0, u, w)
        action = math.sin(a0 + u * walk)
        tr = cartpole_step(state, action, params)
        out.append(tr)
        state = tr.next_state
        walk += w[t]
    return out


def random_policy_rollout(params: CartPoleParams, rng: np.random.Generator) -> float:
    state = make_state()
    total = 0.0
    for _ in range(params.episode_length):
        tr = cartpole_step(state, float(rng.uniform(-1.0, 1.0)), params)
        total += tr.reward
        state = tr.next_state
    return total


def transitions_to_arrays(transitions) -> tuple[np.ndarray, np.ndarray]:
    """Model inputs (s, a) and targets (s' - s, r)."""
    x = np.array([np.append(t.state, t.action) for t in transitions])
    y = np.array([np.append(t.next_state - t.state, t.reward) for t in transitions])
    return x, y
