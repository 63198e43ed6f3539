"""Two-level search over a pool of tasks, each with a finite set of positions.

An outer surrogate predicts each task's minimum from task features and picks
a task by Thompson sampling; ``l`` inner Thompson steps then search positions
within it. Observed per-task minima become the outer surrogate's context.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from metasurrogate.decision.bo import BORun, RunRecord, thompson_from_view
from metasurrogate.decision.metrics import scaled_min_curve
from metasurrogate.neural_process import PointSet


@dataclass
class TaskPool:
    features: np.ndarray  # (K, dk)
    positions: np.ndarray  # (C, dp), shared by every task
    values: np.ndarray  # (K, C)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(self.values.shape[1], -1)
        if self.values.shape != (len(self.features), len(self.positions)):
            raise ValueError(f"values shape {self.values.shape} != ({len(self.features)}, {len(self.positions)})")

    @property
    def num_tasks(self) -> int:
        return len(self.features)

    @property
    def num_positions(self) -> int:
        return len(self.positions)

    @property
    def f_min(self) -> float:
        return float(self.values.min())

    @property
    def f_max(self) -> float:
        return float(self.values.max())

    def flat_candidates(self) -> np.ndarray:
        k, c = self.values.shape
        return np.hstack([np.repeat(self.features, c, axis=0), np.tile(self.positions, (k, 1))])


def planted_pool(num_tasks: int, num_positions: int, rng: np.random.Generator, width: float = 0.3) -> TaskPool:
    """Synthetic pool with smooth task-level minima and one bowl per task.

    Task k has features u_k in [-1, 1]^2 and minimum m_k = ||u_k - u*|| + small noise,
    reached at a random position c_k; away from c_k values rise by a_k in [1, 2].
    """
    feats = rng.uniform(-1.0, 1.0, size=(num_tasks, 2))
    centre = rng.uniform(-0.5, 0.5, size=2)
    minima = np.linalg.norm(feats - centre, axis=1) + 0.02 * rng.standard_normal(num_tasks)
    positions = np.linspace(-1.0, 1.0, num_positions)
    where = rng.uniform(-0.8, 0.8, size=num_tasks)
    depth = rng.uniform(1.0, 2.0, size=num_tasks)
    bowl = 1.0 - np.exp(-((positions[None, :] - where[:, None]) ** 2) / (2 * width**2))
    return TaskPool(feats, positions, minima[:, None] + depth[:, None] * bowl)


def two_level_search(
    position_model,
    task_min_model,
    pool: TaskPool,
    budget: int,
    inner_steps: int,
    rng: np.random.Generator,
    seed: Optional[int] = None,
) -> BORun:
    """Outer Thompson step over tasks, then ``inner_steps`` Thompson steps over that task's positions.

    Records carry flat indices ``task * C + position``. A run whose budget is below one
    full outer round (``inner_steps`` evaluations) is flagged truncated.
    """
    if inner_steps < 1 or pool.num_tasks < 1 or pool.num_positions < 1:
        raise ValueError("K, C and l must all be >= 1")
    k_tasks, c_pos = pool.values.shape
    visited = [set() for _ in range(k_tasks)]
    hist = [PointSet.empty(pool.positions.shape[1], 1) for _ in range(k_tasks)]
    task_best: dict = {}
    records, observed = [], []
    run = BORun(pool.flat_candidates(), PointSet.empty(pool.flat_candidates().shape[1], 1))
    run.truncated = budget < inner_steps
    it = 0
    while it < budget:
        start = time.perf_counter()
        full = {k for k in range(k_tasks) if len(visited[k]) >= c_pos}
        if len(full) == k_tasks:
            run.truncated = True
            break
        if k_tasks - len(full) == 1:
            task = thompson_from_view(None, pool.features, rng, full)
        else:
            seen = sorted(task_best)
            outer_ctx = PointSet(pool.features[seen], np.array([task_best[k] for k in seen])) if seen else PointSet.empty(pool.features.shape[1], 1)
            task = thompson_from_view(task_min_model.condition(outer_ctx), pool.features, rng, full)
        for _ in range(inner_steps):
            if it >= budget or len(visited[task]) >= c_pos:
                break
            if c_pos - len(visited[task]) == 1:
                pos = thompson_from_view(None, pool.positions, rng, visited[task])
            else:
                pos = thompson_from_view(position_model.condition(hist[task]), pool.positions, rng, visited[task])
            y = float(pool.values[task, pos])
            visited[task].add(pos)
            hist[task] = hist[task].append(pool.positions[pos], [y])
            task_best[task] = min(task_best.get(task, np.inf), y)
            observed.append(y)
            flat = task * c_pos + pos
            run.history = run.history.append(run.candidates[flat], [y])
            curve = scaled_min_curve(observed, pool.f_min, pool.f_max)
            records.append(RunRecord(iter=it, chosen=flat, observed=y, seed=seed,
                                     wall_ms=1e3 * (time.perf_counter() - start), scaled_min=curve[-1]))
            start = time.perf_counter()
            it += 1
    run.records = records
    if run.truncated and records:
        records[-1].truncated = True
    return run


def flat_random_search(pool: TaskPool, budget: int, rng: np.random.Generator, seed: Optional[int] = None) -> BORun:
    """Uniform search without replacement over all K * C (task, position) pairs."""
    n = pool.values.size
    order = rng.permutation(n)[: min(budget, n)]
    flat_vals = pool.values.ravel()
    cands = pool.flat_candidates()
    observed = flat_vals[order]
    run = BORun(cands, PointSet(cands[order], observed), truncated=budget > n)
    curve = scaled_min_curve(observed, pool.f_min, pool.f_max)
    run.records = [RunRecord(iter=it, chosen=int(idx), observed=float(y), seed=seed, wall_ms=0.0, scaled_min=c)
                   for it, (idx, y, c) in enumerate(zip(order, observed, curve))]
    return run
