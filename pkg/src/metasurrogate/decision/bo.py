"""Thompson-sampling Bayesian optimisation over a finite candidate set."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from metasurrogate.baselines.random_search import random_search_step
from metasurrogate.decision.metrics import scaled_min_curve
from metasurrogate.errors import DegenerateError
from metasurrogate.neural_process import PointSet
from metasurrogate.tasks.functions import FunctionTask

RANDOM = "random"


@dataclass
class RunRecord:
    iter: int
    chosen: int
    observed: float
    seed: Optional[int] = None
    wall_ms: float = 0.0
    scaled_min: Optional[float] = None
    rmse: Optional[float] = None
    episode_reward: Optional[float] = None
    truncated: bool = False

    def to_json(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        if not self.truncated:
            d.pop("truncated")
        return d


@dataclass
class BORun:
    candidates: np.ndarray
    history: PointSet
    records: list = field(default_factory=list)
    truncated: bool = False

    @property
    def chosen(self) -> list:
        return [r.chosen for r in self.records]

    @property
    def observed(self) -> list:
        return [r.observed for r in self.records]


def argmin_draw(draw: np.ndarray, exclude=()) -> int:
    draw = np.array(draw, dtype=np.float64)
    if len(exclude):
        draw[np.asarray(list(exclude), dtype=int)] = np.inf
    return int(np.argmin(draw))  # first occurrence on ties


def thompson_from_view(view, candidates, rng: np.random.Generator, exclude=()) -> int:
    n_free = len(candidates) - len(set(exclude))
    if n_free <= 0:
        raise ValueError("no free candidates")
    if n_free == 1:
        return next(i for i in range(len(candidates)) if i not in set(exclude))
    return argmin_draw(view.sample_function(candidates, rng), exclude)


def thompson_select(model, context: PointSet, candidates, rng: np.random.Generator, exclude=()) -> int:
    """One joint function draw over ``candidates``; index of its minimum (lowest index on ties).

    A single remaining candidate is returned without drawing.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if len(candidates) == 0:
        raise ValueError("candidates must be non-empty")
    if len(candidates) - len(set(exclude)) == 1:
        return thompson_from_view(None, candidates, rng, exclude)
    return thompson_from_view(model.condition(context), candidates, rng, exclude)


def _initial_history(d0: Optional[PointSet], dim: int) -> PointSet:
    return PointSet.empty(dim, 1) if d0 is None else d0


def bo_loop(
    model,
    target: FunctionTask,
    d0: Optional[PointSet],
    n_iters: int,
    rng: np.random.Generator,
    seed: Optional[int] = None,
    finite: bool = True,
) -> BORun:
    """Condition, select, evaluate, append; ``model='random'`` gives uniform random search.

    In finite mode a candidate is never evaluated twice and running out of
    candidates truncates the run. Views are chained so that adapting surrogates
    keep their per-run state; the NP and GP simply re-condition.
    """
    if n_iters < 1:
        raise ValueError("N must be >= 1")
    cands = target.x
    history = _initial_history(d0, cands.shape[1])
    visited = set()
    if d0 is not None:
        for row in d0.x:
            hit = np.flatnonzero(np.all(cands == row, axis=1))
            visited.update(int(i) for i in hit)
    view = None
    observed_all = list(history.y[:, 0]) if len(history) else []
    run = BORun(cands, history)
    has_range = target.f_max > target.f_min
    for it in range(n_iters):
        start = time.perf_counter()
        exclude = visited if finite else ()
        if finite and len(visited) >= len(cands):
            run.truncated = True
            if run.records:
                run.records[-1].truncated = True
            break
        if model == RANDOM or model is None:
            idx = random_search_step(cands, visited if finite else (), rng)
        else:
            if len(cands) - len(exclude) == 1:
                idx = thompson_from_view(None, cands, rng, exclude)
            else:
                view = model.condition(history) if view is None else view.condition(history)
                idx = thompson_from_view(view, cands, rng, exclude)
        y = target.evaluate(idx, rng)
        history = history.append(cands[idx], [y])
        visited.add(idx)
        observed_all.append(y)
        curve = scaled_min_curve(observed_all, target.f_min, target.f_max) if has_range else None
        run.records.append(
            RunRecord(
                iter=it,
                chosen=idx,
                observed=y,
                seed=seed,
                wall_ms=1e3 * (time.perf_counter() - start),
                scaled_min=None if curve is None else curve[-1],
            )
        )
    run.history = history
    return run


def scaled_curve(run: BORun) -> list:
    vals = [r.scaled_min for r in run.records]
    if any(v is None for v in vals):
        raise DegenerateError("run has no scaled-minimum values")
    return vals
