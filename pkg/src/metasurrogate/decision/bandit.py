"""Sequential rating acquisition for a cold-start user: random or information-gain arm choice."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from metasurrogate.errors import DegenerateError
from metasurrogate.neural_process import PointSet
from metasurrogate.tasks.movielens import RatingTask

RANDOM = "random"
INFO_GAIN = "info_gain"
ACQUISITIONS = (RANDOM, INFO_GAIN)


def info_gain_scores(model, context: PointSet, arms_x, S: int, rng: np.random.Generator, candidates=None) -> np.ndarray:
    """Monte-Carlo estimate of E[sum_{j != i} ln var_j] after observing a sampled rating at arm i.

    One score per entry of ``candidates`` (default: every arm). Lower means more informative.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    arms_x = np.atleast_2d(np.asarray(arms_x, dtype=np.float64))
    m = len(arms_x)
    cand = np.arange(m) if candidates is None else np.asarray(candidates, dtype=int)
    view = model.condition(context)
    pred = view.predict(arms_x[cand])
    ratings = pred.mean[:, :1] + pred.stddev[:, :1] * rng.standard_normal((len(cand), S))
    if hasattr(view, "lookahead_log_variances"):
        logv = view.lookahead_log_variances(arms_x, cand, ratings)  # (k, S, m)
        total = logv.sum(axis=2) - logv[np.arange(len(cand)), :, cand]
        return total.mean(axis=1)
    scores = np.empty(len(cand))
    for k, i in enumerate(cand):
        rest = np.delete(np.arange(m), i)
        acc = 0.0
        for s in range(S):
            cond = view.condition(context.append(arms_x[i], [ratings[k, s]]))
            acc += float(np.sum(np.log(cond.predict(arms_x[rest]).variance[:, 0])))
        scores[k] = acc / S
    return scores


def info_gain_select(
    model,
    context: PointSet,
    arms_x,
    S: int = 5,
    rng: Optional[np.random.Generator] = None,
    max_candidates: Optional[int] = None,
) -> int:
    """Arm minimising the expected log-product of the other arms' predictive variances.

    ``max_candidates`` scores only a random subset of arms (all remaining arms still
    enter each score). Ties go to the lowest index; a single arm is returned without sampling.
    """
    arms_x = np.atleast_2d(np.asarray(arms_x, dtype=np.float64))
    m = len(arms_x)
    if m == 0:
        raise ValueError("arm pool must be non-empty")
    if m == 1:
        return 0
    rng = np.random.default_rng() if rng is None else rng
    cand = np.arange(m)
    if max_candidates is not None and m > max_candidates:
        cand = np.sort(rng.choice(m, size=max_candidates, replace=False))
    scores = info_gain_scores(model, context, arms_x, S, rng, cand)
    return int(cand[int(np.argmin(scores))])


def budget_sizes(n: int, fractions: Sequence[float]) -> list:
    sizes = [int(math.ceil(f * n - 1e-9)) for f in fractions]
    for f, k in zip(fractions, sizes):
        if not 0 < f <= 1:
            raise ValueError(f"budget fraction {f} outside (0, 1]")
        if k >= n:
            raise DegenerateError(f"fraction {f} of {n} ratings leaves no held-out ratings")
    return sizes


def bandit_curve(
    model,
    task: RatingTask,
    fractions: Sequence[float],
    acquisition: str,
    rng: np.random.Generator,
    S: int = 5,
    max_candidates: Optional[int] = None,
) -> dict:
    """Squared errors on the unobserved remainder at each budget of one acquisition sequence.

    Returns ``{fraction: (sum_sq_error, count)}``. Budgets are prefixes of the same
    sequence, started from one uniformly chosen rating.
    """
    if acquisition not in ACQUISITIONS:
        raise ValueError(f"unknown acquisition {acquisition!r}; expected one of {ACQUISITIONS}")
    x, y = task.features, task.ratings
    n = len(y)
    sizes = budget_sizes(n, fractions)
    observed = [int(rng.integers(n))]
    out = {}
    for f, k in sorted(zip(fractions, sizes), key=lambda t: t[1]):
        while len(observed) < k:
            free = np.setdiff1d(np.arange(n), observed)
            if acquisition == RANDOM:
                nxt = int(free[int(rng.integers(len(free)))])
            else:
                ctx = PointSet(x[observed], y[observed])
                nxt = int(free[info_gain_select(model, ctx, x[free], S, rng, max_candidates)])
            observed.append(nxt)
        rest = np.setdiff1d(np.arange(n), observed)
        pred = model.condition(PointSet(x[observed], y[observed])).predict(x[rest]).mean[:, 0]
        out[f] = (float(np.sum((pred - y[rest]) ** 2)), len(rest))
    return out


def bandit_eval(model, task: RatingTask, fraction: float, acquisition: str, rng: np.random.Generator, **kw) -> float:
    """RMSE of predictive means on the ratings left unobserved after acquiring ``fraction`` of them."""
    sse, count = bandit_curve(model, task, [fraction], acquisition, rng, **kw)[fraction]
    return math.sqrt(sse / count)
