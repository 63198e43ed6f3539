from __future__ import annotations

import numpy as np

from metasurrogate.errors import DegenerateError


def scaled_min_curve(values, f_min: float, f_max: float) -> list:
    """Best-so-far value rescaled so the global minimum maps to 0 and the maximum to 1."""
    if not f_max > f_min:
        raise DegenerateError(f"degenerate range: f_min={f_min}, f_max={f_max}")
    best = np.minimum.accumulate(np.asarray(values, dtype=np.float64))
    return ((best - f_min) / (f_max - f_min)).tolist()


def evaluations_to_threshold(curve, threshold: float) -> int | None:
    """1-based index of the first curve entry at or below ``threshold``; None if never reached."""
    for t, v in enumerate(curve, start=1):
        if v <= threshold:
            return t
    return None


def rmse(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64).ravel(), np.asarray(truth, dtype=np.float64).ravel()
    return float(np.sqrt(np.mean((pred - truth) ** 2)))
