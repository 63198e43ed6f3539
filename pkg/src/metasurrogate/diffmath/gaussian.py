"""Diagonal Gaussian densities, divergences and reparameterised draws.

Functions accept plain arrays or graph nodes for the mean and stddev so the
same code serves training losses and numeric evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from metasurrogate.diffmath import tensor as T
from metasurrogate.errors import DimensionError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class DiagGaussian:
    mean: object
    stddev: object

    def __post_init__(self):
        mu, sd = T._val(self.mean), T._val(self.stddev)
        if np.shape(mu) != np.shape(sd):
            raise DimensionError(f"mean shape {np.shape(mu)} != stddev shape {np.shape(sd)}")
        if not np.all(np.asarray(sd) > 0.0):
            raise ValueError("DiagGaussian stddev entries must be strictly positive")

    @property
    def variance(self):
        return T.square(self.stddev)

    def __len__(self):
        return int(np.size(T._val(self.mean)))


def _check(d: DiagGaussian, y):
    if np.shape(T._val(y)) != np.shape(T._val(d.mean)):
        raise DimensionError(f"value shape {np.shape(T._val(y))} != distribution shape {np.shape(T._val(d.mean))}")


def gaussian_log_prob(d: DiagGaussian, y):
    """Sum over all entries of the elementwise normal log density."""
    _check(d, y)
    z = T.div(T.sub(y, d.mean), d.stddev)
    per = T.sub(T.mul(-0.5, T.square(z)), T.add(T.log(d.stddev), 0.5 * LOG_2PI))
    return T.sum(per)


def gaussian_kl(q: DiagGaussian, p: DiagGaussian):
    """Closed-form KL(q || p) summed over dimensions."""
    _check(q, p.mean)
    ratio = T.div(q.stddev, p.stddev)
    diff = T.div(T.sub(q.mean, p.mean), p.stddev)
    per = T.sub(T.add(T.square(ratio), T.square(diff)), T.add(1.0, T.mul(2.0, T.log(ratio))))
    return T.mul(0.5, T.sum(per))


def gaussian_entropy(d: DiagGaussian):
    return T.sum(T.add(T.log(d.stddev), 0.5 * (LOG_2PI + 1.0)))


def reparam_sample(d: DiagGaussian, noise):
    _check(d, noise)
    return T.add(d.mean, T.mul(d.stddev, noise))
