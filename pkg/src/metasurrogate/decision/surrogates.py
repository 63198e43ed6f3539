"""Surrogate adapters with a common condition / predict / sample_function interface.

``surrogate.condition(C)`` returns a view; views are immutable and never touch
the underlying parameters (the Multitask-MLP view carries its own adapted copy).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Union

import numpy as np

from metasurrogate.baselines.gp import gp_fit, gp_prior_predict, gp_sample
from metasurrogate.baselines.multitask_mlp import MLPConfig, mlp_predict, regression_steps
from metasurrogate.diffmath import DiagGaussian, ParamSet
from metasurrogate.neural_process import MOMENT_MATCHED, NeuralProcess, PointSet, Predictive, moment_match
from metasurrogate.tasks.functions import jittered_cholesky


class View(Protocol):
    def condition(self, context: PointSet) -> "View": ...

    def predict(self, x) -> Predictive: ...

    def sample_function(self, x, rng: np.random.Generator) -> np.ndarray: ...


class Surrogate(Protocol):
    def condition(self, context: PointSet) -> View: ...


# ---------------------------------------------------------------- NP


@dataclass(frozen=True)
class NPSurrogate:
    """NP adapter. ``num_z`` fixed latent draws (common random numbers) give deterministic predictions.

    ``lookahead_dtype`` sets the precision of the bulk decoding in information-gain scoring.
    """

    model: NeuralProcess
    num_z: int = 16
    seed: int = 0
    lookahead_dtype: type = np.float32

    def __post_init__(self):
        if self.num_z < 1:
            raise ValueError("num_z must be >= 1")

    @property
    def noise(self) -> np.ndarray:
        return np.random.default_rng(self.seed).standard_normal((self.num_z, self.model.config.latent_dim))

    def condition(self, context: PointSet) -> "NPView":
        return NPView(self, context, self.model.condition(context))


@dataclass(frozen=True)
class NPView:
    surrogate: NPSurrogate
    context: PointSet
    posterior: DiagGaussian

    def condition(self, context: PointSet) -> "NPView":
        return self.surrogate.condition(context)

    def latents(self, posterior: Optional[DiagGaussian] = None) -> np.ndarray:
        q = self.posterior if posterior is None else posterior
        return q.mean + q.stddev * self.surrogate.noise

    def predict(self, x) -> Predictive:
        return moment_match(*self.surrogate.model.decode_many(x, self.latents()))

    def sample_function(self, x, rng: np.random.Generator) -> np.ndarray:
        q = self.posterior
        z = q.mean + q.stddev * rng.standard_normal(len(q.mean))
        return self.surrogate.model.decode(x, z).mean[:, 0]

    def lookahead_log_variances(self, arms_x: np.ndarray, candidates, ratings: np.ndarray) -> np.ndarray:
        """Sum over arms of log predictive variance after adding (arm i, rating) to the context.

        ``ratings`` has shape (len(candidates), S). Returns (len(candidates), S, num_arms); the
        caller drops the column of the candidate itself. The updated posterior uses the
        running-mean form of the aggregate, so the context is not re-encoded.
        """
        model = self.surrogate.model
        cfg = model.config
        n = len(self.context)
        r = model.encode_aggregate(self.context)
        cand = np.asarray(candidates, dtype=int)
        k, s = ratings.shape
        new_x = np.repeat(arms_x[cand], s, axis=0)
        new_pts = PointSet(new_x, ratings.reshape(-1, 1) if cfg.output_dim == 1 else ratings.reshape(k * s, -1))
        h = model.encode_points(new_pts)
        r_new = (n * r + h) / (n + 1)
        q = model.latent_posterior_batch(r_new, np.full(len(r_new), n + 1))
        noise = self.surrogate.noise
        zs = q.mean[:, None, :] + q.stddev[:, None, :] * noise[None, :, :]  # (k*s, Z, dz)
        mu, sd = model.decode_many(arms_x, zs.reshape(-1, cfg.latent_dim), dtype=self.surrogate.lookahead_dtype)
        nz, m = len(noise), len(arms_x)
        mu = mu[..., 0].reshape(k * s, nz, m)
        var = (sd[..., 0] ** 2).reshape(k * s, nz, m).mean(axis=1) + mu.var(axis=1)
        return np.log(var, dtype=np.float64).reshape(k, s, m)


# ---------------------------------------------------------------- GP


@dataclass(frozen=True)
class GPSurrogate:
    """Exact GP with a fixed kernel. ``prior_mean='context'`` centres on the observed mean."""

    kernel: Callable
    noise_variance: float = 1e-4
    prior_mean: Union[float, str] = 0.0

    def condition(self, context: PointSet) -> "GPView":
        return GPView(self, context)


@dataclass(frozen=True)
class GPView:
    surrogate: GPSurrogate
    context: PointSet
    _post: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(self.context):
            y = self.context.y[:, 0] - self.offset
            object.__setattr__(self, "_post", gp_fit(None, self.context.x, y, self.surrogate.kernel, self.surrogate.noise_variance))

    @property
    def offset(self) -> float:
        pm = self.surrogate.prior_mean
        if pm == "context":
            return float(np.mean(self.context.y[:, 0])) if len(self.context) else 0.0
        return float(pm)

    def condition(self, context: PointSet) -> "GPView":
        return GPView(self.surrogate, context)

    def predict(self, x) -> Predictive:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self._post is None:
            mean, var = gp_prior_predict(self.surrogate.kernel, x)
        else:
            mean, var = self._post.predict(x)
        var = var + self.surrogate.noise_variance
        return Predictive((mean + self.offset).reshape(-1, 1), np.sqrt(var).reshape(-1, 1), MOMENT_MATCHED)

    def sample_function(self, x, rng: np.random.Generator) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self._post is not None:
            return gp_sample(self._post, x, rng) + self.offset
        cov = self.surrogate.kernel(x, x)
        scale = max(float(np.max(np.abs(np.diag(cov)))), 1e-300)
        return jittered_cholesky(cov / scale) @ rng.standard_normal(len(x)) * np.sqrt(scale) + self.offset


# ---------------------------------------------------------------- Multitask MLP


@dataclass(frozen=True)
class MLPSurrogate:
    """Pooled regressor adapted by ``adapt_steps`` Adam steps on the context.

    Chained conditioning keeps adapting the view's own copy; ``condition`` on the
    surrogate always starts from the pretrained parameters.
    """

    params: ParamSet
    config: MLPConfig
    adapt_steps: int = 10
    lr: float = 1e-3
    noise_std: float = 0.1

    def condition(self, context: PointSet) -> "MLPView":
        return MLPView(self, self.params, None).condition(context)


@dataclass(frozen=True)
class MLPView:
    surrogate: MLPSurrogate
    params: ParamSet
    opt_state: object

    def condition(self, context: PointSet) -> "MLPView":
        s = self.surrogate
        if len(context) == 0 or s.adapt_steps == 0:
            return MLPView(s, self.params, self.opt_state)
        params, state, _ = regression_steps(self.params, s.config, context.x, context.y, s.adapt_steps, s.lr, self.opt_state)
        return MLPView(s, params, state)

    def predict(self, x) -> Predictive:
        mean = mlp_predict(self.params, self.surrogate.config, x)
        return Predictive(mean, np.full_like(mean, self.surrogate.noise_std), MOMENT_MATCHED)

    def sample_function(self, x, rng: np.random.Generator) -> np.ndarray:
        return mlp_predict(self.params, self.surrogate.config, x)[:, 0]
