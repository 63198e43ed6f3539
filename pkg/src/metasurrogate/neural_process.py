"""Latent-variable Neural Process.

A context set is embedded point by point, averaged into a single
representation, mapped to a diagonal Gaussian over a global latent ``z`` and
decoded independently at every target input. Training maximises the
single-sample variational lower bound with the context-only posterior standing
in for the conditional prior.
"""

from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from metasurrogate.diffmath import (
    DiagGaussian,
    ParamSet,
    adam_init,
    adam_step,
    gaussian_kl,
    gaussian_log_prob,
    init_mlp,
    mlp_apply,
    value_and_gradient,
)
from metasurrogate.diffmath import tensor as T
from metasurrogate.diffmath.nn import ACTIVATIONS
from metasurrogate.errors import DegenerateError, DimensionError, ExhaustedError

log = logging.getLogger(__name__)

SINGLE_Z_DRAW = "single_z_draw"
MOMENT_MATCHED = "moment_matched"


@dataclass(frozen=True)
class NPConfig:
    input_dim: int
    output_dim: int
    encoder_sizes: tuple = (128, 128)
    latent_dim: int = 64
    latent_head_sizes: tuple = (128,)
    decoder_sizes: tuple = (128, 128)
    min_sigma: float = 0.1
    max_sigma: Optional[float] = None
    latent_min_sigma: float = 1e-4
    max_context_size: int = 50
    aggregator: str = "mean"
    activation: str = "relu"
    # when embedding_vocab > 0 the last input column is an integer id looked up in a learned table
    embedding_vocab: int = 0
    embedding_dim: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoder_sizes", tuple(int(s) for s in self.encoder_sizes))
        object.__setattr__(self, "latent_head_sizes", tuple(int(s) for s in self.latent_head_sizes))
        object.__setattr__(self, "decoder_sizes", tuple(int(s) for s in self.decoder_sizes))
        dims = (self.input_dim, self.output_dim, self.latent_dim, self.max_context_size)
        if min(dims) <= 0 or not self.encoder_sizes or min(self.encoder_sizes + self.decoder_sizes, default=1) <= 0:
            raise ValueError(f"NPConfig dimensions must be positive: {self}")
        if self.min_sigma <= 0 or self.latent_min_sigma <= 0:
            raise ValueError("min_sigma and latent_min_sigma must be > 0")
        if self.max_sigma is not None and self.max_sigma <= self.min_sigma:
            raise ValueError(f"max_sigma={self.max_sigma} must exceed min_sigma={self.min_sigma}")
        if self.aggregator != "mean":
            raise ValueError(f"unsupported aggregator {self.aggregator!r}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unsupported activation {self.activation!r}")
        if (self.embedding_vocab > 0) != (self.embedding_dim > 0):
            raise ValueError("embedding_vocab and embedding_dim must both be set or both be 0")

    @property
    def repr_dim(self) -> int:
        return self.encoder_sizes[-1]

    @property
    def feature_dim(self) -> int:
        if self.embedding_vocab:
            return self.input_dim - 1 + self.embedding_dim
        return self.input_dim

    @property
    def encoder_layers(self) -> list:
        return [self.feature_dim + self.output_dim, *self.encoder_sizes]

    @property
    def head_layers(self) -> list:
        return [self.repr_dim + 1, *self.latent_head_sizes, self.latent_dim]

    @property
    def decoder_layers(self) -> list:
        return [self.feature_dim + self.latent_dim, *self.decoder_sizes, 2 * self.output_dim]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NPConfig":
        return cls(**d)


@dataclass
class PointSet:
    """Observed or queried (x, y) pairs; ``y`` may be ``None`` for pure queries."""

    x: np.ndarray
    y: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        if self.y is not None:
            y = np.asarray(self.y, dtype=np.float64)
            self.y = y.reshape(-1, 1) if y.ndim == 1 else y
            if len(self.y) != len(self.x):
                raise DimensionError(f"{len(self.x)} inputs but {len(self.y)} outputs")
            if not np.all(np.isfinite(self.y)):
                raise ValueError("non-finite y in point set")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite x in point set")

    @classmethod
    def empty(cls, input_dim: int, output_dim: int) -> "PointSet":
        return cls(np.zeros((0, input_dim)), np.zeros((0, output_dim)))

    def __len__(self):
        return len(self.x)

    def append(self, x, y) -> "PointSet":
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        y = np.asarray(y, dtype=np.float64).reshape(1, -1)
        return PointSet(np.vstack([self.x, x]), np.vstack([self.y, y]))

    def subset(self, idx) -> "PointSet":
        return PointSet(self.x[idx], None if self.y is None else self.y[idx])


ContextSet = PointSet
TargetSet = PointSet


@dataclass
class Predictive:
    mean: np.ndarray
    stddev: np.ndarray
    provenance: str = SINGLE_Z_DRAW

    def __len__(self):
        return len(self.mean)

    def __getitem__(self, j) -> DiagGaussian:
        return DiagGaussian(self.mean[j], self.stddev[j])

    @property
    def variance(self):
        return self.stddev**2


class TaskSource(Protocol):
    input_dim: int
    output_dim: int

    def sample_task(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """All available (x, y) evaluations of one freshly drawn task."""


# ------------------------------------------------------------ forward pieces
# These take a params mapping whose values are arrays or graph nodes.


def _features(params, cfg: NPConfig, x):
    if not cfg.embedding_vocab:
        return x
    ids = np.clip(x[:, -1].astype(int), 0, cfg.embedding_vocab - 1)
    return T.concat([x[:, :-1], T.getitem(params["embedding"], ids)], axis=-1)


def _heads(params, cfg: NPConfig, r, log_count):
    inp = T.concat([r, log_count], axis=-1)
    mu = mlp_apply(params, inp, cfg.head_layers, cfg.activation, prefix="latent_mean")
    raw = mlp_apply(params, inp, cfg.head_layers, cfg.activation, prefix="latent_std")
    return DiagGaussian(mu, T.add(cfg.latent_min_sigma, T.softplus(raw)))


def _decoder_out(params, cfg: NPConfig, x, z_rows):
    out = mlp_apply(params, T.concat([_features(params, cfg, x), z_rows], axis=-1), cfg.decoder_layers, cfg.activation, prefix="decoder")
    return _decoder_head(cfg, out)


def _decoder_head(cfg: NPConfig, out):
    dy = cfg.output_dim
    mu = out[:, :dy]
    sd = T.add(cfg.min_sigma, T.softplus(out[:, dy:]))
    if cfg.max_sigma is not None:
        sd = T.minimum(sd, cfg.max_sigma)
    return mu, sd


@dataclass
class _Batch:
    """Several tasks stacked row-wise.

    ``enc_*`` rows are encoded once; ``ctx_avg``/``all_avg`` average them into
    the context-only and context-plus-target representations. ``dec_*`` rows
    are scored, and ``expand`` copies each task's latent onto its rows.
    """

    enc_x: np.ndarray
    enc_y: np.ndarray
    ctx_avg: np.ndarray
    all_avg: np.ndarray
    ctx_logn: np.ndarray
    all_logn: np.ndarray
    dec_x: np.ndarray
    dec_y: np.ndarray
    expand: np.ndarray

    @property
    def num_tasks(self):
        return self.ctx_avg.shape[0]


def _averaging_row(width: int, idx) -> np.ndarray:
    row = np.zeros(width)
    idx = np.asarray(idx, dtype=int)
    if len(idx):
        row[idx] = 1.0 / len(idx)
    return row


def _rows_not_in(tgt: PointSet, ctx: PointSet) -> list:
    keys = {np.concatenate([a, b]).tobytes() for a, b in zip(ctx.x, ctx.y)}
    return [j for j in range(len(tgt)) if np.concatenate([tgt.x[j], tgt.y[j]]).tobytes() not in keys]


def _build_batch(tasks: Sequence[tuple[PointSet, PointSet]]) -> _Batch:
    """Stack tasks given as (context, target) pairs; encoded rows are C ∪ T."""
    enc_x, enc_y, dec_x, dec_y = [], [], [], []
    ctx_idx, all_idx, dec_counts = [], [], []
    offset = 0
    for ctx, tgt in tasks:
        if tgt.y is None or len(tgt) == 0:
            raise DegenerateError("ELBO needs a non-empty target set with observed y")
        n_ctx = len(ctx)
        if n_ctx <= len(tgt) and np.array_equal(tgt.x[:n_ctx], ctx.x) and np.array_equal(tgt.y[:n_ctx], ctx.y):
            extra = list(range(n_ctx, len(tgt)))
        else:
            extra = _rows_not_in(tgt, ctx)
        ux = np.vstack([ctx.x, tgt.x[extra]]) if len(extra) else ctx.x
        uy = np.vstack([ctx.y, tgt.y[extra]]) if len(extra) else ctx.y
        enc_x.append(ux)
        enc_y.append(uy)
        ctx_idx.append(offset + np.arange(len(ctx)))
        all_idx.append(offset + np.arange(len(ux)))
        offset += len(ux)
        dec_x.append(tgt.x)
        dec_y.append(tgt.y)
        dec_counts.append(len(tgt))
    total = offset
    n_tasks = len(tasks)
    ctx_avg = np.stack([_averaging_row(total, i) for i in ctx_idx])
    all_avg = np.stack([_averaging_row(total, i) for i in all_idx])
    expand = np.zeros((int(np.sum(dec_counts)), n_tasks))
    start = 0
    for b, m in enumerate(dec_counts):
        expand[start : start + m, b] = 1.0
        start += m
    return _Batch(
        enc_x=np.vstack(enc_x),
        enc_y=np.vstack(enc_y),
        ctx_avg=ctx_avg,
        all_avg=all_avg,
        ctx_logn=np.log1p([[len(i)] for i in ctx_idx]),
        all_logn=np.log1p([[len(i)] for i in all_idx]),
        dec_x=np.vstack(dec_x),
        dec_y=np.vstack(dec_y),
        expand=expand,
    )


def _negative_elbo(params, cfg: NPConfig, batch: _Batch, noise):
    """Batch-averaged negative ELBO; works on arrays or graph nodes."""
    h = mlp_apply(params, T.concat([_features(params, cfg, batch.enc_x), batch.enc_y], axis=-1), cfg.encoder_layers, cfg.activation, prefix="encoder")
    q_ctx = _heads(params, cfg, T.matmul(batch.ctx_avg, h), batch.ctx_logn)
    q_all = _heads(params, cfg, T.matmul(batch.all_avg, h), batch.all_logn)
    z = T.add(q_all.mean, T.mul(q_all.stddev, noise))
    mu, sd = _decoder_out(params, cfg, batch.dec_x, T.matmul(batch.expand, z))
    nll = T.neg(gaussian_log_prob(DiagGaussian(mu, sd), batch.dec_y))
    kl = gaussian_kl(q_all, q_ctx)
    return T.div(T.add(nll, kl), float(batch.num_tasks))


# ------------------------------------------------------------------- model


def init_params(cfg: NPConfig, rng: np.random.Generator) -> ParamSet:
    params = {}
    params.update(init_mlp("encoder", cfg.encoder_layers, rng))
    params.update(init_mlp("latent_mean", cfg.head_layers, rng))
    params.update(init_mlp("latent_std", cfg.head_layers, rng))
    params.update(init_mlp("decoder", cfg.decoder_layers, rng))
    if cfg.embedding_vocab:
        params["embedding"] = rng.normal(0.0, 0.1, size=(cfg.embedding_vocab, cfg.embedding_dim))
    return ParamSet(params)


class NeuralProcess:
    """A configured NP with fixed parameters. Prediction never mutates ``params``."""

    def __init__(self, config: NPConfig, params: ParamSet):
        self.config = config
        self.params = params
        self.counters: Counter = Counter()

    @classmethod
    def initialize(cls, config: NPConfig, rng: np.random.Generator) -> "NeuralProcess":
        return cls(config, init_params(config, rng))

    def _check_points(self, points: PointSet):
        cfg = self.config
        if points.x.shape[1] != cfg.input_dim or (points.y is not None and points.y.shape[1] != cfg.output_dim):
            raise DimensionError(
                f"context points have widths x={points.x.shape[1]}, y={None if points.y is None else points.y.shape[1]}; "
                f"model expects x={cfg.input_dim}, y={cfg.output_dim}"
            )

    def encode_points(self, points: PointSet) -> np.ndarray:
        """Per-point representations h(x_i, y_i), one row per point."""
        self._check_points(points)
        if len(points) == 0:
            return np.zeros((0, self.config.repr_dim))
        self.counters["encoder_rows"] += len(points)
        feats = _features(self.params, self.config, points.x)
        return mlp_apply(
            self.params, np.hstack([feats, points.y]), self.config.encoder_layers, self.config.activation, prefix="encoder"
        )

    def encode_aggregate(self, context: PointSet) -> np.ndarray:
        h = self.encode_points(context)
        if len(h) == 0:
            return np.zeros(self.config.repr_dim)
        # summing in a canonical row order makes the mean bit-identical under permutation
        order = np.lexsort(h.T[::-1])
        return np.sum(h[order], axis=0) / len(h)

    def latent_posterior(self, r: np.ndarray, n: int) -> DiagGaussian:
        if n < 0:
            raise ValueError("context count must be >= 0")
        r = np.atleast_2d(r)
        log_count = np.full((len(r), 1), np.log1p(n))
        q = _heads(self.params, self.config, r, log_count)
        if q.mean.shape[0] == 1:
            return DiagGaussian(q.mean[0], q.stddev[0])
        return q

    def latent_posterior_batch(self, r: np.ndarray, counts) -> DiagGaussian:
        """Posterior for several representations at once; ``counts`` per row."""
        log_count = np.log1p(np.asarray(counts, dtype=np.float64)).reshape(-1, 1)
        return _heads(self.params, self.config, np.atleast_2d(r), log_count)

    def condition(self, context: PointSet) -> DiagGaussian:
        return self.latent_posterior(self.encode_aggregate(context), len(context))

    def decode(self, x_targets, z) -> Predictive:
        x = np.atleast_2d(np.asarray(x_targets, dtype=np.float64))
        z = np.asarray(z, dtype=np.float64)
        if x.shape[1] != self.config.input_dim:
            raise DimensionError(f"target width {x.shape[1]} != input_dim {self.config.input_dim}")
        if z.shape[-1] != self.config.latent_dim:
            raise DimensionError(f"latent width {z.shape[-1]} != latent_dim {self.config.latent_dim}")
        z_rows = np.broadcast_to(z, (len(x), self.config.latent_dim)) if z.ndim == 1 else z
        self.counters["decoder_rows"] += len(x)
        mu, sd = _decoder_out(self.params, self.config, x, z_rows)
        return Predictive(mu, sd, SINGLE_Z_DRAW)

    def decode_many(self, x_targets, zs: np.ndarray, dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
        """Decode every target under each latent row of ``zs``; returns (S, M, dy) means and stddevs.

        ``dtype=np.float32`` trades precision for speed in bulk scoring.
        """
        x = np.atleast_2d(np.asarray(x_targets, dtype=np.float64))
        zs = np.atleast_2d(zs)
        s, m = len(zs), len(x)
        self.counters["decoder_rows"] += s * m
        cfg, p = self.config, self.params
        # the first layer splits into a target part and a latent part, so each is computed once
        feats = np.asarray(_features(p, cfg, x), dtype=dtype)
        w0 = p["decoder.w0"].astype(dtype, copy=False)
        fx = feats.shape[1]
        h = (feats @ w0[:fx])[None, :, :] + (zs.astype(dtype, copy=False) @ w0[fx:])[:, None, :] + p["decoder.b0"].astype(dtype, copy=False)
        h = h.reshape(s * m, -1)
        act = ACTIVATIONS[cfg.activation]
        for i in range(1, len(cfg.decoder_layers) - 1):
            h = act(h) @ p[f"decoder.w{i}"].astype(dtype, copy=False) + p[f"decoder.b{i}"].astype(dtype, copy=False)
        mu, sd = _decoder_head(cfg, h)
        dy = cfg.output_dim
        return mu.reshape(s, m, dy), sd.reshape(s, m, dy)

    def elbo_loss(self, context: PointSet, targets: PointSet, noise) -> float:
        """Negative single-sample ELBO for one task with a fixed standard-normal ``noise``."""
        self._check_points(context)
        self._check_points(targets)
        noise = np.asarray(noise, dtype=np.float64).reshape(1, self.config.latent_dim)
        return float(_negative_elbo(self.params, self.config, _build_batch([(context, targets)]), noise))

    def predict_marginal(self, context: PointSet, x_targets, num_z: int, rng: np.random.Generator) -> Predictive:
        if num_z < 1:
            raise ValueError("num_z must be >= 1")
        q = self.condition(context)
        zs = q.mean + q.stddev * rng.standard_normal((num_z, self.config.latent_dim))
        return moment_match(*self.decode_many(x_targets, zs))

    def sample_function(self, context: PointSet, x_targets, rng: np.random.Generator) -> np.ndarray:
        """Decoder means under a single latent draw from q(z | context)."""
        q = self.condition(context)
        z = q.mean + q.stddev * rng.standard_normal(self.config.latent_dim)
        return self.decode(x_targets, z).mean


def moment_match(means: np.ndarray, stddevs: np.ndarray) -> Predictive:
    """Collapse an equally weighted mixture (axis 0) to one Gaussian per target."""
    mean = means.mean(axis=0)
    var = (stddevs**2).mean(axis=0) + means.var(axis=0)
    return Predictive(mean, np.sqrt(var), MOMENT_MATCHED)


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: NeuralProcess
    loss_trace: list = field(default_factory=list)
    seconds: float = 0.0


def sample_context_target(
    x: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    max_context: int,
    max_extra_targets: int,
    min_context: int = 1,
) -> tuple[PointSet, PointSet]:
    """Random split with the context included in the target set."""
    n_avail = len(x)
    if n_avail < 2:
        raise DegenerateError("task needs at least two points")
    n_ctx = int(rng.integers(min_context, min(max_context, n_avail - 1) + 1))
    n_extra = int(rng.integers(1, max(1, min(max_extra_targets, n_avail - n_ctx)) + 1))
    idx = rng.permutation(n_avail)[: n_ctx + n_extra]
    return PointSet(x[idx[:n_ctx]], y[idx[:n_ctx]]), PointSet(x[idx], y[idx])


def meta_train(
    config: NPConfig,
    source: TaskSource,
    iters: int,
    batch: int,
    lr: float,
    rng: np.random.Generator,
    max_extra_targets: Optional[int] = None,
    min_context: int = 1,
    init: Optional[ParamSet] = None,
    log_every: int = 0,
    callback: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Episodic mini-batch training of the NP on draws from ``source``."""
    if source.input_dim != config.input_dim or source.output_dim != config.output_dim:
        raise DimensionError(
            f"task source dims ({source.input_dim}, {source.output_dim}) != model dims ({config.input_dim}, {config.output_dim})"
        )
    extra = config.max_context_size if max_extra_targets is None else max_extra_targets
    params = init if init is not None else init_params(config, rng)
    state = adam_init(params)
    trace = []
    start = time.perf_counter()
    for it in range(iters):
        tasks = []
        for _ in range(batch):
            try:
                x, y = source.sample_task(rng)
            except (StopIteration, ExhaustedError, IndexError) as exc:
                raise ExhaustedError(f"task source ran out at iteration {it}: {exc}") from exc
            tasks.append(sample_context_target(x, y, rng, config.max_context_size, extra, min_context))
        b = _build_batch(tasks)
        noise = rng.standard_normal((b.num_tasks, config.latent_dim))
        loss, grads = value_and_gradient(lambda p: _negative_elbo(p, config, b, noise), params)
        trace.append(loss)
        if lr > 0:
            params, state = adam_step(params, grads, state, lr)
        if log_every and (it % log_every == 0 or it == iters - 1):
            window = trace[-log_every:]
            log.info("iter %d  loss %.4f  (%.1fs)", it, float(np.mean(window)), time.perf_counter() - start)
        if callback is not None:
            callback(it, loss)
    return TrainResult(NeuralProcess(config, params), trace, time.perf_counter() - start)
