"""Exact Gaussian-process regression with a fixed kernel."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from metasurrogate.tasks.functions import jittered_cholesky


@dataclass(frozen=True)
class GPHyper:
    """Hyperparameters of the linear x Matern-3/2 product kernel."""

    matern_lengthscale: float = 0.5
    matern_variance: float = 1.0
    linear_variance: float = 1.0
    noise_variance: float = 1e-4

    def __post_init__(self):
        if self.matern_lengthscale <= 0 or self.matern_variance <= 0:
            raise ValueError("Matern lengthscale and variance must be > 0")
        if self.linear_variance < 0:
            raise ValueError("linear variance must be >= 0")
        if self.noise_variance <= 0:
            raise ValueError("noise variance must be > 0")

    def __call__(self, a, b):
        return product_kernel_matrix(self, a, b)


def kernel_eval(h: GPHyper, x, x2) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    x2 = np.asarray(x2, dtype=np.float64).ravel()
    if x.shape != x2.shape:
        raise ValueError(f"input widths differ: {x.shape} vs {x2.shape}")
    d = float(np.linalg.norm(x - x2))
    s = np.sqrt(3.0) * d / h.matern_lengthscale
    return float(h.linear_variance * np.dot(x, x2) * h.matern_variance * (1.0 + s) * np.exp(-s))


def product_kernel_matrix(h: GPHyper, a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    b = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
    d = np.sqrt(np.maximum(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1), 0.0))
    s = np.sqrt(3.0) * d / h.matern_lengthscale
    return h.linear_variance * (a @ b.T) * h.matern_variance * (1.0 + s) * np.exp(-s)


@dataclass
class GPPosterior:
    kernel: Callable
    noise_variance: float
    x_train: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray

    def predict(self, x_query, include_noise: bool = False):
        """Posterior mean and marginal variance of the latent function."""
        xq = np.asarray(x_query, dtype=np.float64).reshape(len(x_query), -1)
        kq = self.kernel(xq, self.x_train)
        mean = kq @ self.alpha
        v = solve_triangular(self.chol, kq.T, lower=True)
        prior = np.array([self.kernel(xq[i : i + 1], xq[i : i + 1])[0, 0] for i in range(len(xq))])
        var = np.maximum(prior - np.sum(v * v, axis=0), 0.0)
        if include_noise:
            var = var + self.noise_variance
        return mean, var

    def covariance(self, x_query) -> tuple[np.ndarray, np.ndarray]:
        xq = np.asarray(x_query, dtype=np.float64).reshape(len(x_query), -1)
        kq = self.kernel(xq, self.x_train)
        v = solve_triangular(self.chol, kq.T, lower=True)
        return kq @ self.alpha, self.kernel(xq, xq) - v.T @ v


def gp_fit(h, x, y, kernel: Callable | None = None, noise_variance: float | None = None) -> GPPosterior:
    """Exact posterior. ``h`` supplies the kernel (a ``GPHyper`` or any callable with ``noise_variance``)."""
    x = np.asarray(x, dtype=np.float64)
    x = x.reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) == 0 or len(x) != len(y):
        raise ValueError(f"need matching non-empty inputs, got {len(x)} inputs and {len(y)} targets")
    kern = kernel if kernel is not None else h
    noise = noise_variance if noise_variance is not None else h.noise_variance
    k = kern(x, x) + noise * np.eye(len(x))
    chol = jittered_cholesky(k)
    alpha = solve_triangular(chol.T, solve_triangular(chol, y, lower=True), lower=False)
    return GPPosterior(kern, noise, x, chol, alpha)


def gp_sample(post: GPPosterior, x_query, rng: np.random.Generator) -> np.ndarray:
    """One joint draw of the latent function at ``x_query``."""
    mean, cov = post.covariance(x_query)
    scale = max(float(np.max(np.abs(np.diag(cov)))), 1e-300)
    # jitter relative to the covariance scale so a collapsed posterior returns its mean
    chol = jittered_cholesky(cov / scale) * np.sqrt(scale)
    return mean + chol @ rng.standard_normal(len(mean))


def gp_prior_predict(kernel: Callable, x_query):
    xq = np.asarray(x_query, dtype=np.float64).reshape(len(x_query), -1)
    return np.zeros(len(xq)), np.array([kernel(xq[i : i + 1], xq[i : i + 1])[0, 0] for i in range(len(xq))])
