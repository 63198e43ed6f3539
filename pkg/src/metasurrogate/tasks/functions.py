"""Smooth random 1-D functions used as the BO pretraining distribution."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from metasurrogate.errors import NumericError

JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class SEKernel:
    lengthscale: float = 0.25
    variance: float = 1.0

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
        b = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
        sq = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
        return self.variance * np.exp(-0.5 * sq / self.lengthscale**2)


def jittered_cholesky(k: np.ndarray) -> np.ndarray:
    """Cholesky of ``k + j I`` for the smallest jitter in 1e-10..1e-6 that succeeds."""
    eye = np.eye(len(k))
    for j in JITTERS:
        try:
            return np.linalg.cholesky(k + j * eye)
        except np.linalg.LinAlgError:
            continue
    raise NumericError(f"matrix not positive definite even with jitter {JITTERS[-1]:g}")


@dataclass
class FunctionTask:
    grid: np.ndarray
    values: np.ndarray
    noise_std: float = 0.0
    task_id: int = 0
    seed: Optional[int] = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grid.ndim == 1 and np.any(np.diff(self.grid) <= 0):
            raise ValueError("1-D grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("function values must be finite")

    @property
    def x(self) -> np.ndarray:
        return self.grid.reshape(len(self.grid), -1)

    def evaluate(self, index: int, rng: Optional[np.random.Generator] = None) -> float:
        v = float(self.values[index])
        if self.noise_std > 0 and rng is not None:
            v += self.noise_std * float(rng.standard_normal())
        return v

    @property
    def f_min(self) -> float:
        return float(self.values.min())

    @property
    def f_max(self) -> float:
        return float(self.values.max())

    def to_record(self) -> dict:
        return {"task_id": self.task_id, "grid": self.grid.tolist(), "values": self.values.tolist(), "seed": self.seed}

    @classmethod
    def from_record(cls, rec: dict) -> "FunctionTask":
        return cls(np.array(rec["grid"]), np.array(rec["values"]), task_id=rec["task_id"], seed=rec.get("seed"))


def sample_gp_function(kernel: SEKernel, grid, rng: np.random.Generator, task_id: int = 0, seed=None) -> FunctionTask:
    grid = np.asarray(grid, dtype=np.float64)
    if len(grid) == 0:
        raise ValueError("grid must be non-empty")
    if kernel.variance == 0.0:
        return FunctionTask(grid, np.zeros(len(grid)), task_id=task_id, seed=seed)
    unit = SEKernel(kernel.lengthscale, 1.0)
    chol = jittered_cholesky(unit(grid, grid))
    values = np.sqrt(kernel.variance) * (chol @ rng.standard_normal(len(grid)))
    return FunctionTask(grid, values, task_id=task_id, seed=seed)


def heldout_functions(n: int, seed: int, grid_size: int = 100, kernel: SEKernel = SEKernel(), domain=(-1.0, 1.0)):
    """Deterministic held-out tasks on a shared evenly spaced grid."""
    grid = np.linspace(domain[0], domain[1], grid_size)
    tasks = []
    for i in range(n):
        task_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        tasks.append(sample_gp_function(kernel, grid, np.random.default_rng(task_seed), task_id=i, seed=task_seed))
    return tasks


@dataclass
class GPFunctionSource:
    """Infinite source of SE-GP draws observed at uniformly scattered inputs."""

    kernel: SEKernel = field(default_factory=SEKernel)
    num_points: int = 100
    domain: tuple = (-1.0, 1.0)
    input_dim: int = 1
    output_dim: int = 1

    def sample_task(self, rng: np.random.Generator):
        x = np.sort(rng.uniform(self.domain[0], self.domain[1], self.num_points))
        task = sample_gp_function(self.kernel, x, rng)
        return task.x, task.values.reshape(-1, 1)

    def describe(self) -> dict:
        return {"kind": "gp_functions", "lengthscale": self.kernel.lengthscale, "variance": self.kernel.variance,
                "num_points": self.num_points, "domain": list(self.domain)}


def dump_tasks(tasks: Iterable[FunctionTask], path) -> None:
    with open(path, "w") as fh:
        for t in tasks:
            fh.write(json.dumps(t.to_record()) + "\n")


def load_tasks(path) -> list:
    return [FunctionTask.from_record(json.loads(line)) for line in Path(path).read_text().splitlines() if line.strip()]
