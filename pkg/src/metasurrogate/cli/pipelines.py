"""Experiment pipelines behind ``metasurrogate run``.

Every pipeline writes one ``<method>__rep<k>.jsonl`` per method and replicate,
then ``summary.csv`` and ``series/``. Training writes ``model.ckpt`` and
``train.jsonl``. Replicate ``k`` draws from ``SeedSequence(seed, spawn_key=(k,))``
and every method in a replicate starts from that same stream, so comparisons are
paired; training uses ``SeedSequence(seed)``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from metasurrogate.cli.checkpoint import checkpoint_load, checkpoint_save
from metasurrogate.cli.config import ExperimentConfig
from metasurrogate.cli.report import write_report
from metasurrogate.decision.bandit import bandit_curve
from metasurrogate.decision.bo import RANDOM, bo_loop
from metasurrogate.decision.mbrl import (
    IN_DIM,
    OUT_DIM,
    MBRLConfig,
    MBRLModel,
    Normalizer,
    PlannerConfig,
    mbrl_meta_train,
    mbrl_test_loop,
)
from metasurrogate.decision.surrogates import GPSurrogate, NPSurrogate
from metasurrogate.decision.two_level import flat_random_search, planted_pool, two_level_search
from metasurrogate.errors import ConfigError
from metasurrogate.neural_process import NeuralProcess, NPConfig, meta_train
from metasurrogate.tasks.cartpole import CartPoleParams, random_policy_rollout
from metasurrogate.tasks.functions import GPFunctionSource, SEKernel, heldout_functions
from metasurrogate.tasks.movielens import RatingTaskSource, load_default

log = logging.getLogger(__name__)

FAILED_MARKER = "FAILED"

# defaults per source; anything in the config overrides them
MODEL_DEFAULTS = {
    "functions": {"encoder_sizes": (128, 128, 128), "decoder_sizes": (128, 128, 128), "max_context_size": 50},
    "movielens": {
        "encoder_sizes": (16, 16, 16),
        "decoder_sizes": (16, 16, 16),
        "latent_dim": 16,
        "latent_head_sizes": (16,),
        "embedding_dim": 8,
        "max_context_size": 100,
    },
    "cartpole": {"max_context_size": 300, "latent_dim": 64},
}
TRAIN_DEFAULTS = {
    "functions": {"iters": 50000, "batch": 16, "lr": 1e-3, "min_context": 1},
    "movielens": {"iters": 4000, "batch": 32, "lr": 1e-3, "min_context": 1},
    "cartpole": {"iters": 20000, "batch": 16, "lr": 1e-4, "min_context": 1, "max_extra_targets": 100},
}
SOURCE_DEFAULTS = {
    "functions": {"lengthscale": 0.25, "variance": 1.0, "num_points": 100},
    "movielens": {"split_seed": 0, "max_points": 200},
    "cartpole": {"num_tasks": 2000, "rollouts_per_task": 10, "rollout_length": 100, "points_per_draw": 400},
    "planted": {"num_tasks": 50, "num_positions": 100},
}
LOOP_DEFAULTS = {
    "bo": {"n_iters": 30, "num_functions": 20, "grid_size": 100, "heldout_seed": 12345},
    "bandit": {"budgets": [0.2, 0.5, 0.8], "S": 5},
    "mbrl": {"episodes": 20, "max_context": 250, "pole_mass": 0.1, "cart_mass": 1.0},
    "two-level": {"budget": 500, "inner_steps": 5},
}


def replicate_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


def training_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def _dumps(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


class RecordWriter:
    """Streams one JSONL file per (method, replicate), flushing every line so a crash leaves partial output."""

    def __init__(self, out: Path, method: str, k: int):
        self.path = out / f"{method}__rep{k}.jsonl"
        self._fh = open(self.path, "w")

    def write(self, rec: dict) -> None:
        self._fh.write(_dumps(rec) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class Trained:
    """A surrogate ready for a loop plus what produced it."""

    model: object
    config: NPConfig
    metadata: dict

    @property
    def model_size(self) -> int:
        np_model = getattr(self.model, "np_model", self.model)
        return np_model.params.num_values()


def _settings(cfg: ExperimentConfig, source_kind: str) -> tuple[dict, dict, dict]:
    model = {**MODEL_DEFAULTS[source_kind], **{k: v for k, v in cfg.model.items() if k != "checkpoint"}}
    train = {**TRAIN_DEFAULTS[source_kind], **cfg.train}
    source = {**SOURCE_DEFAULTS[source_kind], **{k: v for k, v in cfg.source.items() if k not in ("kind", "data_dir")}}
    return model, train, source


def _np_config(model: dict, input_dim: int, output_dim: int, **extra) -> NPConfig:
    known = {f.name for f in fields(NPConfig)}
    try:
        return NPConfig(input_dim=input_dim, output_dim=output_dim, **{k: v for k, v in model.items() if k in known}, **extra)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def _write_trace(out: Path, trace) -> None:
    with open(out / "train.jsonl", "w") as fh:
        for i, loss in enumerate(trace):
            fh.write(_dumps({"iter": i, "loss": float(loss)}) + "\n")


def _load_or_train(cfg: ExperimentConfig, out: Path, npcfg: NPConfig, train: dict, describe: dict,
                   fit: Callable[[np.random.Generator], tuple]) -> tuple:
    """Returns ``(params, metadata)`` from the configured checkpoint, or from ``fit`` (saving a checkpoint)."""
    if "checkpoint" in cfg.model:
        ck = checkpoint_load(cfg.model["checkpoint"], npcfg)
        return ck.params, ck.metadata
    params, trace, extra = fit(training_rng(cfg.seed))
    meta = {"iters": train["iters"], "seed": cfg.seed, "source": describe, "train": dict(train), **extra}
    if trace:
        meta["final_loss"] = float(trace[-1])
    _write_trace(out, trace)
    if train["iters"] > 0:
        checkpoint_save(params, npcfg, out / "model.ckpt", meta)
    return params, meta


def _train_functions(cfg: ExperimentConfig, out: Path) -> Trained:
    model, train, source = _settings(cfg, "functions")
    npcfg = _np_config(model, 1, 1)
    src = GPFunctionSource(SEKernel(source["lengthscale"], source["variance"]), source["num_points"])

    def fit(rng):
        res = meta_train(npcfg, src, train["iters"], train["batch"], train["lr"], rng,
                         max_extra_targets=train.get("max_extra_targets"), min_context=train["min_context"],
                         log_every=train.get("log_every", 0))
        return res.model.params, res.loss_trace, {}

    params, meta = _load_or_train(cfg, out, npcfg, train, src.describe(), fit)
    return Trained(NeuralProcess(npcfg, params), npcfg, meta)


def _movielens(cfg: ExperimentConfig):
    _, _, source = _settings(cfg, "movielens")
    data, vocab, pools = load_default(source["split_seed"], cfg.data_dir())
    return source, vocab, pools


def _train_movielens(cfg: ExperimentConfig, out: Path, vocab, pools) -> Trained:
    model, train, source = _settings(cfg, "movielens")
    npcfg = _np_config(model, vocab.feature_dim, 1, embedding_vocab=vocab.num_movie_ids)
    src = RatingTaskSource(pools["train"], max_points=source["max_points"])

    def fit(rng):
        res = meta_train(npcfg, src, train["iters"], train["batch"], train["lr"], rng,
                         max_extra_targets=train.get("max_extra_targets"), min_context=train["min_context"],
                         log_every=train.get("log_every", 0))
        return res.model.params, res.loss_trace, {}

    describe = {**src.describe(), "split_seed": source["split_seed"]}
    params, meta = _load_or_train(cfg, out, npcfg, train, describe, fit)
    return Trained(NeuralProcess(npcfg, params), npcfg, meta)


def _train_cartpole(cfg: ExperimentConfig, out: Path) -> Trained:
    model, train, source = _settings(cfg, "cartpole")
    npcfg = _np_config(model, IN_DIM, OUT_DIM)
    mcfg = MBRLConfig(
        num_tasks=source["num_tasks"],
        rollouts_per_task=source["rollouts_per_task"],
        rollout_length=source["rollout_length"],
        iters=train["iters"],
        batch=train["batch"],
        lr=train["lr"],
        points_per_draw=source["points_per_draw"],
        max_extra_targets=train["max_extra_targets"],
        np_config=npcfg,
    )

    def fit(rng):
        m = mbrl_meta_train(mcfg, rng, log_every=train.get("log_every", 0))
        return m.np_model.params, m.loss_trace, {"normalizer": m.normalizer.to_dict()}

    describe = {"kind": "cartpole", **source}
    params, meta = _load_or_train(cfg, out, npcfg, train, describe, fit)
    if "normalizer" not in meta:
        raise ConfigError("model.checkpoint: cart-pole checkpoints must carry a normalizer in their metadata")
    model_obj = MBRLModel(NeuralProcess(npcfg, params), Normalizer.from_dict(meta["normalizer"]))
    return Trained(model_obj, npcfg, meta)


# ---------------------------------------------------------------- pipelines


def run_pretrain(cfg: ExperimentConfig, out: Path) -> None:
    if "checkpoint" in cfg.model:
        raise ConfigError("model.checkpoint: pretrain always trains from scratch")
    kind = cfg.source_kind
    if kind == "functions":
        trained = _train_functions(cfg, out)
    elif kind == "movielens":
        _, vocab, pools = _movielens(cfg)
        trained = _train_movielens(cfg, out, vocab, pools)
    else:
        trained = _train_cartpole(cfg, out)
    trace = [json.loads(line)["loss"] for line in (out / "train.jsonl").read_text().splitlines()]
    tail = trace[-max(1, len(trace) // 10):] if trace else [float("nan")]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "iters", "parameters", "final_loss", "tail_mean_loss"])
        w.writerow([cfg.source_kind, trained.metadata["iters"], trained.model_size, tail[-1], sum(tail) / len(tail)])


def run_bo(cfg: ExperimentConfig, out: Path) -> None:
    loop = {**LOOP_DEFAULTS["bo"], **cfg.loop}
    _, _, source = _settings(cfg, "functions")
    kernel = SEKernel(source["lengthscale"], source["variance"])
    tasks = heldout_functions(loop["num_functions"], loop["heldout_seed"], loop["grid_size"], kernel)
    models = {}
    for method in cfg.methods():
        if method == "np":
            models[method] = NPSurrogate(_train_functions(cfg, out).model, seed=cfg.seed)
        elif method == "gp":
            models[method] = GPSurrogate(kernel)
        else:
            models[method] = RANDOM
    for k in range(cfg.replicates):
        for method, model in models.items():
            rng = replicate_rng(cfg.seed, k)
            with RecordWriter(out, method, k) as w:
                for task in tasks:
                    run = bo_loop(model, task, None, loop["n_iters"], rng, seed=cfg.seed)
                    for r in run.records:
                        w.write({**r.to_json(), "task": task.task_id, "replicate": k})


def run_bandit(cfg: ExperimentConfig, out: Path) -> None:
    loop = {**LOOP_DEFAULTS["bandit"], **cfg.loop}
    _, vocab, pools = _movielens(cfg)
    model = NPSurrogate(_train_movielens(cfg, out, vocab, pools).model, seed=cfg.seed)
    users = pools["test"][: loop.get("max_users")]
    budgets = loop["budgets"]
    for k in range(cfg.replicates):
        for method in cfg.methods():
            rng = replicate_rng(cfg.seed, k)
            sse = dict.fromkeys(budgets, 0.0)
            count = dict.fromkeys(budgets, 0)
            for task in users:
                curve = bandit_curve(model, task, budgets, method, rng, S=loop["S"],
                                     max_candidates=loop.get("max_candidates"))
                for f, (s, c) in curve.items():
                    sse[f] += s
                    count[f] += c
            with RecordWriter(out, method, k) as w:
                for i, f in enumerate(budgets):
                    w.write({"iter": i, "budget": f, "rmse": math.sqrt(sse[f] / count[f]), "count": count[f],
                             "users": len(users), "seed": cfg.seed, "replicate": k})


def run_mbrl(cfg: ExperimentConfig, out: Path) -> None:
    loop = {**LOOP_DEFAULTS["mbrl"], **cfg.loop}
    target = CartPoleParams(pole_mass=loop["pole_mass"], cart_mass=loop["cart_mass"])
    try:
        planner = PlannerConfig(**cfg.planner)
    except ValueError as exc:
        raise ConfigError(f"loop.planner: {exc}") from exc
    trained = _train_cartpole(cfg, out) if "np" in cfg.methods() else None
    for k in range(cfg.replicates):
        for method in cfg.methods():
            rng = replicate_rng(cfg.seed, k)
            with RecordWriter(out, method, k) as w:
                if method == "random":
                    for ep in range(loop["episodes"]):
                        total = random_policy_rollout(target, rng)
                        w.write({"iter": ep, "chosen": ep, "observed": total, "episode_reward": total,
                                 "seed": cfg.seed, "replicate": k})
                    continue
                records = []
                mbrl_test_loop(trained.model, target, loop["episodes"], planner, rng,
                               max_context=loop["max_context"], seed=cfg.seed, records=records)
                for r in records:
                    w.write({**r.to_json(), "replicate": k})


def run_two_level(cfg: ExperimentConfig, out: Path) -> None:
    loop = {**LOOP_DEFAULTS["two-level"], **cfg.loop}
    source = {**SOURCE_DEFAULTS["planted"], **{k: v for k, v in cfg.source.items() if k != "kind"}}
    position_model = GPSurrogate(SEKernel(0.3, 1.0), noise_variance=1e-6, prior_mean="context")
    task_model = GPSurrogate(SEKernel(1.0, 1.0), noise_variance=1e-4, prior_mean="context")
    for k in range(cfg.replicates):
        pool = planted_pool(source["num_tasks"], source["num_positions"],
                            np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(k, 0))))
        for method in cfg.methods():
            rng = replicate_rng(cfg.seed, k)
            if method == "two_level":
                run = two_level_search(position_model, task_model, pool, loop["budget"], loop["inner_steps"], rng,
                                       seed=cfg.seed)
            else:
                run = flat_random_search(pool, loop["budget"], rng, seed=cfg.seed)
            with RecordWriter(out, method, k) as w:
                for r in run.records:
                    w.write({**r.to_json(), "replicate": k})


PIPELINES = {
    "pretrain": run_pretrain,
    "bo": run_bo,
    "bandit": run_bandit,
    "mbrl": run_mbrl,
    "two-level": run_two_level,
}


def run(cfg: ExperimentConfig) -> Path:
    """Execute ``cfg``; on failure leave partial outputs plus a ``FAILED`` marker and re-raise."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / FAILED_MARKER
    if marker.exists():
        marker.unlink()
    try:
        PIPELINES[cfg.kind](cfg, out)
        if cfg.kind != "pretrain":
            write_report(out)
    except BaseException as exc:
        marker.write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    return out
