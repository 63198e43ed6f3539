"""TOML experiment configuration with a strict schema.

Unknown keys, wrong types and missing required fields raise ``ConfigError``
naming the offending field path (``loop.planner.horizon`` and so on).
Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from metasurrogate.errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("pretrain", "bo", "bandit", "mbrl", "two-level")
SOURCE_FOR_KIND = {"bo": "functions", "bandit": "movielens", "mbrl": "cartpole", "two-level": "planted"}
METHODS = {
    "bo": ("np", "gp", "random"),
    "bandit": ("random", "info_gain"),
    "mbrl": ("np", "random"),
    "two-level": ("two_level", "flat"),
}
DATA_ENV = "METASURROGATE_DATA_DIR"

INT, FLOAT, STR, PATH = "int", "float", "str", "path"
INTS, FLOATS, STRS = "int[]", "float[]", "str[]"

TOP = {"kind": STR, "seed": INT, "output_dir": PATH, "replicates": INT}
REQUIRED_TOP = ("kind", "seed", "output_dir")

MODEL = {
    "encoder_sizes": INTS,
    "latent_dim": INT,
    "latent_head_sizes": INTS,
    "decoder_sizes": INTS,
    "min_sigma": FLOAT,
    "max_sigma": FLOAT,
    "latent_min_sigma": FLOAT,
    "max_context_size": INT,
    "activation": STR,
    "embedding_dim": INT,
    "checkpoint": PATH,
}
TRAIN = {"iters": INT, "batch": INT, "lr": FLOAT, "min_context": INT, "max_extra_targets": INT, "log_every": INT}
SOURCE = {
    "kind": STR,
    "lengthscale": FLOAT,
    "variance": FLOAT,
    "num_points": INT,
    "data_dir": PATH,
    "split_seed": INT,
    "max_points": INT,
    "num_tasks": INT,
    "rollouts_per_task": INT,
    "rollout_length": INT,
    "points_per_draw": INT,
    "num_positions": INT,
}
LOOP = {
    "methods": STRS,
    "n_iters": INT,
    "num_functions": INT,
    "grid_size": INT,
    "heldout_seed": INT,
    "budgets": FLOATS,
    "S": INT,
    "max_candidates": INT,
    "max_users": INT,
    "episodes": INT,
    "max_context": INT,
    "pole_mass": FLOAT,
    "cart_mass": FLOAT,
    "budget": INT,
    "inner_steps": INT,
}
PLANNER = {
    "horizon": INT,
    "population": INT,
    "elites": INT,
    "iterations": INT,
    "gamma": FLOAT,
    "init_std": FLOAT,
    "min_std": FLOAT,
}
SECTIONS = {"model": MODEL, "train": TRAIN, "source": SOURCE, "loop": LOOP}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    output_dir: Path
    replicates: int = 1
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)
    loop: dict = field(default_factory=dict)
    planner: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def source_kind(self) -> str:
        return self.source.get("kind", SOURCE_FOR_KIND.get(self.kind, ""))

    def methods(self) -> tuple:
        return tuple(self.loop.get("methods", METHODS.get(self.kind, ())))

    def data_dir(self) -> Path:
        if "data_dir" in self.source:
            return self.source["data_dir"]
        return Path(os.environ.get(DATA_ENV, "data"))


def _check(value, kind: str, where: str, base: Path):
    def bad(expected):
        return ConfigError(f"{where}: expected {expected}, got {type(value).__name__} {value!r}")

    if kind == INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("integer")
        return value
    if kind == FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("number")
        return float(value)
    if kind in (STR, PATH):
        if not isinstance(value, str):
            raise bad("string")
        if kind == PATH:
            p = Path(value).expanduser()
            return p if p.is_absolute() else base / p
        return value
    if not isinstance(value, list):
        raise bad("array")
    elem = {INTS: INT, FLOATS: FLOAT, STRS: STR}[kind]
    return [_check(v, elem, f"{where}[{i}]", base) for i, v in enumerate(value)]


def _section(raw, schema: dict, where: str, base: Path, nested: tuple = ()) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a table")
    out = {}
    for key, value in raw.items():
        path = f"{where}.{key}" if where else key
        if key in nested:
            continue
        if key not in schema:
            raise ConfigError(f"{path}: unknown key")
        out[key] = _check(value, schema[key], path, base)
    return out


def _positive(section: dict, keys, where: str):
    for key in keys:
        if key in section and section[key] <= 0:
            raise ConfigError(f"{where}.{key}: must be > 0, got {section[key]}")


def validate(raw: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    base = Path(base_dir)
    top = {k: v for k, v in raw.items() if k not in SECTIONS}
    top = _section(top, TOP, "", base)
    for key in REQUIRED_TOP:
        if key not in top:
            raise ConfigError(f"{key}: required field missing")
    if top["kind"] not in KINDS:
        raise ConfigError(f"kind: must be one of {KINDS}, got {top['kind']!r}")
    sections = {name: _section(raw.get(name, {}), schema, name, base, ("planner",) if name == "loop" else ())
                for name, schema in SECTIONS.items()}
    planner = _section(raw.get("loop", {}).get("planner", {}), PLANNER, "loop.planner", base)
    cfg = ExperimentConfig(
        kind=top["kind"],
        seed=top["seed"],
        output_dir=top["output_dir"],
        replicates=top.get("replicates", 1),
        planner=planner,
        base_dir=base,
        **sections,
    )
    if cfg.replicates < 1:
        raise ConfigError(f"replicates: must be >= 1, got {cfg.replicates}")
    if cfg.seed < 0:
        raise ConfigError(f"seed: must be >= 0, got {cfg.seed}")
    if cfg.train.get("iters", 0) < 0:
        raise ConfigError(f"train.iters: must be >= 0, got {cfg.train['iters']}")
    _positive(cfg.train, ("batch", "lr", "min_context", "max_extra_targets"), "train")
    _positive(cfg.loop, ("n_iters", "num_functions", "grid_size", "S", "max_candidates", "max_users", "episodes",
                         "max_context", "pole_mass", "cart_mass", "budget", "inner_steps"), "loop")
    expected_source = SOURCE_FOR_KIND.get(cfg.kind)
    if cfg.kind == "pretrain":
        if cfg.source_kind not in ("functions", "movielens", "cartpole"):
            raise ConfigError(f"source.kind: pretrain needs functions, movielens or cartpole, got {cfg.source_kind!r}")
    elif cfg.source_kind != expected_source:
        raise ConfigError(f"source.kind: {cfg.kind} runs on {expected_source!r}, got {cfg.source_kind!r}")
    allowed = METHODS.get(cfg.kind, ())
    for i, m in enumerate(cfg.methods()):
        if m not in allowed:
            raise ConfigError(f"loop.methods[{i}]: {m!r} not in {allowed}")
    for b in cfg.loop.get("budgets", ()):
        if not 0 < b < 1:
            raise ConfigError(f"loop.budgets: fractions must lie in (0, 1), got {b}")
    ckpt = cfg.model.get("checkpoint")
    if ckpt is not None and not ckpt.exists():
        raise ConfigError(f"model.checkpoint: file not found: {ckpt}")
    if cfg.source_kind == "movielens" and not (cfg.data_dir() / "ml-100k").is_dir():
        raise ConfigError(f"source.data_dir: no ml-100k directory under {cfg.data_dir()} (set {DATA_ENV} or source.data_dir)")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return validate(raw, path.resolve().parent)
