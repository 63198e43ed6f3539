"""Trained checkpoints shared by the slow tests, rebuilt from configs/ when missing."""

from pathlib import Path

from metasurrogate.cli.checkpoint import checkpoint_load
from metasurrogate.cli.config import load_config
from metasurrogate.cli.pipelines import run
from metasurrogate.neural_process import NeuralProcess

ROOT = Path(__file__).resolve().parents[1]
ARTIFACTS = ROOT / "artifacts"
CONFIGS = ROOT / "configs"


def trained_checkpoint(name: str):
    path = ARTIFACTS / name / "model.ckpt"
    if not path.exists():
        run(load_config(CONFIGS / f"pretrain_{name}.toml"))
    return checkpoint_load(path)


def np_from(name: str) -> NeuralProcess:
    ck = trained_checkpoint(name)
    return NeuralProcess(ck.config, ck.params)
