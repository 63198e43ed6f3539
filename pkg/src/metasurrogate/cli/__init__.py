"""Configuration, checkpoints, pipelines and reporting for the ``metasurrogate`` command."""

from metasurrogate.cli.checkpoint import FORMAT_VERSION, Checkpoint, checkpoint_load, checkpoint_save
from metasurrogate.cli.config import ExperimentConfig, load_config, validate
from metasurrogate.cli.pipelines import run
from metasurrogate.cli.report import write_report

__all__ = [
    "FORMAT_VERSION", "Checkpoint", "ExperimentConfig", "checkpoint_load", "checkpoint_save", "load_config", "run",
    "validate", "write_report",
]
