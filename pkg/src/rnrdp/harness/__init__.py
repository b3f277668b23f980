"""Configuration, checkpoints, evaluation, probes, ablations and the CLI."""

from .checkpoint import Checkpoint, CheckpointFormatError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, dump_config, load_config, parse_config, stable_hash
from .evaluate import EvalReport, evaluate, mode_labels, mode_switch_count, write_eval_csv
from .probe import ProbeResult, analyse_samples, mode_probe, power_iteration, two_means_1d
from .runner import CacheCollisionError, ablate, ablation_cells, checkpoint_for, demos_for, method_config, sweep_horizon

__all__ = [
    "Checkpoint",
    "CheckpointFormatError",
    "load_checkpoint",
    "save_checkpoint",
    "ConfigError",
    "RunConfig",
    "dump_config",
    "load_config",
    "parse_config",
    "stable_hash",
    "EvalReport",
    "evaluate",
    "mode_labels",
    "mode_switch_count",
    "write_eval_csv",
    "ProbeResult",
    "analyse_samples",
    "mode_probe",
    "power_iteration",
    "two_means_1d",
    "CacheCollisionError",
    "ablate",
    "ablation_cells",
    "checkpoint_for",
    "demos_for",
    "method_config",
    "sweep_horizon",
]
