"""Toy control tasks, scripted experts and demonstration files."""

from .demos import DemoDataset, DemoFormatError, Episode, ExpertRegression, NormStats, gen_demos, load_demos, save_demos
from .envs import ENV_IDS, BimodalReach, DriftPush, EnvError, make_env, make_expert

__all__ = [
    "DemoDataset",
    "DemoFormatError",
    "Episode",
    "ExpertRegression",
    "NormStats",
    "gen_demos",
    "load_demos",
    "save_demos",
    "ENV_IDS",
    "BimodalReach",
    "DriftPush",
    "EnvError",
    "make_env",
    "make_expert",
]
