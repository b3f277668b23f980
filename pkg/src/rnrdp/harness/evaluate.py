"""Seeded evaluation of relay / DP / DDIM policies and the eval CSV."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..baselines import rollout_dp_batch
from ..envbench.envs import BimodalReach, make_env
from ..relay import EpisodeRecord, episode_rngs, rollout_relay_batch
from .checkpoint import Checkpoint
from .config import RunConfig

__all__ = [
    "EvalReport",
    "evaluate",
    "mode_labels",
    "mode_switch_count",
    "EVAL_HEADER",
    "write_eval_csv",
    "run_episodes",
]

EVAL_HEADER = ["method", "env", "seed", "episodes", "success_rate", "nfes", "actions", "nfes_per_action",
               "mode_switches"]


def mode_labels(actions: Sequence[np.ndarray], observations: Sequence[np.ndarray]) -> list[int]:
    """Per-step side label (-1 left, +1 right) while the agent is in the bimodal decision zone.

    The label is the sign of the executed action's lateral component; steps
    outside the zone (past the wall or beside the obstacle) carry no label.
    """
    env = BimodalReach()
    labels = []
    for a, o in zip(actions, observations):
        if env.in_decision_zone(np.asarray(o)[:2]):
            s = int(np.sign(a[0]))
            if s:
                labels.append(s)
    return labels


def mode_switch_count(labels: Sequence[int]) -> int:
    """Number of step-to-step flips in a sequence of mode labels."""
    return sum(1 for a, b in zip(labels, labels[1:]) if a != b)


@dataclass
class EvalReport:
    method: str
    env_id: str
    seeds: list[int]
    episodes: int
    per_seed_success: list[float]
    per_seed_nfes: list[int]
    per_seed_actions: list[int]
    per_seed_switches: list[float]
    seconds: float = 0.0
    records: dict[int, list[EpisodeRecord]] = field(default_factory=dict, repr=False)

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.per_seed_success))

    @property
    def nfes(self) -> int:
        return int(sum(self.per_seed_nfes))

    @property
    def actions(self) -> int:
        return int(sum(self.per_seed_actions))

    @property
    def nfes_per_action(self) -> float:
        return self.nfes / self.actions if self.actions else float("inf")

    @property
    def mode_switches(self) -> float:
        """Mean switches per episode (bimodal task); 0 elsewhere."""
        return float(np.mean(self.per_seed_switches))

    def rows(self) -> list[list]:
        out = []
        for s, sr, n, a, sw in zip(self.seeds, self.per_seed_success, self.per_seed_nfes, self.per_seed_actions,
                                   self.per_seed_switches):
            out.append([self.method, self.env_id, s, self.episodes, f"{sr:.6f}", n, a,
                        f"{n / a if a else float('inf'):.6f}", f"{sw:.6f}"])
        return out


def run_episodes(ck: Checkpoint, cfg: RunConfig, seed: int, episodes: int, max_steps: int | None = None,
                 record_trace: bool = False) -> list[EpisodeRecord]:
    """Run ``episodes`` episodes for one evaluation seed, all in lockstep.

    Environment seeds and policy generators are both derived from
    (seed, episode index) so results do not depend on batching.
    """
    model = ck.model("ema")
    envs = [make_env(cfg.env_id, **cfg.env_kwargs()) for _ in range(episodes)]
    env_seeds = [int(np.random.SeedSequence([seed, i, 1]).generate_state(1)[0]) for i in range(episodes)]
    rngs = episode_rngs(seed, episodes)
    steps = envs[0].max_episode_steps if max_steps is None else max_steps
    if cfg.method == "rnrdp":
        return rollout_relay_batch(envs, env_seeds, model, ck.sched, ck.norm, steps, cfg.eval.init,
                                   cfg.eval.stochastic, rngs, record_trace)
    return rollout_dp_batch(envs, env_seeds, model, cfg.dp_infer(), ck.sched, ck.norm, steps, rngs, record_trace)


def evaluate(ck: Checkpoint, cfg: RunConfig | None = None, keep_records: bool = False) -> EvalReport:
    """Evaluate the EMA weights of ``ck`` under the method and protocol in ``cfg``."""
    cfg = cfg or ck.config
    if cfg.env_id != ck.config.env_id:
        raise ValueError(f"checkpoint was trained on {ck.config.env_id!r}, config asks for {cfg.env_id!r}")
    if cfg.model != ck.config.model:
        raise ValueError("config model section does not match the checkpoint's model")
    start = time.perf_counter()
    rep = EvalReport(cfg.method, cfg.env_id, list(cfg.eval.seeds), cfg.eval.episodes, [], [], [], [])
    for seed in cfg.eval.seeds:
        recs = run_episodes(ck, cfg, seed, cfg.eval.episodes)
        rep.per_seed_success.append(float(np.mean([r.success for r in recs])))
        rep.per_seed_nfes.append(int(sum(r.nfes for r in recs)))
        rep.per_seed_actions.append(int(sum(r.steps for r in recs)))
        if cfg.env_id == "bimodal_reach":
            rep.per_seed_switches.append(float(np.mean(
                [mode_switch_count(mode_labels(r.actions, r.observations)) for r in recs])))
        else:
            rep.per_seed_switches.append(0.0)
        if keep_records:
            rep.records[seed] = recs
    rep.seconds = time.perf_counter() - start
    return rep


def write_eval_csv(reports: Sequence[EvalReport], path, header: list[str] | None = None,
                   extra: Sequence[Sequence] | None = None) -> Path:
    """One row per (report, seed). ``extra`` prepends per-report key columns."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((header or []) + EVAL_HEADER)
        for i, rep in enumerate(reports):
            for row in rep.rows():
                w.writerow((list(extra[i]) if extra else []) + row)
    return path
