"""Cached demo generation and training keyed by config content, plus the ablation suites."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Callable, Sequence

from ..envbench.demos import DemoDataset, gen_demos, load_demos, save_demos
from ..trainer import train_run, write_loss_csv
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, stable_hash
from .evaluate import EVAL_HEADER, EvalReport, evaluate

__all__ = [
    "CacheCollisionError",
    "demos_for",
    "checkpoint_for",
    "method_config",
    "ablation_cells",
    "ablate",
    "sweep_horizon",
    "SUITES",
    "DEFAULT_CAPACITY_GRID",
    "summary_row",
    "write_summary_csv",
]

SUITES = ("scheme", "init", "predict", "capacity")
DEFAULT_CAPACITY_GRID = (8, 12, 16, 24)
SUMMARY_HEADER = ["suite", "variant"] + EVAL_HEADER


class CacheCollisionError(RuntimeError):
    """A cache entry's recorded config differs from the config that hashed to it."""


def _check_or_write_key(meta: Path, content: dict) -> bool:
    """True if a matching cache entry exists; raise if the recorded content differs."""
    if meta.exists():
        stored = json.loads(meta.read_text())
        if stored != json.loads(json.dumps(content)):
            raise CacheCollisionError(f"cache entry {meta.name} holds a different config")
        return True
    return False


def demos_for(cfg: RunConfig, cache: Path, log: Callable[[str], None] = lambda s: None) -> DemoDataset:
    content = {"env_id": cfg.env_id, "demos": cfg.to_dict()["demos"], "env": cfg.to_dict()["env"]}
    key = stable_hash(content)
    cache.mkdir(parents=True, exist_ok=True)
    path, meta = cache / f"demos_{key}.bin", cache / f"demos_{key}.json"
    if _check_or_write_key(meta, content) and path.exists():
        return load_demos(path)
    log(f"generating {cfg.demos.episodes} {cfg.env_id} demos (seed {cfg.demos.seed})")
    ds = gen_demos(cfg.env_id, cfg.demos.episodes, cfg.demos.seed, cfg.env_kwargs())
    save_demos(ds, path)
    meta.write_text(json.dumps(content, sort_keys=True))
    # reload so training always sees exactly the stored float32 payload
    return load_demos(path)


def checkpoint_for(cfg: RunConfig, cache: Path, log: Callable[[str], None] = lambda s: None) -> Checkpoint:
    """Train (or reuse) the checkpoint determined by ``cfg.training_dict()``."""
    content = cfg.training_dict()
    key = cfg.training_hash()
    cache.mkdir(parents=True, exist_ok=True)
    path, meta = cache / f"ckpt_{key}.rnrckpt", cache / f"ckpt_{key}.json"
    if _check_or_write_key(meta, content) and path.exists():
        return load_checkpoint(path)
    ds = demos_for(cfg, cache, log)
    sched = cfg.sched()
    log(f"training {key}: mode={cfg.train.schedule_mode} f={cfg.model.f} predict={cfg.model.predict} "
        f"steps={cfg.train.steps}")
    res = train_run(ds, cfg.model, cfg.train, sched, log_every=max(cfg.train.steps // 5, 1), log=log)
    ck = Checkpoint.from_params(cfg, sched, ds.norm_stats, res.raw, res.ema)
    save_checkpoint(ck, path)
    write_loss_csv(res.losses, cache / f"loss_{key}.csv")
    meta.write_text(json.dumps(content, sort_keys=True))
    return load_checkpoint(path)


def method_config(base: RunConfig, method: str, **dp) -> RunConfig:
    """``base`` switched to ``method``; DP baselines train with one shared level per sample."""
    if method == "rnrdp":
        return base.with_(method=method)
    # one replace so the DP fields are validated together with the method
    return base.with_(method=method, train={"schedule_mode": "uniform"}, dp=dp)


def ablation_cells(suite: str, base: RunConfig,
                   capacity_grid: Sequence[int] = DEFAULT_CAPACITY_GRID) -> list[tuple[str, RunConfig]]:
    base = base.with_(method="rnrdp")
    if suite == "scheme":
        return [
            ("linear", base.with_(train={"schedule_mode": "linear"})),
            ("random", base.with_(train={"schedule_mode": "random"})),
            ("mixture_0.4", base.with_(train={"schedule_mode": "mixture", "p_linear": 0.4})),
            ("mixture_0.33", base.with_(train={"schedule_mode": "mixture", "p_linear": 0.33})),
            ("chunkwise", base.with_(train={"schedule_mode": "chunkwise"})),
        ]
    if suite == "init":
        return [("ladder", base.with_(eval={"init": "ladder"})),
                ("pure_noise", base.with_(eval={"init": "pure_noise"}))]
    if suite == "predict":
        return [("noise", base.with_(model={"predict": "noise"})),
                ("action", base.with_(model={"predict": "action"}))]
    if suite == "capacity":
        return [(f"f={f}", base.with_(model={"f": f})) for f in sorted(set(int(f) for f in capacity_grid))]
    raise ValueError(f"unknown ablation suite {suite!r}; expected one of {SUITES}")


def summary_row(rep: EvalReport) -> list:
    return [rep.method, rep.env_id, ";".join(str(s) for s in rep.seeds), rep.episodes,
            f"{rep.success_rate:.6f}", rep.nfes, rep.actions, f"{rep.nfes_per_action:.6f}",
            f"{rep.mode_switches:.6f}"]


def write_summary_csv(rows: Sequence[tuple[str, str, EvalReport]], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for suite, variant, rep in rows:
            w.writerow([suite, variant] + summary_row(rep))
    return path


def ablate(suite: str, base: RunConfig, cache: Path, capacity_grid: Sequence[int] = DEFAULT_CAPACITY_GRID,
           log: Callable[[str], None] = lambda s: None) -> list[tuple[str, str, EvalReport]]:
    rows = []
    for variant, cfg in ablation_cells(suite, base, capacity_grid):
        ck = checkpoint_for(cfg, cache, log)
        rep = evaluate(ck, cfg)
        log(f"{suite}/{variant}: success {rep.success_rate:.3f}")
        rows.append((suite, variant, rep))
    return rows


def sweep_horizon(base: RunConfig, cache: Path, horizons: Sequence[int] = (1, 2, 4, 8),
                  log: Callable[[str], None] = lambda s: None) -> list[tuple[str, str, EvalReport]]:
    """Vanilla DP (DDPM) at several execution horizons, sharing one checkpoint."""
    rows = []
    for ta in horizons:
        if ta > base.model.f:
            log(f"T_a={ta}: skipped, exceeds prediction horizon {base.model.f}")
            continue
        cfg = method_config(base, "dp_ddpm", T_a=ta)
        ck = checkpoint_for(cfg, cache, log)
        rep = evaluate(ck, cfg)
        log(f"T_a={ta}: success {rep.success_rate:.3f}")
        rows.append(("horizon", f"T_a={ta}", rep))
    return rows
