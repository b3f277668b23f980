"""Per-frame-level DDPM training: AdamW, warmup + cosine LR, EMA shadow weights."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import numkit as nk
from .denoiser import Denoiser, DenoiserConfig
from .envbench.demos import DemoDataset
from .numkit import ParamStore
from .schedule import LEVEL_MODES, NoiseSchedule, perturb, sample_level_batch

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "WindowSampler",
    "adamw_step",
    "cosine_lr",
    "ema_update",
    "train_step",
    "train_run",
    "TrainResult",
    "write_loss_csv",
]

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 6000
    batch: int = 64
    lr: float = 1e-4
    warmup: int = 500
    weight_decay: float = 1e-6
    ema_decay: float = 0.999
    schedule_mode: str = "mixture"
    p_linear: float = 0.4
    chunks: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.steps > 0 and not self.warmup < self.steps:
            raise ValueError(f"warmup ({self.warmup}) must be < steps ({self.steps})")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.schedule_mode not in LEVEL_MODES:
            raise ValueError(f"unknown schedule_mode {self.schedule_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: ParamStore) -> "OptimizerState":
        return cls({n: np.zeros_like(t.data) for n, t in params.items()},
                   {n: np.zeros_like(t.data) for n, t in params.items()}, 0)


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    if step < cfg.warmup:
        return cfg.lr * step / cfg.warmup
    span = max(cfg.steps - cfg.warmup, 1)
    progress = min((step - cfg.warmup) / span, 1.0)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def adamw_step(params: ParamStore, opt: OptimizerState, lr_t: float, weight_decay: float) -> None:
    """Decoupled weight decay followed by a bias-corrected Adam update, in place."""
    for name, t in params.items():
        g = params.grad(name)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    opt.step += 1
    c1 = 1.0 - BETA1**opt.step
    c2 = 1.0 - BETA2**opt.step
    for name, t in params.items():
        g = params.grad(name)
        m = opt.m[name] = BETA1 * opt.m[name] + (1.0 - BETA1) * g
        v = opt.v[name] = BETA2 * opt.v[name] + (1.0 - BETA2) * g * g
        w = t.data - lr_t * weight_decay * t.data
        t.data = w - lr_t * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def ema_update(ema: ParamStore, w: ParamStore, decay: float) -> None:
    if ema.names() != w.names():
        raise KeyError("EMA and model parameter names differ")
    for name, t in ema.items():
        src = w[name].data
        if src.shape != t.shape:
            raise nk.ShapeError(f"EMA shape mismatch for {name}: {t.shape} vs {src.shape}")
        t.data = decay * t.data + (1.0 - decay) * src


class WindowSampler:
    """Pre-normalised (observation window, action window) pairs.

    Observation windows end at the action window's first step; windows never
    cross episode boundaries. Starts before the first step repeat the first
    observation and windows past the end repeat the final action.
    """

    def __init__(self, dataset: DemoDataset, f: int, obs_horizon: int):
        if not dataset.episodes:
            raise ValueError("empty dataset")
        ns = dataset.norm_stats
        obs_w, act_w = [], []
        for ep in dataset.episodes:
            T = len(ep)
            if T == 0:
                continue
            obs = ns.norm_obs(ep.obs)
            act = ns.norm_act(ep.actions)
            for t in range(T):
                oi = np.clip(np.arange(t - obs_horizon + 1, t + 1), 0, T - 1)
                ai = np.clip(np.arange(t, t + f), 0, T - 1)
                obs_w.append(obs[oi])
                act_w.append(act[ai])
        if not act_w:
            raise ValueError("dataset has no steps")
        self.obs = np.asarray(obs_w)
        self.act = np.asarray(act_w)

    def __len__(self) -> int:
        return len(self.act)

    def sample(self, batch: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        idx = rng.integers(0, len(self), size=batch)
        return self.obs[idx], self.act[idx]


def train_step(batch: tuple[np.ndarray, np.ndarray], model: Denoiser, ema: ParamStore,
               opt: OptimizerState, sched: NoiseSchedule, cfg: TrainConfig,
               rng: np.random.Generator, lr_t: float | None = None) -> float:
    obs_w, act_w = batch
    b, f, ca = act_w.shape
    if f != model.cfg.f or f != sched.f:
        raise ValueError(f"action window length {f} != model f {model.cfg.f} / schedule f {sched.f}")
    levels = sample_level_batch(cfg.schedule_mode, f, b, rng, cfg.p_linear, cfg.chunks)
    eps = rng.standard_normal((b, f, ca))
    noisy = perturb(act_w, levels, eps, sched)
    target = eps if model.cfg.predict == "noise" else act_w
    model.params.zero_grad()
    with nk.Tape() as tape:
        loss = nk.mse_loss(model(noisy, levels, obs_w), target)
    tape.backward(loss)
    if lr_t is None:
        lr_t = cosine_lr(opt.step, cfg)
    adamw_step(model.params, opt, lr_t, cfg.weight_decay)
    ema_update(ema, model.params, cfg.ema_decay)
    return float(loss.data)


@dataclass
class TrainResult:
    raw: ParamStore
    ema: ParamStore
    losses: list[tuple[int, float, float]]  # (step, lr, loss)
    snapshots: dict[int, dict[str, np.ndarray]]  # step -> EMA state
    seconds: float


def train_run(dataset: DemoDataset, model_cfg: DenoiserConfig, cfg: TrainConfig, sched: NoiseSchedule,
              snapshot_steps: tuple[int, ...] = (), log_every: int = 0,
              log: Callable[[str], None] = print) -> TrainResult:
    """Iterate :func:`train_step` over uniformly sampled windows."""
    sampler = WindowSampler(dataset, model_cfg.f, model_cfg.obs_horizon)
    model = Denoiser(model_cfg, seed=cfg.seed)
    ema = model.params.copy()
    opt = OptimizerState.for_params(model.params)
    rng = np.random.default_rng(cfg.seed)
    losses: list[tuple[int, float, float]] = []
    snapshots: dict[int, dict[str, np.ndarray]] = {}
    start = time.perf_counter()
    for step in range(cfg.steps):
        lr_t = cosine_lr(step, cfg)
        loss = train_step(sampler.sample(cfg.batch, rng), model, ema, opt, sched, cfg, rng, lr_t)
        losses.append((step, lr_t, loss))
        if step + 1 in snapshot_steps:
            snapshots[step + 1] = ema.state()
        if log_every and (step + 1) % log_every == 0:
            recent = np.mean([l for _, _, l in losses[-log_every:]])
            log(f"step {step + 1}/{cfg.steps} lr {lr_t:.2e} loss {recent:.4f}")
    return TrainResult(model.params, ema, losses, snapshots, time.perf_counter() - start)


def write_loss_csv(losses, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "lr", "loss"])
        for step, lr, loss in losses:
            w.writerow([step, repr(float(lr)), repr(float(loss))])
    return path
