"""Noise-relaying buffer inference: laddering init and one-denoise-one-execute stepping.

Buffers are batched: ``frames`` has shape (B, f, act_dim) and all rows share
one level vector, so B independent episodes advance in lockstep with one
model call per step. Each row draws its noise from its own generator.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .denoiser import Denoiser
from .envbench.demos import NormStats
from .schedule import NoiseSchedule, ddim_step, linear_levels, reverse_step

__all__ = [
    "RelayBuffer",
    "StepRecord",
    "EpisodeRecord",
    "BufferStateError",
    "ladder_init",
    "pure_noise_init",
    "relay_step",
    "relay_rollout",
    "pure_noise_rollout",
    "rollout_relay_batch",
    "episode_rngs",
    "ObsWindow",
    "write_trace_jsonl",
]


class BufferStateError(RuntimeError):
    """The relay buffer is not in the state an operation requires."""


@dataclass
class RelayBuffer:
    frames: np.ndarray  # (B, f, act_dim), normalised action space
    levels: np.ndarray  # (f,) shared by all rows
    t: int = 0
    nfe_count: int = 0
    actions_executed: int = 0

    @property
    def f(self) -> int:
        return self.frames.shape[1]

    def steady(self) -> bool:
        return bool(np.array_equal(self.levels, linear_levels(self.f)))


@dataclass
class StepRecord:
    t: int
    action: list[float]
    levels_before: list[int]
    levels_after: list[int]
    nfe: int
    obs_t: int  # env step of the newest observation the forward pass saw
    chunk: int = -1  # DP only: which inference produced the action

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


@dataclass
class EpisodeRecord:
    seed: int
    success: bool = False
    steps: int = 0
    nfes: int = 0
    actions: list[np.ndarray] = field(default_factory=list)
    observations: list[np.ndarray] = field(default_factory=list)
    trace: list[StepRecord] = field(default_factory=list)
    collided: bool = False

    @property
    def nfes_per_action(self) -> float:
        return self.nfes / self.steps if self.steps else float("inf")


def episode_rngs(seed: int, n: int, offset: int = 0) -> list[np.random.Generator]:
    """Counter-based per-episode generators keyed by (seed, episode index)."""
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, offset + i]))) for i in range(n)]


def _normal(rngs: Sequence[np.random.Generator], shape: tuple[int, ...]) -> np.ndarray:
    return np.stack([g.standard_normal(shape) for g in rngs])


def _as_rngs(rng, b: int) -> list[np.random.Generator]:
    if isinstance(rng, np.random.Generator):
        if b != 1:
            raise ValueError("pass one generator per row for batched buffers")
        return [rng]
    rngs = list(rng)
    if len(rngs) != b:
        raise ValueError(f"{len(rngs)} generators for {b} rows")
    return rngs


def _check_model(model: Denoiser, sched: NoiseSchedule) -> None:
    if model.cfg.f != sched.f:
        raise ValueError(f"model trained for f={model.cfg.f} but schedule has f={sched.f}")


def _batched_obs(obs_window) -> np.ndarray:
    obs = np.asarray(obs_window, dtype=np.float64)
    return obs[None] if obs.ndim == 2 else obs


def pure_noise_init(f: int, act_dim: int, rng, batch: int = 1) -> RelayBuffer:
    rngs = _as_rngs(rng, batch)
    return RelayBuffer(_normal(rngs, (f, act_dim)), np.full(f, f, dtype=np.int64))


def ladder_init(model: Denoiser, obs0, sched: NoiseSchedule, rng, stochastic: bool = True) -> RelayBuffer:
    """Turn an all-level-f buffer into the 1..f ladder with f - 1 model calls.

    Every pass evaluates all frames at their current levels (conditioned on
    the initial observation window) and steps down each frame still above its
    ladder target ``j + 1``.
    """
    _check_model(model, sched)
    obs = _batched_obs(obs0)
    b, f = obs.shape[0], sched.f
    rngs = _as_rngs(rng, b)
    buf = pure_noise_init(f, model.cfg.act_dim, rngs, b)
    target = linear_levels(f)
    for _ in range(f - 1):
        eps = model.predict_eps(buf.frames, buf.levels, obs, sched)
        buf.nfe_count += 1
        move = buf.levels > target
        z = _normal(rngs, (f, model.cfg.act_dim)) if stochastic else np.zeros_like(buf.frames)
        idx = np.flatnonzero(move)
        buf.frames[:, idx] = reverse_step(buf.frames[:, idx], eps[:, idx], buf.levels[idx], z[:, idx], sched)
        buf.levels[idx] -= 1
    assert buf.steady()
    return buf


def relay_step(buf: RelayBuffer, model: Denoiser, obs_window, sched: NoiseSchedule, rng,
               norm: NormStats | None = None, stochastic: bool = True,
               clamp: bool = False) -> tuple[np.ndarray, RelayBuffer]:
    """Denoise every frame once, pop the clean head, append fresh noise at the tail.

    Returns the executed actions, one row per buffer row (denormalised when
    ``norm`` is given). With ``clamp`` a non-ladder buffer is allowed: frames
    more than one level above their target jump there with a deterministic
    DDIM step.
    """
    _check_model(model, sched)
    f, ca = buf.f, buf.frames.shape[2]
    if not clamp and not buf.steady():
        raise BufferStateError(f"relay_step needs levels 1..{f}, got {buf.levels.tolist()}")
    obs = _batched_obs(obs_window)
    b = buf.frames.shape[0]
    if obs.shape[0] != b:
        raise ValueError(f"{obs.shape[0]} observation windows for {b} buffer rows")
    rngs = _as_rngs(rng, b)
    eps = model.predict_eps(buf.frames, buf.levels, obs, sched)
    target = np.arange(f)  # post-step level of position j, before the shift
    single = buf.levels - 1 == target
    if np.any(buf.levels - 1 < target):
        raise BufferStateError(f"frame below its ladder target: {buf.levels.tolist()}")
    z = _normal(rngs, (f, ca)) if stochastic else np.zeros_like(buf.frames)
    new = buf.frames.copy()
    i1 = np.flatnonzero(single)
    new[:, i1] = reverse_step(buf.frames[:, i1], eps[:, i1], buf.levels[i1], z[:, i1], sched)
    ij = np.flatnonzero(~single)
    if ij.size:
        new[:, ij] = ddim_step(buf.frames[:, ij], eps[:, ij], buf.levels[ij], target[ij], sched)
    head = new[:, 0].copy()
    tail = _normal(rngs, (ca,))
    buf.frames = np.concatenate([new[:, 1:], tail[:, None, :]], axis=1)
    buf.levels = linear_levels(f)
    buf.nfe_count += 1
    buf.actions_executed += 1
    buf.t += 1
    action = norm.denorm_act(head) if norm is not None else head
    return action, buf


class ObsWindow:
    """Most recent ``horizon`` observations, oldest first; the first one is repeated at reset."""

    def __init__(self, horizon: int, obs0: np.ndarray):
        self.buf = deque([np.asarray(obs0, dtype=np.float64)] * horizon, maxlen=horizon)

    def push(self, obs: np.ndarray) -> None:
        self.buf.append(np.asarray(obs, dtype=np.float64))

    def array(self) -> np.ndarray:
        return np.stack(self.buf)


def rollout_relay_batch(envs: Sequence, seeds: Sequence[int], model: Denoiser, sched: NoiseSchedule,
                        norm: NormStats, max_steps: int, init: str = "ladder", stochastic: bool = True,
                        policy_rngs: Sequence[np.random.Generator] | None = None,
                        record_trace: bool = False) -> list[EpisodeRecord]:
    """Run several episodes in lockstep with one shared batched model call per step."""
    if init not in ("ladder", "pure_noise"):
        raise ValueError(f"unknown init {init!r}")
    n = len(envs)
    rngs = list(policy_rngs) if policy_rngs is not None else episode_rngs(0, n)
    records = [EpisodeRecord(seed=int(s)) for s in seeds]
    windows = []
    for env, s, rec in zip(envs, seeds, records):
        o = env.reset(int(s))
        rec.observations.append(o)
        windows.append(ObsWindow(model.cfg.obs_horizon, o))
    norm_obs = lambda: np.stack([norm.norm_obs(w.array()) for w in windows])

    if init == "ladder":
        buf = ladder_init(model, norm_obs(), sched, rngs, stochastic)
    else:
        buf = pure_noise_init(sched.f, model.cfg.act_dim, rngs, n)
    for env, rec in zip(envs, records):
        rec.nfes = buf.nfe_count
        rec.success = bool(getattr(env, "success", False))

    active = np.array([not env.done for env in envs])
    for t in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        sub = RelayBuffer(buf.frames[idx], buf.levels.copy(), buf.t)
        before = sub.levels.tolist()
        obs = np.stack([norm.norm_obs(windows[i].array()) for i in idx])
        actions, sub = relay_step(sub, model, obs, sched, [rngs[i] for i in idx], norm, stochastic,
                                  clamp=(init == "pure_noise"))
        buf.frames[idx] = sub.frames
        buf.levels = sub.levels
        buf.t = sub.t
        for a, i in zip(actions, idx):
            env, rec = envs[i], records[i]
            o, done, success = env.step(a)
            windows[i].push(o)
            rec.actions.append(np.asarray(a))
            rec.observations.append(o)
            rec.steps += 1
            rec.nfes += 1
            if record_trace:
                rec.trace.append(StepRecord(t, np.asarray(a).tolist(), before, sub.levels.tolist(), 1, t))
            if done:
                active[i] = False
                rec.success = bool(success)
                rec.collided = bool(getattr(env, "collided", False))
    return records


def relay_rollout(env, model: Denoiser, sched: NoiseSchedule, max_steps: int, seed: int,
                  norm: NormStats, stochastic: bool = True) -> EpisodeRecord:
    rng = episode_rngs(seed, 1)
    return rollout_relay_batch([env], [seed], model, sched, norm, max_steps, "ladder", stochastic, rng,
                               record_trace=True)[0]


def pure_noise_rollout(env, model: Denoiser, sched: NoiseSchedule, max_steps: int, seed: int,
                       norm: NormStats, stochastic: bool = True) -> EpisodeRecord:
    rng = episode_rngs(seed, 1)
    return rollout_relay_batch([env], [seed], model, sched, norm, max_steps, "pure_noise", stochastic, rng,
                               record_trace=True)[0]


def write_trace_jsonl(records: Sequence[StepRecord], path) -> Path:
    path = Path(path)
    path.write_text("".join(r.to_json() + "\n" for r in records))
    return path
