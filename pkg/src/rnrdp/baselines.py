"""Vanilla Diffusion Policy inference (DDPM / DDIM) with receding-horizon execution."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .denoiser import Denoiser
from .envbench.demos import NormStats
from .relay import EpisodeRecord, ObsWindow, StepRecord, _as_rngs, _batched_obs, _normal, episode_rngs
from .schedule import NoiseSchedule, ddim_step, reverse_step

__all__ = ["DPInferConfig", "ddim_levels", "dp_infer", "dp_rollout", "rollout_dp_batch"]


@dataclass(frozen=True)
class DPInferConfig:
    T_p: int = 16
    T_a: int = 8
    K: int = 16
    S: int = 8
    sampler: str = "ddpm"

    def __post_init__(self):
        if not 1 <= self.T_a <= self.T_p:
            raise ValueError(f"need 1 <= T_a <= T_p, got T_a={self.T_a}, T_p={self.T_p}")
        if self.sampler not in ("ddpm", "ddim"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.sampler == "ddim" and not 1 <= self.S <= self.K:
            raise ValueError(f"DDIM needs 1 <= S <= K, got S={self.S}, K={self.K}")

    @property
    def nfe_per_inference(self) -> int:
        return self.K if self.sampler == "ddpm" else self.S

    @property
    def nfes_per_action(self) -> float:
        return self.nfe_per_inference / self.T_a


def ddim_levels(K: int, S: int) -> np.ndarray:
    """S evenly spaced levels from K down to 1 (both ends included when S >= 2)."""
    if S == 1:
        return np.array([K], dtype=np.int64)
    lv = np.unique(np.round(np.linspace(K, 1, S)).astype(np.int64))[::-1]
    if len(lv) != S:
        raise ValueError(f"cannot place {S} distinct levels in 1..{K}")
    return lv


def dp_infer(model: Denoiser, obs_window, cfg: DPInferConfig, sched: NoiseSchedule, rng,
             norm: NormStats | None = None, stochastic: bool = True) -> np.ndarray:
    """Denoise a whole T_p-frame sequence from Gaussian noise; every frame shares one level.

    Returns (B, T_p, act_dim), denormalised when ``norm`` is given.
    """
    if model.cfg.f != cfg.T_p or sched.f != cfg.T_p:
        raise ValueError(f"model f={model.cfg.f} / schedule f={sched.f} must equal T_p={cfg.T_p}")
    if cfg.K != sched.f:
        raise ValueError(f"DDPM step count K={cfg.K} must equal the schedule's f={sched.f}")
    obs = _batched_obs(obs_window)
    b = obs.shape[0]
    rngs = _as_rngs(rng, b)
    shape = (cfg.T_p, model.cfg.act_dim)
    x = _normal(rngs, shape)
    if cfg.sampler == "ddpm":
        for k in range(cfg.K, 0, -1):
            eps = model.predict_eps(x, np.full(cfg.T_p, k), obs, sched)
            z = _normal(rngs, shape) if stochastic and k > 1 else np.zeros_like(x)
            x = reverse_step(x, eps, k, z, sched)
    else:
        lv = ddim_levels(cfg.K, cfg.S)
        nxt = np.append(lv[1:], 0)
        for k, k_prev in zip(lv, nxt):
            eps = model.predict_eps(x, np.full(cfg.T_p, k), obs, sched)
            x = ddim_step(x, eps, int(k), int(k_prev), sched)
    return norm.denorm_act(x) if norm is not None else x


def rollout_dp_batch(envs: Sequence, seeds: Sequence[int], model: Denoiser, cfg: DPInferConfig,
                     sched: NoiseSchedule, norm: NormStats, max_steps: int,
                     policy_rngs: Sequence[np.random.Generator] | None = None,
                     record_trace: bool = False) -> list[EpisodeRecord]:
    """Observe, infer T_p actions, execute the first T_a open loop, repeat."""
    n = len(envs)
    rngs = list(policy_rngs) if policy_rngs is not None else episode_rngs(0, n)
    records = [EpisodeRecord(seed=int(s)) for s in seeds]
    windows = []
    for env, s, rec in zip(envs, seeds, records):
        o = env.reset(int(s))
        rec.observations.append(o)
        rec.success = bool(getattr(env, "success", False))
        windows.append(ObsWindow(model.cfg.obs_horizon, o))
    active = np.array([not env.done for env in envs])
    plan = None
    chunk = -1
    obs_t = 0
    for t in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        offset = t % cfg.T_a
        if offset == 0:
            obs = np.stack([norm.norm_obs(windows[i].array()) for i in idx])
            sub_plan = dp_infer(model, obs, cfg, sched, [rngs[i] for i in idx], norm)
            plan = np.zeros((n, cfg.T_p, model.cfg.act_dim))
            plan[idx] = sub_plan
            chunk += 1
            obs_t = t
            for i in idx:
                records[i].nfes += cfg.nfe_per_inference
        for i in idx:
            a = plan[i, offset]
            env, rec = envs[i], records[i]
            o, done, success = env.step(a)
            windows[i].push(o)
            rec.actions.append(np.asarray(a))
            rec.observations.append(o)
            rec.steps += 1
            if record_trace:
                nfe = cfg.nfe_per_inference if offset == 0 else 0
                rec.trace.append(StepRecord(t, a.tolist(), [], [], nfe, obs_t, chunk))
            if done:
                active[i] = False
                rec.success = bool(success)
                rec.collided = bool(getattr(env, "collided", False))
    return records


def dp_rollout(env, model: Denoiser, cfg: DPInferConfig, sched: NoiseSchedule, max_steps: int,
               seed: int, norm: NormStats) -> EpisodeRecord:
    return rollout_dp_batch([env], [seed], model, cfg, sched, norm, max_steps, episode_rngs(seed, 1),
                            record_trace=True)[0]
