"""Noise-aware FiLM-MLP denoiser.

Every frame gets its own level embedding; observation features are encoded
once per sample and broadcast to all frames. Each trunk block is

    u = mish(affine(mix(h)))          # mix = depthwise conv over frames
    u = gamma(c_j) * u + beta(c_j)    # c_j = [time_embed(k_j), obs_feat]
    h = h + u

With ``temporal_kernel == 1`` the frame mix is a per-channel scale, so each
output frame depends only on its own input frame and level.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numkit as nk
from .numkit import ParamStore, Tensor

__all__ = ["DenoiserConfig", "Denoiser", "sinusoid", "init_params"]


@dataclass(frozen=True)
class DenoiserConfig:
    f: int = 16
    act_dim: int = 2
    state_dim: int = 8
    obs_horizon: int = 2
    emb_dim: int = 64
    feat_dim: int = 64
    hidden: int = 128
    depth: int = 3
    temporal_kernel: int = 3
    predict: str = "noise"

    def __post_init__(self):
        if self.obs_horizon < 1:
            raise ValueError("obs_horizon must be >= 1")
        if self.predict not in ("noise", "action"):
            raise ValueError(f"predict must be 'noise' or 'action', got {self.predict!r}")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ValueError("temporal_kernel must be a positive odd integer")
        if self.emb_dim % 2:
            raise ValueError("emb_dim must be even")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoid(k, dim: int) -> np.ndarray:
    """Sin/cos positional code of integer levels; frequencies 10000^(-i/(half-1))."""
    k = np.asarray(k, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = k[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: DenoiserConfig, seed: int = 0) -> ParamStore:
    """Fan-in uniform init for every layer. The parameter set never depends on ``f``."""
    rng = np.random.default_rng(seed)
    p = ParamStore()
    E, F, H = cfg.emb_dim, cfg.feat_dim, cfg.hidden
    obs_in = cfg.obs_horizon * cfg.state_dim

    p.add("time.w1", _uniform(rng, E, (E, 2 * E)))
    p.add("time.b1", _uniform(rng, E, (2 * E,)))
    p.add("time.w2", _uniform(rng, 2 * E, (2 * E, E)))
    p.add("time.b2", _uniform(rng, 2 * E, (E,)))

    p.add("obs.w1", _uniform(rng, obs_in, (obs_in, F)))
    p.add("obs.b1", _uniform(rng, obs_in, (F,)))
    p.add("obs.w2", _uniform(rng, F, (F, F)))
    p.add("obs.b2", _uniform(rng, F, (F,)))

    p.add("in.w", _uniform(rng, cfg.act_dim, (cfg.act_dim, H)))
    p.add("in.b", _uniform(rng, cfg.act_dim, (H,)))
    cond = E + F
    for i in range(cfg.depth):
        mix = np.zeros((cfg.temporal_kernel, H))
        mix[cfg.temporal_kernel // 2] = 1.0
        p.add(f"block{i}.mix", mix)
        p.add(f"block{i}.w", _uniform(rng, H, (H, H)))
        p.add(f"block{i}.b", _uniform(rng, H, (H,)))
        # FiLM generator acts on mish([time_emb, obs_feat]); the linear map is
        # stored split by input so the per-level part can be tabulated.
        for part in ("scale", "shift"):
            p.add(f"block{i}.{part}.w_time", _uniform(rng, cond, (E, H)))
            p.add(f"block{i}.{part}.w_obs", _uniform(rng, cond, (F, H)))
            p.add(f"block{i}.{part}.b", _uniform(rng, cond, (H,)))
    p.add("out.w", _uniform(rng, H, (H, cfg.act_dim)))
    p.add("out.b", _uniform(rng, H, (cfg.act_dim,)))
    return p


class Denoiser:
    """Bundles a config with its parameters; ``__call__`` is the forward pass."""

    def __init__(self, cfg: DenoiserConfig, params: ParamStore | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    def time_table(self, params: ParamStore | None = None) -> Tensor:
        """Embeddings for every level 0..f, shape (f + 1, emb_dim)."""
        p = params or self.params
        base = sinusoid(np.arange(self.cfg.f + 1), self.cfg.emb_dim)
        h = nk.mish(nk.affine(base, p["time.w1"], p["time.b1"]))
        return nk.affine(h, p["time.w2"], p["time.b2"])

    def time_embed(self, k: int) -> np.ndarray:
        if not 0 <= k <= self.cfg.f:
            raise ValueError(f"level {k} outside 0..{self.cfg.f}")
        return self.time_table().data[k].copy()

    def encode_obs(self, obs_window, params: ParamStore | None = None) -> Tensor:
        """(b, T_o, state_dim) or (T_o, state_dim) -> (b, feat_dim)."""
        p = params or self.params
        obs = np.asarray(obs_window, dtype=np.float64)
        if obs.ndim == 2:
            obs = obs[None]
        if obs.shape[1:] != (self.cfg.obs_horizon, self.cfg.state_dim):
            raise ValueError(
                f"observation window shape {obs.shape[1:]} != "
                f"({self.cfg.obs_horizon}, {self.cfg.state_dim})"
            )
        flat = obs.reshape(obs.shape[0], -1)
        h = nk.mish(nk.affine(flat, p["obs.w1"], p["obs.b1"]))
        return nk.affine(h, p["obs.w2"], p["obs.b2"])

    def __call__(self, noisy, levels, obs_window, params: ParamStore | None = None) -> Tensor:
        """Predict noise (or clean actions) for every frame.

        noisy: (b, f, act_dim); levels: (b, f) or (f,); obs_window: (b, T_o, state_dim).
        Unbatched inputs (no leading b) are accepted and give a (1, f, act_dim) output.
        """
        cfg, p = self.cfg, params or self.params
        x = np.asarray(noisy.data if isinstance(noisy, Tensor) else noisy, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        b, f, ca = x.shape
        if f != cfg.f or ca != cfg.act_dim:
            raise ValueError(f"noisy frames {x.shape[1:]} != ({cfg.f}, {cfg.act_dim})")
        lv = np.asarray(levels, dtype=np.int64)
        lv = np.broadcast_to(lv, (b, f)) if lv.ndim == 1 else lv
        if lv.shape != (b, f):
            raise ValueError(f"levels shape {lv.shape} != {(b, f)}")
        if lv.min() < 0 or lv.max() > cfg.f:
            raise ValueError(f"levels must lie in 0..{cfg.f}")

        temb = nk.mish(self.time_table(p))
        obs = nk.mish(self.encode_obs(obs_window, p))
        if obs.shape[0] != b:
            raise ValueError(f"batch mismatch: {b} action windows vs {obs.shape[0]} observations")
        level_idx = lv.reshape(-1)
        batch_idx = np.repeat(np.arange(b), f)

        h = nk.affine(x.reshape(b * f, ca), p["in.w"], p["in.b"])
        H = cfg.hidden
        for i in range(cfg.depth):
            film = {}
            for part in ("scale", "shift"):
                per_level = nk.affine(temb, p[f"block{i}.{part}.w_time"], p[f"block{i}.{part}.b"])
                per_obs = nk.affine(obs, p[f"block{i}.{part}.w_obs"])
                film[part] = nk.add(nk.take_rows(per_level, level_idx), nk.take_rows(per_obs, batch_idx))
            mixed = nk.temporal_mix(nk.reshape(h, (b, f, H)), p[f"block{i}.mix"])
            u = nk.mish(nk.affine(nk.reshape(mixed, (b * f, H)), p[f"block{i}.w"], p[f"block{i}.b"]))
            # gamma = 1 + scale keeps the block near identity-modulated at init
            u = nk.film(u, film["scale"], film["shift"])
            h = nk.add(h, u)
            if not np.all(np.isfinite(h.data)):
                raise FloatingPointError(f"non-finite activations after block {i}")
        out = nk.affine(h, p["out.w"], p["out.b"])
        return nk.reshape(out, (b, f, ca))

    def predict_eps(self, noisy, levels, obs_window, sched) -> np.ndarray:
        """Noise estimate regardless of the training target (inference helper)."""
        x = np.asarray(noisy, dtype=np.float64)
        squeeze = x.ndim == 2
        out = self(x, levels, obs_window).data
        if self.cfg.predict == "action":
            lv = np.asarray(levels, dtype=np.int64)
            ab = sched.alpha_bar[np.broadcast_to(lv, out.shape[:2])][..., None]
            xb = x[None] if squeeze else x
            out = (xb - np.sqrt(ab) * out) / np.sqrt(np.maximum(1.0 - ab, 1e-12))
        return out[0] if squeeze else out
