"""Discrete DDPM coefficient tables with per-frame noise levels.

Level ``k`` runs over ``0..f``; level 0 is a clean frame and ``f`` doubles as
the relay-buffer capacity and the total number of diffusion steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseSchedule",
    "build_schedule",
    "perturb",
    "reverse_step",
    "ddim_step",
    "sample_levels",
    "sample_level_batch",
    "linear_levels",
    "LEVEL_MODES",
]

LEVEL_MODES = ("uniform", "linear", "random", "mixture", "chunkwise")


@dataclass(frozen=True)
class NoiseSchedule:
    f: int
    kind: str
    beta: np.ndarray  # index 0 unused (0.0); beta[k] for k = 1..f
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        """Reverse-step std with the posterior variance; sigma[1] = 0."""
        s = np.zeros(self.f + 1)
        k = np.arange(2, self.f + 1)
        s[k] = np.sqrt(self.beta[k] * (1.0 - self.alpha_bar[k - 1]) / (1.0 - self.alpha_bar[k]))
        return s

    def check_levels(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=np.int64)
        if k.size and (k.min() < 0 or k.max() > self.f):
            raise ValueError(f"noise level out of range 0..{self.f}: {k.min()}..{k.max()}")
        return k


def build_schedule(f: int, kind: str = "cosine_beta", beta1: float = 1e-4,
                   betaF: float = 0.02) -> NoiseSchedule:
    """Build beta/alpha/alpha_bar tables for ``f`` levels.

    ``linear_beta`` spaces beta evenly from ``beta1`` to ``betaF``;
    ``cosine_beta`` derives beta from the squared-cosine alpha_bar profile
    (offset 0.008) clipped to [1e-6, 0.999] and ignores the beta bounds.
    """
    if f < 2:
        raise ValueError(f"need at least 2 levels, got f={f}")
    if kind == "linear_beta":
        if not (0.0 < beta1 <= betaF < 1.0):
            raise ValueError(f"invalid beta bounds ({beta1}, {betaF})")
        betas = np.linspace(beta1, betaF, f)
    elif kind == "cosine_beta":
        s = 0.008
        t = np.arange(f + 1) / f
        ab = np.cos((t + s) / (1 + s) * math.pi / 2) ** 2
        betas = np.clip(1.0 - ab[1:] / ab[:-1], 1e-6, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if not (beta[1] < beta[f] and np.all(np.diff(beta[1:]) >= 0)):
        raise ValueError("beta must be non-decreasing with beta[1] < beta[f]")
    if not (np.all(np.diff(alpha_bar) < 0) and alpha_bar[f] > 0):
        raise ValueError("alpha_bar must be strictly decreasing and positive")
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(f=f, kind=kind, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def perturb(A: np.ndarray, k, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noise each frame to its own level.

    ``A`` and ``eps`` have frames on the second-to-last axis; ``k`` holds one
    level per frame (broadcast over leading axes).
    """
    k = sched.check_levels(k)
    ab = sched.alpha_bar[k][..., None]
    return np.sqrt(ab) * A + np.sqrt(1.0 - ab) * eps


def reverse_step(a_k: np.ndarray, eps_pred: np.ndarray, k, z: np.ndarray,
                 sched: NoiseSchedule) -> np.ndarray:
    """One ancestral DDPM step from level ``k`` to ``k - 1``.

    ``k`` may be a scalar or an array broadcastable against the frame axis of
    ``a_k`` (one level per frame). Frames at level 1 receive no fresh noise.
    """
    k = sched.check_levels(k)
    if np.any(k < 1):
        raise ValueError("reverse_step needs level >= 1")
    if k.ndim:
        k = k[..., None]
    beta, alpha, ab = sched.beta[k], sched.alpha[k], sched.alpha_bar[k]
    mean = (a_k - beta / np.sqrt(1.0 - ab) * eps_pred) / np.sqrt(alpha)
    return mean + sched.sigma[k] * z


def ddim_step(a_k: np.ndarray, eps_pred: np.ndarray, k, k_prev, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta = 0) DDIM jump from level ``k`` to ``k_prev``."""
    k = sched.check_levels(k)
    k_prev = sched.check_levels(k_prev)
    if np.any(k_prev >= k):
        raise ValueError(f"ddim_step needs k_prev < k, got {k_prev} >= {k}")
    if k.ndim:
        k = k[..., None]
    if k_prev.ndim:
        k_prev = k_prev[..., None]
    ab, ab_prev = sched.alpha_bar[k], sched.alpha_bar[k_prev]
    x0 = (a_k - np.sqrt(1.0 - ab) * eps_pred) / np.sqrt(ab)
    return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_pred


def linear_levels(f: int) -> np.ndarray:
    return np.arange(1, f + 1, dtype=np.int64)


def sample_levels(mode: str, f: int, rng: np.random.Generator, p_linear: float = 0.4,
                  chunks: int = 4) -> np.ndarray:
    """Draw one level vector of length ``f`` for a training element."""
    if mode == "uniform":
        return np.full(f, rng.integers(1, f + 1), dtype=np.int64)
    if mode == "linear":
        return linear_levels(f)
    if mode == "random":
        return rng.integers(1, f + 1, size=f).astype(np.int64)
    if mode == "mixture":
        if not 0.0 <= p_linear <= 1.0:
            raise ValueError(f"p_linear {p_linear} outside [0, 1]")
        if rng.random() < p_linear:
            return linear_levels(f)
        return rng.integers(1, f + 1, size=f).astype(np.int64)
    if mode == "chunkwise":
        return _chunkwise(f, chunks, rng)
    raise ValueError(f"unknown level mode {mode!r}")


def _chunkwise(f: int, chunks: int, rng: np.random.Generator) -> np.ndarray:
    # equal-width chunks share a level; levels strictly increase chunk to chunk
    if chunks < 1 or f % chunks or chunks > f:
        raise ValueError(f"f={f} not divisible into {chunks} chunks")
    width = f // chunks
    picks = np.sort(rng.choice(np.arange(1, f + 1), size=chunks, replace=False))
    return np.repeat(picks, width).astype(np.int64)


def sample_level_batch(mode: str, f: int, batch: int, rng: np.random.Generator,
                       p_linear: float = 0.4, chunks: int = 4) -> np.ndarray:
    """Stack ``batch`` independent draws into a (batch, f) integer array."""
    return np.stack([sample_levels(mode, f, rng, p_linear, chunks) for _ in range(batch)])
