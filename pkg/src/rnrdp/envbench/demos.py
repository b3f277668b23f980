"""Scripted-expert demonstrations and the RNRDEMO1 binary file format.

Layout (little-endian)::

    b"RNRDEMO1"                         8 bytes
    version                             u32
    env_id                              u16 length + utf-8 bytes
    episode count                       u32
    state_dim, act_dim                  u32, u32
    obs_min, obs_max                    f32[state_dim] each
    act_min, act_max                    f32[act_dim] each
    per episode:
        steps                           u32
        mode tag                        u8
        observations                    f32[steps * state_dim]
        actions                         f32[steps * act_dim]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import make_env, make_expert

__all__ = [
    "Episode",
    "NormStats",
    "DemoDataset",
    "DemoFormatError",
    "ExpertRegression",
    "gen_demos",
    "rollout_expert",
    "save_demos",
    "load_demos",
    "demo_file_size",
    "MAGIC",
    "VERSION",
]

MAGIC = b"RNRDEMO1"
VERSION = 1
NORM_GUARD = 1e-8
# dims whose recorded range is narrower than this (e.g. fixed goal coordinates)
# map to 0 so float32/float64 rounding cannot blow up through the 1e-8 guard
DEGENERATE_SPAN = 1e-6


class DemoFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


class ExpertRegression(RuntimeError):
    """Scripted expert fell below the success rate needed to generate demos."""


@dataclass
class Episode:
    obs: np.ndarray  # (T, state_dim) float32
    actions: np.ndarray  # (T, act_dim) float32
    mode: int = 0
    success: bool = True

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class NormStats:
    obs_min: np.ndarray
    obs_max: np.ndarray
    act_min: np.ndarray
    act_max: np.ndarray

    @classmethod
    def from_episodes(cls, episodes: list[Episode]) -> "NormStats":
        obs = np.concatenate([e.obs for e in episodes])
        act = np.concatenate([e.actions for e in episodes])
        return cls(obs.min(0), obs.max(0), act.min(0), act.max(0))

    @staticmethod
    def _norm(x, lo, hi):
        lo, hi = np.asarray(lo, np.float64), np.asarray(hi, np.float64)
        out = 2.0 * (np.asarray(x, np.float64) - lo) / (hi - lo + NORM_GUARD) - 1.0
        return np.where(hi - lo < DEGENERATE_SPAN, 0.0, out)

    @staticmethod
    def _denorm(x, lo, hi):
        lo, hi = np.asarray(lo, np.float64), np.asarray(hi, np.float64)
        out = (np.asarray(x, np.float64) + 1.0) * 0.5 * (hi - lo + NORM_GUARD) + lo
        return np.where(hi - lo < DEGENERATE_SPAN, lo, out)

    def norm_obs(self, x):
        return self._norm(x, self.obs_min, self.obs_max)

    def norm_act(self, x):
        return self._norm(x, self.act_min, self.act_max)

    def denorm_act(self, x):
        return self._denorm(x, self.act_min, self.act_max)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"obs_min": self.obs_min, "obs_max": self.obs_max,
                "act_min": self.act_min, "act_max": self.act_max}

    def equals(self, other: "NormStats") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays().values(), other.arrays().values()))


@dataclass
class DemoDataset:
    env_id: str
    episodes: list[Episode]
    norm_stats: NormStats = field(default=None)

    def __post_init__(self):
        if self.norm_stats is None and self.episodes:
            self.norm_stats = NormStats.from_episodes(self.episodes)

    @property
    def state_dim(self) -> int:
        return self.episodes[0].obs.shape[1]

    @property
    def act_dim(self) -> int:
        return self.episodes[0].actions.shape[1]

    def num_steps(self) -> int:
        return sum(len(e) for e in self.episodes)

    def mode_counts(self) -> np.ndarray:
        return np.bincount([e.mode for e in self.episodes], minlength=2)

    def equals(self, other: "DemoDataset") -> bool:
        if self.env_id != other.env_id or len(self.episodes) != len(other.episodes):
            return False
        for a, b in zip(self.episodes, other.episodes):
            if a.mode != b.mode or not np.array_equal(a.obs, b.obs) or not np.array_equal(a.actions, b.actions):
                return False
        return self.norm_stats.equals(other.norm_stats)


def rollout_expert(env_id: str, seed: int, mode: int = 0, env_kwargs: dict | None = None) -> tuple[Episode, bool]:
    env = make_env(env_id, **(env_kwargs or {}))
    expert = make_expert(env_id, mode, seed)
    obs = env.reset(seed)
    obs_list, act_list = [], []
    while not env.done:
        a = expert(obs)
        obs_list.append(obs)
        act_list.append(a)
        obs, _, _ = env.step(a)
    if not act_list:
        # already solved at reset; nothing to imitate
        return Episode(np.zeros((0, env.state_dim), np.float32), np.zeros((0, env.act_dim), np.float32), mode), True
    ep = Episode(np.asarray(obs_list, np.float32), np.asarray(act_list, np.float32), mode, env.success)
    return ep, env.success


def gen_demos(env_id: str, n_episodes: int, seed: int, env_kwargs: dict | None = None,
              min_success: float = 0.9) -> DemoDataset:
    """Run the scripted expert until ``n_episodes`` successful episodes are collected."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    episodes: list[Episode] = []
    attempts = 0
    while len(episodes) < n_episodes:
        mode = int(rng.integers(2)) if env_id == "bimodal_reach" else 0
        ep_seed = int(rng.integers(2**31))
        ep, ok = rollout_expert(env_id, ep_seed, mode, env_kwargs)
        attempts += 1
        if ok and len(ep):
            episodes.append(ep)
        if attempts >= 20 and len(episodes) / attempts < min_success:
            raise ExpertRegression(
                f"{env_id} expert success {len(episodes)}/{attempts} below {min_success:.2f}"
            )
    return DemoDataset(env_id, episodes)


# ---------------------------------------------------------------------------
# binary format
# ---------------------------------------------------------------------------


def _f32(x) -> bytes:
    return np.asarray(x, dtype="<f4").tobytes()


def save_demos(ds: DemoDataset, path) -> Path:
    path = Path(path)
    ns = ds.norm_stats
    name = ds.env_id.encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<H", len(name)), name,
             struct.pack("<I", len(ds.episodes)), struct.pack("<II", ds.state_dim, ds.act_dim),
             _f32(ns.obs_min), _f32(ns.obs_max), _f32(ns.act_min), _f32(ns.act_max)]
    for ep in ds.episodes:
        parts.append(struct.pack("<IB", len(ep), ep.mode))
        parts.append(_f32(ep.obs))
        parts.append(_f32(ep.actions))
    path.write_bytes(b"".join(parts))
    return path


def demo_file_size(env_id: str, state_dim: int, act_dim: int, steps: list[int]) -> int:
    header = 8 + 4 + 2 + len(env_id.encode("utf-8")) + 4 + 8 + 4 * 2 * (state_dim + act_dim)
    return header + sum(5 + 4 * t * (state_dim + act_dim) for t in steps)


class _Reader:
    def __init__(self, buf: bytes, err=DemoFormatError):
        self.buf = buf
        self.off = 0
        self.err = err

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise self.err(f"truncated file while reading {what}", self.off)
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * count, what), dtype="<f4").astype(np.float32)


def load_demos(path) -> DemoDataset:
    r = _Reader(Path(path).read_bytes())
    if r.take(8, "magic") != MAGIC:
        raise DemoFormatError("bad magic", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise DemoFormatError(f"unsupported version {version}", 8)
    (n,) = r.unpack("<H", "env_id length")
    env_id = r.take(n, "env_id").decode("utf-8")
    (count,) = r.unpack("<I", "episode count")
    sd, ad = r.unpack("<II", "dims")
    ns = NormStats(r.floats(sd, "obs_min"), r.floats(sd, "obs_max"), r.floats(ad, "act_min"), r.floats(ad, "act_max"))
    episodes = []
    for i in range(count):
        steps, mode = r.unpack("<IB", f"episode {i} header")
        obs = r.floats(steps * sd, f"episode {i} observations").reshape(steps, sd)
        act = r.floats(steps * ad, f"episode {i} actions").reshape(steps, ad)
        episodes.append(Episode(obs, act, int(mode), True))
    if r.off != len(r.buf):
        raise DemoFormatError("trailing bytes after last episode", r.off)
    return DemoDataset(env_id, episodes, ns)
