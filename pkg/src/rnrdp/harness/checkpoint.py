"""RNRCKPT1 checkpoint files.

Layout (little-endian)::

    b"RNRCKPT1"                               8 bytes
    version                                   u32
    config snapshot                           u32 length + utf-8 config text
    schedule: f u32, kind (u16 length + bytes), beta1 f64, betaF f64, beta f64[f + 1]
    norm stats: state_dim u32, act_dim u32, obs_min, obs_max f32[state_dim], act_min, act_max f32[act_dim]
    array count                               u32
    per array: name (u16 length + bytes), rank u8, dims u32[rank], payload f32[prod(dims)]

Parameter arrays are stored twice, prefixed ``raw/`` and ``ema/``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..denoiser import Denoiser
from ..envbench.demos import NormStats, _Reader
from ..numkit import ParamStore
from ..schedule import NoiseSchedule, build_schedule
from .config import RunConfig, dump_config, parse_config

__all__ = ["Checkpoint", "CheckpointFormatError", "save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"RNRCKPT1"
VERSION = 1


class CheckpointFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Checkpoint:
    config: RunConfig
    sched: NoiseSchedule
    norm: NormStats
    raw: dict[str, np.ndarray]
    ema: dict[str, np.ndarray]

    def model(self, which: str = "ema") -> Denoiser:
        if which not in ("raw", "ema"):
            raise ValueError("which must be 'raw' or 'ema'")
        model = Denoiser(self.config.model)
        model.params.load_state({k: np.asarray(v, np.float64) for k, v in getattr(self, which).items()})
        return model

    @classmethod
    def from_params(cls, config: RunConfig, sched: NoiseSchedule, norm: NormStats, raw: ParamStore,
                    ema: ParamStore) -> "Checkpoint":
        return cls(config, sched, norm, raw.state(), ema.state())


def _str16(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def _f32(x) -> bytes:
    return np.asarray(x, dtype="<f4").tobytes()


def save_checkpoint(ck: Checkpoint, path) -> Path:
    path = Path(path)
    cfg_text = dump_config(ck.config).encode("utf-8")
    s = ck.sched
    sch = ck.config.schedule
    ns = ck.norm
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg_text)), cfg_text,
             struct.pack("<I", s.f), _str16(s.kind), struct.pack("<dd", sch.beta1, sch.betaF),
             np.asarray(s.beta, dtype="<f8").tobytes(),
             struct.pack("<II", len(ns.obs_min), len(ns.act_min)),
             _f32(ns.obs_min), _f32(ns.obs_max), _f32(ns.act_min), _f32(ns.act_max)]
    arrays = [(f"raw/{k}", v) for k, v in ck.raw.items()] + [(f"ema/{k}", v) for k, v in ck.ema.items()]
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        arr = np.asarray(arr)
        parts.append(_str16(name))
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(_f32(arr))
    path.write_bytes(b"".join(parts))
    return path


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes(), CheckpointFormatError)
    if r.take(8, "magic") != MAGIC:
        raise CheckpointFormatError("bad magic", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}", 8)
    (n,) = r.unpack("<I", "config length")
    at = r.off
    try:
        config = parse_config(r.take(n, "config").decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointFormatError(f"unreadable config snapshot: {e}", at) from None
    (f,) = r.unpack("<I", "schedule f")
    (kn,) = r.unpack("<H", "schedule kind length")
    kind = r.take(kn, "schedule kind").decode("utf-8")
    beta1, betaF = r.unpack("<dd", "schedule bounds")
    at = r.off
    beta = np.frombuffer(r.take(8 * (f + 1), "beta table"), dtype="<f8")
    try:
        sched = build_schedule(f, kind, beta1, betaF)
    except ValueError as e:
        raise CheckpointFormatError(f"invalid schedule: {e}", at) from None
    if not np.array_equal(sched.beta, beta):
        raise CheckpointFormatError("stored beta table disagrees with rebuilt schedule", at)
    sd, ad = r.unpack("<II", "norm dims")
    norm = NormStats(r.floats(sd, "obs_min"), r.floats(sd, "obs_max"), r.floats(ad, "act_min"), r.floats(ad, "act_max"))
    (count,) = r.unpack("<I", "array count")
    raw: dict[str, np.ndarray] = {}
    ema: dict[str, np.ndarray] = {}
    for i in range(count):
        (ln,) = r.unpack("<H", f"array {i} name length")
        at = r.off
        name = r.take(ln, f"array {i} name").decode("utf-8")
        (rank,) = r.unpack("<B", f"{name} rank")
        dims = r.unpack(f"<{rank}I", f"{name} dims")
        data = r.floats(int(np.prod(dims, dtype=np.int64)), f"{name} payload").reshape(dims)
        prefix, _, key = name.partition("/")
        if prefix == "raw":
            raw[key] = data
        elif prefix == "ema":
            ema[key] = data
        else:
            raise CheckpointFormatError(f"array name {name!r} lacks raw/ or ema/ prefix", at)
    if r.off != len(r.buf):
        raise CheckpointFormatError("trailing bytes after last array", r.off)
    return Checkpoint(config, sched, norm, raw, ema)
