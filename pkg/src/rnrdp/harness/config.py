"""Run configuration: flat ``[section] key = value`` files and content hashes."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..baselines import DPInferConfig
from ..denoiser import DenoiserConfig
from ..envbench.envs import DEFAULT_RHO, ENV_IDS, make_env
from ..schedule import NoiseSchedule, build_schedule
from ..trainer import TrainConfig

__all__ = [
    "METHODS",
    "ScheduleConfig",
    "DemoConfig",
    "EnvConfig",
    "DPConfig",
    "EvalConfig",
    "RunConfig",
    "load_config",
    "parse_config",
    "dump_config",
    "stable_hash",
    "ConfigError",
]

METHODS = ("rnrdp", "dp_ddpm", "dp_ddim")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "linear_beta"
    beta1: float = 0.1
    betaF: float = 0.6

    def build(self, f: int) -> NoiseSchedule:
        return build_schedule(f, self.kind, self.beta1, self.betaF)


@dataclass(frozen=True)
class DemoConfig:
    episodes: int = 400
    seed: int = 0


@dataclass(frozen=True)
class EnvConfig:
    rho: float = DEFAULT_RHO
    max_episode_steps: int = 0  # 0 -> environment default

    def kwargs(self, env_id: str) -> dict:
        kw: dict = {}
        if env_id == "drift_push":
            kw["rho"] = self.rho
        if self.max_episode_steps > 0:
            kw["max_episode_steps"] = self.max_episode_steps
        return kw


@dataclass(frozen=True)
class DPConfig:
    T_a: int = 8
    S: int = 8


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 100
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    init: str = "ladder"
    stochastic: bool = True

    def __post_init__(self):
        if self.init not in ("ladder", "pure_noise"):
            raise ConfigError(f"eval.init must be ladder or pure_noise, got {self.init!r}")
        if self.episodes < 1 or not self.seeds:
            raise ConfigError("eval needs at least one episode and one seed")


@dataclass(frozen=True)
class RunConfig:
    env_id: str = "bimodal_reach"
    method: str = "rnrdp"
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    demos: DemoConfig = field(default_factory=DemoConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    dp: DPConfig = field(default_factory=DPConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.env_id not in ENV_IDS:
            raise ConfigError(f"unknown env_id {self.env_id!r}; expected one of {ENV_IDS}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        env = make_env(self.env_id)
        if self.model.state_dim != env.state_dim or self.model.act_dim != env.act_dim:
            raise ConfigError(
                f"model dims ({self.model.state_dim}, {self.model.act_dim}) do not match {self.env_id} "
                f"({env.state_dim}, {env.act_dim})"
            )
        if self.method != "rnrdp":
            self.dp_infer()  # validates T_a / S against f

    def dp_infer(self) -> DPInferConfig:
        f = self.model.f
        sampler = "ddim" if self.method == "dp_ddim" else "ddpm"
        try:
            return DPInferConfig(T_p=f, T_a=self.dp.T_a, K=f, S=self.dp.S, sampler=sampler)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def sched(self) -> NoiseSchedule:
        return self.schedule.build(self.model.f)

    def env_kwargs(self) -> dict:
        return self.env.kwargs(self.env_id)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval"]["seeds"] = list(self.eval.seeds)
        return d

    def training_dict(self) -> dict:
        """The subset of the config that determines the trained weights."""
        d = self.to_dict()
        return {k: d[k] for k in ("env_id", "model", "train", "schedule", "demos", "env")}

    def hash(self) -> str:
        return stable_hash(self.to_dict())

    def training_hash(self) -> str:
        return stable_hash(self.training_dict())

    def with_(self, **sections) -> "RunConfig":
        """Return a copy with selected fields replaced, e.g. ``with_(train={"steps": 10})``."""
        kw = {}
        for name, val in sections.items():
            cur = getattr(self, name)
            kw[name] = replace(cur, **val) if isinstance(val, dict) else val
        return replace(self, **kw)


def stable_hash(obj) -> str:
    """SHA-256 prefix of canonical JSON; independent of dict key order."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


_SECTIONS = {
    "model": DenoiserConfig,
    "train": TrainConfig,
    "schedule": ScheduleConfig,
    "demos": DemoConfig,
    "env": EnvConfig,
    "dp": DPConfig,
    "eval": EvalConfig,
}


def _coerce(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _build(cls, items: dict[str, str], section: str):
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    kw = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        kw[key] = _coerce(raw, getattr(defaults, key), f"[{section}] {key}")
    try:
        return cls(**kw)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"[{section}] {e}") from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                   interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    for sec in cp.sections():
        if sec != "run" and sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
    run = dict(cp["run"]) if cp.has_section("run") else {}
    for key in run:
        if key not in ("env_id", "method"):
            raise ConfigError(f"[run] unknown key {key!r}")
    kw = {name: _build(cls, dict(cp[name]) if cp.has_section(name) else {}, name)
          for name, cls in _SECTIONS.items()}
    env_id = run.get("env_id", "bimodal_reach")
    if "state_dim" not in (cp["model"] if cp.has_section("model") else {}):
        kw["model"] = replace(kw["model"], state_dim=make_env(env_id).state_dim) if env_id in ENV_IDS else kw["model"]
    try:
        return RunConfig(env_id=env_id, method=run.get("method", "rnrdp"), **kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    d = cfg.to_dict()
    lines = ["[run]", f"env_id = {cfg.env_id}", f"method = {cfg.method}", ""]
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        for key, val in d[name].items():
            if isinstance(val, list):
                val = ", ".join(str(v) for v in val)
            lines.append(f"{key} = {val}")
        lines.append("")
    return "\n".join(lines)
