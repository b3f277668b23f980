"""Two point-mass toy tasks in the unit square.

BimodalReach: reach either of two symmetric goals by passing left or right of
a central obstacle; the direct route up the middle collides with it.

DriftPush: push a disc into a goal while the disc receives a random velocity
impulse every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EnvError",
    "BimodalReach",
    "DriftPush",
    "BimodalExpert",
    "PushExpert",
    "make_env",
    "make_expert",
    "ENV_IDS",
    "DEFAULT_RHO",
]

ENV_IDS = ("bimodal_reach", "drift_push")

DT = 0.1
DAMPING = 0.9
# accel gain; terminal speed is GAIN * DT / (1 - DAMPING) = 0.3 units/s
GAIN = 0.3


class EnvError(RuntimeError):
    """Misuse of an environment (e.g. stepping after the episode ended)."""


def _clip_action(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(a)):
        raise EnvError(f"non-finite action {a}")
    return np.clip(a, -1.0, 1.0)


def _integrate(pos: np.ndarray, vel: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vel = DAMPING * vel + DT * GAIN * a
    pos = np.clip(pos + DT * vel, 0.0, 1.0)
    return pos, vel


@dataclass
class _Rect:
    x0: float
    x1: float
    y0: float
    y1: float

    def contains(self, p: np.ndarray, margin: float = 0.0) -> bool:
        return (self.x0 - margin <= p[0] <= self.x1 + margin) and (self.y0 - margin <= p[1] <= self.y1 + margin)


class BimodalReach:
    env_id = "bimodal_reach"
    state_dim = 8
    act_dim = 2

    WALL_Y = (0.42, 0.52)
    CENTER = _Rect(0.30, 0.70, 0.42, 0.52)
    WALLS = (CENTER,)
    GOALS = np.array([[0.19, 0.82], [0.81, 0.82]])
    GOAL_RADIUS = 0.10
    AGENT_RADIUS = 0.01

    def __init__(self, max_episode_steps: int = 60):
        self.max_episode_steps = max_episode_steps
        self.done = True
        self.success = False
        self.collided = False
        self.t = 0

    def reset(self, seed: int | None = None, start=None) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        if start is None:
            start = (0.5 + self.rng.uniform(-0.03, 0.03), 0.15 + self.rng.uniform(-0.02, 0.02))
        self.pos = np.asarray(start, dtype=np.float64).copy()
        self.vel = np.zeros(2)
        self.t = 0
        self.done = False
        self.success = False
        self.collided = False
        return self.obs()

    def obs(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel, self.GOALS.reshape(-1)])

    def below_wall(self) -> bool:
        return self.pos[1] < self.WALL_Y[0]

    def in_decision_zone(self, pos=None) -> bool:
        """Below the wall and laterally inside the central obstacle's span."""
        p = self.pos if pos is None else pos
        return p[1] < self.WALL_Y[0] and self.CENTER.x0 <= p[0] <= self.CENTER.x1

    def step(self, a) -> tuple[np.ndarray, bool, bool]:
        if self.done:
            raise EnvError("step() called on a finished episode; call reset()")
        a = _clip_action(a)
        self.pos, self.vel = _integrate(self.pos, self.vel, a)
        self.t += 1
        if any(w.contains(self.pos, self.AGENT_RADIUS) for w in self.WALLS):
            self.collided = True
            self.done = True
        elif np.min(np.linalg.norm(self.GOALS - self.pos, axis=1)) < self.GOAL_RADIUS:
            self.success = True
            self.done = True
        elif self.t >= self.max_episode_steps:
            self.done = True
        return self.obs(), self.done, self.success


def _track(target: np.ndarray, pos: np.ndarray, vel: np.ndarray, speed: float, kv: float,
           slow_radius: float = 0.0) -> np.ndarray:
    """Accelerate toward a desired velocity aimed at ``target``."""
    d = target - pos
    dist = float(np.linalg.norm(d))
    if dist < 1e-9:
        v_des = np.zeros(2)
    else:
        scale = min(1.0, dist / slow_radius) if slow_radius > 0 else 1.0
        v_des = d / dist * speed * scale
    return np.clip(kv * (v_des - vel), -1.0, 1.0)


class BimodalExpert:
    """Committed to one side (mode 0 = left, 1 = right), but hides it until late.

    The expert climbs straight toward the wall with small random lateral
    drift (identical in law for both modes), swerves toward its gap once
    above ``SWERVE_Y``, and then tracks its goal. The late, sharp swerve makes
    hesitating between sides end in the central obstacle.
    """

    CLIMB = 0.14
    LATERAL = 0.28
    SWERVE_Y = 0.18
    ABOVE_Y = 0.56

    def __init__(self, mode: int, seed: int | None = 0, jitter: float = 0.05, kv: float = 12.0):
        self.mode = int(mode)
        self.gx = BimodalReach.GOALS[self.mode, 0]
        self.goal = BimodalReach.GOALS[self.mode].copy()
        self.jitter = jitter
        self.kv = kv
        self.rng = np.random.default_rng(seed)
        self.stage = 0
        self.drift = 0.0

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        pos, vel = obs[:2], obs[2:4]
        if self.stage == 0 and pos[1] > self.SWERVE_Y:
            self.stage = 1
        if self.stage == 1 and pos[1] > self.ABOVE_Y:
            self.stage = 2
        if self.stage == 2:
            return _track(self.goal, pos, vel, 0.28, self.kv)
        if self.stage == 0:
            self.drift = 0.7 * self.drift + self.rng.normal(0.0, self.jitter)
            v_des = np.array([self.drift, self.CLIMB])
        else:
            v_des = np.array([np.clip(6.0 * (self.gx - pos[0]), -self.LATERAL, self.LATERAL), self.CLIMB])
        return np.clip(self.kv * (v_des - vel), -1.0, 1.0)


DEFAULT_RHO = 0.02


class DriftPush:
    env_id = "drift_push"
    state_dim = 10
    act_dim = 2

    AGENT_RADIUS = 0.03
    DISC_RADIUS = 0.05
    GOAL_RADIUS = 0.10
    DISC_DAMPING = 0.8

    def __init__(self, max_episode_steps: int = 80, rho: float = DEFAULT_RHO):
        self.max_episode_steps = max_episode_steps
        self.rho = rho
        self.done = True
        self.success = False
        self.t = 0

    def reset(self, seed: int | None = None, disc=None, agent=None, goal=None) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        r = self.rng
        self.goal = np.array([0.5 + r.uniform(-0.1, 0.1), 0.8]) if goal is None else np.asarray(goal, float)
        self.disc = np.array([0.5 + r.uniform(-0.12, 0.12), 0.42 + r.uniform(-0.04, 0.04)]) if disc is None \
            else np.asarray(disc, float)
        if agent is None:
            # start just behind the disc on the line to the goal, with jitter
            u = (self.goal - self.disc) / max(np.linalg.norm(self.goal - self.disc), 1e-9)
            self.agent = self.disc - u * (self.AGENT_RADIUS + self.DISC_RADIUS + 0.05) + r.uniform(-0.03, 0.03, 2)
        else:
            self.agent = np.asarray(agent, float)
        self.agent_vel = np.zeros(2)
        self.disc_vel = np.zeros(2)
        self.t = 0
        self.success = bool(np.linalg.norm(self.disc - self.goal) < self.GOAL_RADIUS)
        self.done = self.success
        return self.obs()

    def obs(self) -> np.ndarray:
        return np.concatenate([self.agent, self.agent_vel, self.disc, self.disc_vel, self.goal])

    def step(self, a) -> tuple[np.ndarray, bool, bool]:
        if self.done:
            raise EnvError("step() called on a finished episode; call reset()")
        a = _clip_action(a)
        self.agent, self.agent_vel = _integrate(self.agent, self.agent_vel, a)
        kick = self.rng.normal(0.0, self.rho, size=2) if self.rho > 0 else np.zeros(2)
        self.disc_vel = self.DISC_DAMPING * self.disc_vel + kick
        self.disc = self.disc + DT * self.disc_vel
        reach = self.AGENT_RADIUS + self.DISC_RADIUS
        d = self.disc - self.agent
        dist = float(np.linalg.norm(d))
        if dist < reach:
            n = d / dist if dist > 1e-9 else np.array([0.0, 1.0])
            self.disc = self.agent + n * reach
            push = float(np.dot(self.agent_vel - self.disc_vel, n))
            if push > 0:
                self.disc_vel = self.disc_vel + push * n
        lo, hi = self.DISC_RADIUS, 1.0 - self.DISC_RADIUS
        self.disc = np.clip(self.disc, lo, hi)
        self.t += 1
        if np.linalg.norm(self.disc - self.goal) < self.GOAL_RADIUS:
            self.success = True
            self.done = True
        elif self.t >= self.max_episode_steps:
            self.done = True
        return self.obs(), self.done, self.success


class PushExpert:
    """Closed-loop pusher: get behind the disc, then drive it at the goal."""

    SPEED = 0.28

    def __init__(self, kv: float = 4.0):
        self.kv = kv
        self.mode = 0

    def reset(self) -> None:
        pass

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        p, v, q, g = obs[0:2], obs[2:4], obs[4:6], obs[8:10]
        R = DriftPush.AGENT_RADIUS + DriftPush.DISC_RADIUS
        to_goal = g - q
        u = to_goal / max(np.linalg.norm(to_goal), 1e-9)
        perp = np.array([-u[1], u[0]])
        rel = p - q
        along = float(rel @ u)
        lateral = float(rel @ perp)
        if along > -0.5 * R:
            side = 1.0 if lateral >= 0 else -1.0
            target = q - u * 0.6 * R + perp * side * (R + 0.04)
        elif abs(lateral) > 0.35 * R:
            target = q - u * (R + 0.02)
        else:
            target = q + u * 0.15 - perp * 2.0 * lateral
        return _track(target, p, v, self.SPEED, self.kv)


def make_env(env_id: str, **kwargs):
    if env_id == "bimodal_reach":
        return BimodalReach(**kwargs)
    if env_id == "drift_push":
        return DriftPush(**kwargs)
    raise ValueError(f"unknown env_id {env_id!r}; expected one of {ENV_IDS}")


def make_expert(env_id: str, mode: int = 0, seed: int | None = 0):
    if env_id == "bimodal_reach":
        return BimodalExpert(mode, seed)
    if env_id == "drift_push":
        return PushExpert()
    raise ValueError(f"unknown env_id {env_id!r}")
