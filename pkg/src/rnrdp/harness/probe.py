"""Multi-modality probe: first executed actions projected on their principal axis."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..baselines import dp_infer
from ..envbench.envs import make_env
from ..relay import ObsWindow, episode_rngs, ladder_init, relay_step
from .checkpoint import Checkpoint

__all__ = [
    "ProbeResult",
    "power_iteration",
    "two_means_1d",
    "analyse_samples",
    "sample_first_actions",
    "mode_probe",
    "write_probe_csv",
    "BIMODAL_THRESHOLD",
]

BIMODAL_THRESHOLD = 0.2


def power_iteration(cov: np.ndarray, iters: int = 100, tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Leading eigenpair of a symmetric PSD matrix. Returns (unit vector, eigenvalue)."""
    cov = np.asarray(cov, dtype=np.float64)
    d = cov.shape[0]
    v = np.zeros(d)
    v[int(np.argmax(np.diag(cov)))] = 1.0
    v += 1e-3
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = cov @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return v, 0.0
        w /= nrm
        if w @ v < 0:
            w = -w
        done = np.linalg.norm(w - v) < tol
        v = w
        if done:
            break
    return v, float(v @ cov @ v)


def two_means_1d(x: np.ndarray, iters: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm on a line, seeded at the extremes. Returns (centres, labels)."""
    x = np.asarray(x, dtype=np.float64)
    c = np.array([x.min(), x.max()])
    labels = np.zeros(len(x), dtype=np.int64)
    for _ in range(iters):
        new = (np.abs(x - c[1]) < np.abs(x - c[0])).astype(np.int64)
        for j in (0, 1):
            if np.any(new == j):
                c[j] = x[new == j].mean()
        if np.array_equal(new, labels):
            break
        labels = new
    return c, labels


@dataclass
class ProbeResult:
    samples: np.ndarray  # (n, act_dim)
    projections: np.ndarray  # (n,)
    axis: np.ndarray
    variance: float
    centres: np.ndarray
    masses: tuple[float, float]
    hist_counts: np.ndarray
    hist_edges: np.ndarray

    @property
    def min_mass(self) -> float:
        return min(self.masses)

    @property
    def bimodal(self) -> bool:
        return self.variance > 0.0 and self.min_mass >= BIMODAL_THRESHOLD


def analyse_samples(samples: np.ndarray, bins: int = 50) -> ProbeResult:
    x = np.asarray(samples, dtype=np.float64)
    centred = x - x.mean(0)
    cov = centred.T @ centred / max(len(x) - 1, 1)
    if not np.any(cov):
        proj = np.zeros(len(x))
        counts, edges = np.histogram(proj, bins=bins)
        return ProbeResult(x, proj, np.eye(x.shape[1])[0], 0.0, np.zeros(2), (1.0, 0.0), counts, edges)
    axis, var = power_iteration(cov)
    proj = centred @ axis
    centres, labels = two_means_1d(proj)
    m1 = float(labels.mean())
    counts, edges = np.histogram(proj, bins=bins)
    return ProbeResult(x, proj, axis, var, centres, (1.0 - m1, m1), counts, edges)


def sample_first_actions(ck: Checkpoint, n: int = 1000, seed: int = 0, start=(0.5, 0.22)) -> np.ndarray:
    """First executed action of ``n`` fresh inferences at one fixed start state.

    The default start lies just past the point where the bimodal expert
    commits to a side, so the two modes show up in the first action.
    """
    cfg = ck.config
    env = make_env(cfg.env_id, **cfg.env_kwargs())
    obs0 = env.reset(0, start=start) if cfg.env_id == "bimodal_reach" else env.reset(0)
    window = ck.norm.norm_obs(ObsWindow(cfg.model.obs_horizon, obs0).array())
    obs = np.repeat(window[None], n, axis=0)
    rngs = episode_rngs(seed, n)
    model = ck.model("ema")
    if cfg.method == "rnrdp":
        buf = ladder_init(model, obs, ck.sched, rngs)
        actions, _ = relay_step(buf, model, obs, ck.sched, rngs, ck.norm)
        return actions
    return dp_infer(model, obs, cfg.dp_infer(), ck.sched, rngs, ck.norm)[:, 0]


def mode_probe(ck: Checkpoint, n_samples: int = 1000, seed: int = 0) -> ProbeResult:
    return analyse_samples(sample_first_actions(ck, n_samples, seed))


def write_probe_csv(res: ProbeResult, path) -> tuple[Path, Path]:
    """Projections (one per row) plus a ``*_hist.csv`` sidecar with the histogram."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "projection"])
        for i, p in enumerate(res.projections):
            w.writerow([i, repr(float(p))])
    hist = path.with_name(path.stem + "_hist.csv")
    with hist.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(res.hist_edges[:-1], res.hist_edges[1:], res.hist_counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    return path, hist
