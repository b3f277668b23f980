"""End-to-end acceptance suite: one test per criterion, each recording a pass/fail line.

Trained checkpoints are cached (keyed by the training config hash) under
``runs/acceptance`` or ``$RNRDP_ACCEPTANCE_CACHE``; a cold run trains every
model once.
"""

from __future__ import annotations

import math
import os
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from rnrdp import numkit as nk
from rnrdp.denoiser import Denoiser, DenoiserConfig
from rnrdp.envbench import DemoFormatError, gen_demos, load_demos, save_demos
from rnrdp.harness import (
    Checkpoint,
    CheckpointFormatError,
    RunConfig,
    evaluate,
    load_checkpoint,
    load_config,
    mode_probe,
    save_checkpoint,
)
from rnrdp.harness.runner import checkpoint_for, method_config
from rnrdp.relay import ladder_init, relay_step
from rnrdp.schedule import build_schedule, ddim_step, linear_levels, perturb, reverse_step, sample_level_batch
from rnrdp.trainer import TrainConfig, train_run

ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("RNRDP_ACCEPTANCE_CACHE", ROOT / "runs" / "acceptance"))
REFERENCE = ROOT / "configs" / "reference.ini"


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def base(env_id: str = "bimodal_reach") -> RunConfig:
    cfg = load_config(REFERENCE)
    if env_id != cfg.env_id:
        cfg = cfg.with_(env_id=env_id, model={"state_dim": 8 if env_id == "bimodal_reach" else 10})
    return cfg


@lru_cache(maxsize=None)
def checkpoint(cfg: RunConfig) -> Checkpoint:
    return checkpoint_for(cfg, CACHE, log=print)


@lru_cache(maxsize=None)
def success(cfg: RunConfig) -> tuple[float, float]:
    rep = evaluate(checkpoint(cfg), cfg)
    print(f"  {cfg.env_id} {cfg.method} T_a={cfg.dp.T_a} S={cfg.dp.S} init={cfg.eval.init} "
          f"mode={cfg.train.schedule_mode} predict={cfg.model.predict}: success {rep.success_rate:.3f} "
          f"switches {rep.mode_switches:.2f} nfes/a {rep.nfes_per_action:.3f} ({rep.seconds:.0f}s)")
    return rep.success_rate, rep.mode_switches


def rnr(env_id: str = "bimodal_reach", **sections) -> RunConfig:
    return method_config(base(env_id), "rnrdp").with_(**sections)


def dp(env_id: str = "bimodal_reach", sampler: str = "ddpm", **dp_fields) -> RunConfig:
    return method_config(base(env_id), f"dp_{sampler}", **dp_fields)


# 1 -------------------------------------------------------------------------


def test_criterion_01_scheduler_exactness():
    problems = []
    for kind in ("linear_beta", "cosine_beta"):
        for f in (2, 8, 16, 32):
            ab = build_schedule(f, kind).alpha_bar
            if not (ab[0] == 1.0 and np.all(np.diff(ab) < 0) and ab[-1] > 0):
                problems.append(f"alpha_bar not monotone for {kind} f={f}")
    rng = np.random.default_rng(0)
    s = build_schedule(16, "linear_beta", 0.1, 0.6)
    A, eps = rng.normal(size=(16, 2)), rng.normal(size=(16, 2))
    k = rng.integers(1, 17, size=16)
    x = perturb(A, k, eps, s)
    ab = s.alpha_bar[k][:, None]
    inv_err = np.max(np.abs((x - np.sqrt(1 - ab) * eps) / np.sqrt(ab) - A))
    if inv_err >= 1e-10:
        problems.append(f"perturb inversion error {inv_err:.2e}")
    # f = 2 hand formulas: beta = (0.1, 0.2), alpha_bar = (0.9, 0.72)
    s2 = build_schedule(2, "linear_beta", 0.1, 0.2)
    a, e, z = 0.7, -0.3, 1.5
    sig = math.sqrt(0.2 * 0.1 / 0.28)
    rev = (a - 0.2 / math.sqrt(0.28) * e) / math.sqrt(0.8) + sig * z
    rev1 = (a - 0.1 / math.sqrt(0.1) * e) / math.sqrt(0.9)
    x0 = (a - math.sqrt(0.28) * e) / math.sqrt(0.72)
    checks = [
        (reverse_step(np.array([a]), np.array([e]), 2, np.array([z]), s2)[0], rev),
        (reverse_step(np.array([a]), np.array([e]), 1, np.array([z]), s2)[0], rev1),
        (ddim_step(np.array([a]), np.array([e]), 2, 0, s2)[0], x0),
        (ddim_step(np.array([a]), np.array([e]), 2, 1, s2)[0], math.sqrt(0.9) * x0 + math.sqrt(0.1) * e),
    ]
    hand_err = max(abs(got - want) for got, want in checks)
    if hand_err >= 1e-12:
        problems.append(f"hand-formula error {hand_err:.2e}")
    record(1, not problems, "; ".join(problems) or f"inversion {inv_err:.1e}, hand formulas {hand_err:.1e}")


# 2 -------------------------------------------------------------------------


def test_criterion_02_autodiff_full_denoiser():
    rng = np.random.default_rng(1)
    cfg = DenoiserConfig()
    model = Denoiser(cfg, seed=2)
    x = rng.normal(size=(2, cfg.f, cfg.act_dim))
    lv = rng.integers(0, cfg.f + 1, size=(2, cfg.f))
    obs = rng.normal(size=(2, cfg.obs_horizon, cfg.state_dim))
    target = rng.normal(size=x.shape)
    err = nk.grad_check(lambda p: nk.mse_loss(model(x, lv, obs, params=p), target), model.params, eps=1e-5,
                        max_entries=4, rng=rng)
    record(2, err < 1e-4, f"max relative error {err:.2e} (< 1e-4)")


# 3 -------------------------------------------------------------------------


def test_criterion_03_relay_invariants():
    problems, ratios = [], []
    T = 100
    for f in (2, 8, 32):
        cfg = DenoiserConfig(f=f, emb_dim=8, feat_dim=8, hidden=8, depth=1)
        model, sched = Denoiser(cfg, seed=0), build_schedule(f)
        rng = np.random.default_rng(f)
        obs = rng.normal(size=(1, 2, 8))
        buf = ladder_init(model, obs, sched, rng)
        init_nfe = buf.nfe_count
        for _ in range(T):
            if not np.array_equal(buf.levels, linear_levels(f)):
                problems.append(f"f={f}: levels {buf.levels.tolist()}")
            _, buf = relay_step(buf, model, obs + rng.normal(size=obs.shape), sched, rng)
        if not np.array_equal(buf.levels, linear_levels(f)):
            problems.append(f"f={f}: final levels {buf.levels.tolist()}")
        if buf.nfe_count != (f - 1) + T:
            problems.append(f"f={f}: {buf.nfe_count} NFEs != {(f - 1) + T}")
        per_action = (buf.nfe_count - init_nfe) / buf.actions_executed
        ratios.append(per_action)
        if per_action > 1.02:
            problems.append(f"f={f}: NFEs/a {per_action:.3f}")
    record(3, not problems, "; ".join(problems) or
           f"ladder kept for f in (2, 8, 32); NFEs = (f-1)+T; NFEs/a over {T} actions = {max(ratios):.2f}")


# 4 -------------------------------------------------------------------------


def test_criterion_04_mixture_statistics():
    f, n = 16, 10_000
    batch = sample_level_batch("mixture", f, n, np.random.default_rng(4), p_linear=0.4)
    lin = np.all(batch == linear_levels(f), axis=1)
    frac = float(lin.mean())
    in_range = bool(np.all((batch >= 1) & (batch <= f)))
    # replay the generator: each row is either the whole ladder or one whole i.i.d. draw
    replay, pure = np.random.default_rng(4), True
    for row in batch:
        want = linear_levels(f) if replay.random() < 0.4 else replay.integers(1, f + 1, size=f)
        pure &= bool(np.array_equal(row, want))
    ok = abs(frac - 0.4) <= 0.015 and in_range and pure
    record(4, ok, f"linear fraction {frac:.4f} (0.4 +/- 0.015), levels within 1..{f}: {in_range}, "
           f"rows pure ladder or pure random: {pure}")


# 5 -------------------------------------------------------------------------


def test_criterion_05_mode_bouncing():
    dp1, sw1 = success(dp(T_a=1))
    dp8, _ = success(dp(T_a=8))
    ours, sw_ours = success(rnr())
    checks = [dp1 <= dp8 - 0.10, ours >= dp8 - 0.05, sw1 >= 2 * sw_ours]
    record(5, all(checks), f"DP(1) {dp1:.3f} <= DP(8) {dp8:.3f} - 0.10: {checks[0]}; RNR-DP {ours:.3f} >= "
           f"DP(8) - 0.05: {checks[1]}; switches DP(1) {sw1:.2f} >= 2 x RNR-DP {sw_ours:.2f}: {checks[2]}")


# 6 -------------------------------------------------------------------------


def test_criterion_06_responsiveness():
    ours, _ = success(rnr("drift_push"))
    dp8, _ = success(dp("drift_push", T_a=8))
    record(6, ours >= dp8 + 0.10, f"DriftPush RNR-DP {ours:.3f} >= DP(8) {dp8:.3f} + 0.10")


# 7 -------------------------------------------------------------------------


def test_criterion_07_efficiency_vs_ddim():
    ours, _ = success(rnr())
    d8, _ = success(dp(sampler="ddim", T_a=8, S=8))
    d1, _ = success(dp(sampler="ddim", T_a=8, S=1))
    checks = [ours >= d8 - 0.02, ours >= d1 + 0.20]
    record(7, all(checks), f"RNR-DP {ours:.3f} >= DDIM-8 {d8:.3f} - 0.02: {checks[0]}; "
           f">= DDIM-1 {d1:.3f} + 0.20: {checks[1]}")


# 8 -------------------------------------------------------------------------


def harder_task() -> str:
    """The toy task on which the reference RNR-DP policy scores lower."""
    return min(("bimodal_reach", "drift_push"), key=lambda env_id: success(rnr(env_id))[0])


def test_criterion_08_ablations():
    task = harder_task()
    mix, _ = success(rnr(task))
    lin, _ = success(rnr(task, train={"schedule_mode": "linear"}))
    rnd, _ = success(rnr(task, train={"schedule_mode": "random"}))
    pure, _ = success(rnr(task, eval={"init": "pure_noise"}))
    act, _ = success(rnr(task, model={"predict": "action"}))
    checks = [mix >= max(lin, rnd) + 0.05, mix >= pure + 0.03, mix >= act + 0.05]
    record(8, all(checks), f"{task}: mixture {mix:.3f} vs linear {lin:.3f} / random {rnd:.3f}: {checks[0]}; "
           f"ladder vs pure noise {pure:.3f}: {checks[1]}; noise vs action prediction {act:.3f}: {checks[2]}")


# 9 -------------------------------------------------------------------------


def test_criterion_09_multimodality():
    res = mode_probe(checkpoint(rnr()), n_samples=1000, seed=0)
    record(9, res.min_mass >= 0.2, f"cluster masses {res.masses[0]:.3f} / {res.masses[1]:.3f} (each >= 0.2)")


# 10 ------------------------------------------------------------------------


def test_criterion_10_determinism_and_persistence(tmp_path):
    problems = []
    ds = gen_demos("bimodal_reach", 6, seed=3)
    mc = DenoiserConfig(f=4, emb_dim=8, feat_dim=8, hidden=16, depth=1)
    tc = TrainConfig(steps=40, warmup=5, batch=8, lr=1e-3, seed=9)
    sched = build_schedule(4)
    a, b = train_run(ds, mc, tc, sched), train_run(ds, mc, tc, sched)
    if [l for *_, l in a.losses] != [l for *_, l in b.losses]:
        problems.append("loss curves differ")

    cfg = RunConfig(model=mc.__class__(**{**mc.to_dict(), "state_dim": 8}), train=tc)
    ck = Checkpoint.from_params(cfg, sched, ds.norm_stats, a.raw, a.ema)
    path = save_checkpoint(ck, tmp_path / "a.rnrckpt")
    back = load_checkpoint(path)
    err = max(float(np.max(np.abs(back.ema[k] - v) / np.maximum(1.0, np.abs(v)))) for k, v in ck.ema.items())
    if err >= 1e-5 or back.config != cfg:
        problems.append(f"checkpoint round trip error {err:.1e}")
    dpath = save_demos(ds, tmp_path / "a.demo")
    if not load_demos(dpath).equals(ds):
        problems.append("demo round trip differs")

    rejected = 0
    for p, loader, err_t in ((path, load_checkpoint, CheckpointFormatError), (dpath, load_demos, DemoFormatError)):
        raw = p.read_bytes()
        for blob in (b"\xff" + raw[1:], raw[: len(raw) // 2], raw + b"\x00"):
            bad = tmp_path / "bad"
            bad.write_bytes(blob)
            try:
                loader(bad)
            except err_t:
                rejected += 1
    if rejected != 6:
        problems.append(f"only {rejected}/6 corrupted files rejected")
    record(10, not problems, "; ".join(problems) or
           f"bitwise loss curves, checkpoint error {err:.1e}, demo round trip exact, 6/6 corruptions rejected")
