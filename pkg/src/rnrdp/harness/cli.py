"""Command-line entry point: ``rnrdp <subcommand> [--config PATH] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..envbench.demos import gen_demos, save_demos
from .checkpoint import load_checkpoint, save_checkpoint
from .config import METHODS, RunConfig, load_config, stable_hash
from .evaluate import write_eval_csv, evaluate
from .probe import mode_probe, write_probe_csv
from .runner import SUITES, ablate, checkpoint_for, method_config, sweep_horizon, write_summary_csv

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"error: usage: {message}\n")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # sub-commands repeat the global flags without defaults so a value given
    # before the sub-command is not overwritten
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=d(None), help="flat [section] key = value config file")
    common.add_argument("--seed", type=int, default=d(None), help="overrides demo and training seeds")
    common.add_argument("--out", type=Path, default=d(Path("runs")), help="output directory")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(True)
    p = _Parser(prog="rnrdp", description="Noise-relaying diffusion policy experiments",
                parents=[_global_flags(False)])
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-demos", parents=[common], help="generate scripted-expert demonstrations")
    g.add_argument("--env", choices=("bimodal_reach", "drift_push"))
    g.add_argument("--episodes", type=int)

    t = sub.add_parser("train", parents=[common], help="train (or reuse a cached) checkpoint")
    t.add_argument("--method", choices=METHODS)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--method", choices=METHODS)
    e.add_argument("--ta", type=int, help="DP execution horizon")
    e.add_argument("--episodes", type=int)

    a = sub.add_parser("ablate", parents=[common], help="run an ablation suite")
    a.add_argument("--suite", choices=SUITES, required=True)
    a.add_argument("--grid", type=str, default="8,12,16,24", help="capacity grid, comma separated")

    pr = sub.add_parser("probe-modes", parents=[common], help="PCA probe of first executed actions")
    pr.add_argument("--checkpoint", type=Path, required=True)
    pr.add_argument("--samples", type=int, default=1000)

    sub.add_parser("sweep-horizon", parents=[common], help="vanilla DP success for T_a in 1, 2, 4, 8")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ValueError("--seed must be non-negative")
        cfg = cfg.with_(demos={"seed": args.seed}, train={"seed": args.seed})
    return cfg


def _run(args) -> int:
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    cache = out / "cache"
    log = lambda s: print(s, flush=True)
    cfg = _config(args)

    if args.cmd == "gen-demos":
        if args.env:
            cfg = cfg.with_(env_id=args.env, model={"state_dim": 8 if args.env == "bimodal_reach" else 10})
        if args.episodes:
            cfg = cfg.with_(demos={"episodes": args.episodes})
        ds = gen_demos(cfg.env_id, cfg.demos.episodes, cfg.demos.seed, cfg.env_kwargs())
        key = stable_hash({"env_id": cfg.env_id, "demos": cfg.to_dict()["demos"], "env": cfg.to_dict()["env"]})
        path = save_demos(ds, out / f"demos_{cfg.env_id}_{key}.bin")
        print(f"wrote {path} episodes={len(ds.episodes)} steps={ds.num_steps()}")
        return 0

    if args.cmd == "train":
        if args.method:
            cfg = method_config(cfg, args.method)
        ck = checkpoint_for(cfg, cache, log)
        path = save_checkpoint(ck, out / f"ckpt_{cfg.training_hash()}.rnrckpt")
        print(f"wrote {path}")
        return 0

    if args.cmd == "eval":
        ck = load_checkpoint(args.checkpoint)
        ecfg = ck.config
        if args.config:
            ecfg = ecfg.with_(eval=cfg.eval, dp=cfg.dp, env=cfg.env)
        if args.method:
            ecfg = ecfg.with_(method=args.method)
        if args.ta:
            ecfg = ecfg.with_(dp={"T_a": args.ta})
        if args.episodes:
            ecfg = ecfg.with_(eval={"episodes": args.episodes})
        rep = evaluate(ck, ecfg)
        path = write_eval_csv([rep], out / f"eval_{ecfg.hash()}.csv")
        print(f"success_rate={rep.success_rate:.4f} nfes_per_action={rep.nfes_per_action:.4f} "
              f"mode_switches={rep.mode_switches:.3f} -> {path}")
        return 0

    if args.cmd == "ablate":
        grid = [int(x) for x in args.grid.split(",") if x.strip()]
        rows = ablate(args.suite, cfg, cache, grid, log)
        path = write_summary_csv(rows, out / f"ablate_{args.suite}_{cfg.hash()}.csv")
        print(f"wrote {path}")
        return 0

    if args.cmd == "probe-modes":
        ck = load_checkpoint(args.checkpoint)
        res = mode_probe(ck, args.samples, args.seed or 0)
        p, h = write_probe_csv(res, out / f"probe_{ck.config.hash()}.csv")
        print(f"masses={res.masses[0]:.3f},{res.masses[1]:.3f} bimodal={res.bimodal} -> {p}, {h}")
        return 0

    if args.cmd == "sweep-horizon":
        rows = sweep_horizon(cfg, cache, log=log)
        path = write_summary_csv(rows, out / f"sweep_horizon_{cfg.hash()}.csv")
        print(f"wrote {path}")
        return 0
    raise AssertionError(args.cmd)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except Exception as e:  # one machine-parsable line, nonzero exit
        print(f"error: {type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
