"""Command line entry point: ``taac <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from ..agents import VARIANTS
from ..envs import REGISTRY, make_env
from ..tabular import verify_report
from .config import ConfigError, ExperimentConfig, load_config, parse_assignment
from .metrics import write_coverage_csv
from .runner import build, calibrate, evaluate, load_run_checkpoint, rollout_states, run_experiment


def _train(args):
    overrides = dict(parse_assignment(s) for s in args.set or [])
    overrides.update({"seed": args.seed, "algo": args.algo, "env": args.env, "total_frames": args.frames})
    cfg = load_config(args.config, overrides)
    out = args.out or os.path.join("runs", f"{cfg.algo}-{cfg.env}-seed{cfg.seed}")
    if args.dry_run:
        print(cfg.to_json())
        run_experiment(cfg, out, dry_run=True)
        return 0
    res = run_experiment(cfg, out, log=None if args.quiet else print)
    print(res.report, end="")
    return 0 if res.ok else 1


def _eval(args):
    cfg, agent, _, _ = load_run_checkpoint(args.checkpoint)
    env = make_env(cfg.env)
    ev = evaluate(agent, env, args.episodes, np.random.default_rng(args.seed))
    print(f"{cfg.algo} on {cfg.env}: {len(ev.returns)} episodes  mean {ev.mean:.4f}  std {ev.std:.4f}  "
          f"repetition {100 * ev.repetition:.2f}%")
    return 0


def _verify(args):
    text, ok = verify_report(S=args.states, A=args.actions, gamma=args.gamma, depth=args.depth,
                             iters=args.iters, seed=args.seed)
    print(text)
    return 0 if ok else 1


def _coverage(args):
    if args.checkpoint:
        cfg, agent, _, _ = load_run_checkpoint(args.checkpoint)
    else:
        cfg = ExperimentConfig(algo=args.algo, env=args.env, seed=args.seed,
                               hidden=[int(h) for h in args.hidden.split(",")])
        _, agent = build(cfg, np.random.default_rng(cfg.seed))
    env = make_env(cfg.env)
    states, _ = rollout_states(agent, env, args.frames, np.random.default_rng(args.seed), mode="sample")
    out = args.out or "coverage.csv"
    summary = write_coverage_csv(out, states, env.spec.state_low, env.spec.state_high)
    print(f"wrote {out}: std {np.array2string(summary['std'], precision=5)}  "
          f"occupancy {100 * summary['occupancy']:.1f}%")
    return 0


def _calibrate(args):
    overrides = dict(parse_assignment(s) for s in args.set or [])
    overrides["env"] = args.env
    if args.frames:
        overrides["total_frames"] = args.frames
    base = load_config(args.config, overrides)
    algos = args.algos.split(",") if args.algos else list(VARIANTS)
    res = calibrate(args.env, base, algos, args.out_dir, log=None if args.quiet else print)
    print(json.dumps(res, indent=2, sort_keys=True))
    if args.reference:
        ref = {}
        if os.path.exists(args.reference):
            with open(args.reference) as fh:
                ref = json.load(fh)
        ref[args.env] = {"z0": res["z0"], "z1": res["z1"]}
        with open(args.reference, "w") as fh:
            json.dump(ref, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="taac", description="Act-or-repeat actor-critic laboratory.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one agent and write metrics, summary and checkpoint")
    t.add_argument("--config", help="JSON config file (defaults apply to missing keys)")
    t.add_argument("--seed", type=int)
    t.add_argument("--algo", choices=VARIANTS + ("tabular-verify",))
    t.add_argument("--env", choices=sorted(REGISTRY))
    t.add_argument("--frames", type=int, help="total environment frames")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    t.add_argument("--out", help="output directory")
    t.add_argument("--dry-run", action="store_true", help="print the resolved config and stop")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint in mode-taking evaluation")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=_eval)

    v = sub.add_parser("verify-operator", help="exact tabular fixed-point and contraction check")
    v.add_argument("--states", type=int, default=5)
    v.add_argument("--actions", type=int, default=3)
    v.add_argument("--gamma", type=float, default=0.9)
    v.add_argument("--depth", type=int, default=3)
    v.add_argument("--iters", type=int, default=60)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=_verify)

    c = sub.add_parser("coverage", help="log visited states of sampled rollouts to CSV")
    c.add_argument("--checkpoint", help="trained agent; omit to use freshly initialized parameters")
    c.add_argument("--algo", default="TAAC", choices=VARIANTS)
    c.add_argument("--env", default="mcar", choices=sorted(REGISTRY))
    c.add_argument("--hidden", default="256,256")
    c.add_argument("--frames", type=int, default=50_000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=_coverage)

    k = sub.add_parser("calibrate", help="run all methods and record random / best reference scores")
    k.add_argument("--env", required=True, choices=sorted(REGISTRY))
    k.add_argument("--config")
    k.add_argument("--algos", help="comma separated subset of algorithms")
    k.add_argument("--frames", type=int)
    k.add_argument("--set", action="append", metavar="KEY=VALUE")
    k.add_argument("--out-dir", default=os.path.join("runs", "calibrate"))
    k.add_argument("--reference", help="reference-score JSON file to update")
    k.add_argument("--quiet", action="store_true")
    k.set_defaults(func=_calibrate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
