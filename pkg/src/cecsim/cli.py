"""Command-line entry points: gen, train, eval, sweep, summarize."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .agent import AgentConfig, AgentScheduler, DdpgAgent, load_agent, save_agent, train
from .baselines import make_scheduler
from .experiments import (
    ConfigError,
    build_scenario,
    run_experiment,
    summarize,
    validate_config,
    _train_learner,
)
from .serialize import save_topology, save_workload
from .sim import CecEnv, run_episode
from .twin import TwinModels


def _load_config(args) -> "ExperimentConfig":
    cfg = validate_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, gen=replace(cfg.gen, seed=args.seed), seeds=(args.seed,))
    return cfg


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    topo, workload, _ = build_scenario(cfg, cfg.sweep_values[0], seed)
    save_topology(out / "topology.json", topo)
    save_workload(out / "workload.json", workload)
    print(f"wrote {out / 'topology.json'} and {out / 'workload.json'}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.scheduler not in ("dtdrlmo", "drl_no_dt"):
        print(f"train supports dtdrlmo or drl_no_dt, not {args.scheduler!r}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    agent, twin, report = _train_learner(cfg, twin_enabled=args.scheduler == "dtdrlmo")
    save_agent(out / "checkpoint.json", agent, twin)
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "episode",
                "steps",
                "mean_reward",
                "critic_loss",
                "actor_grad_norm",
                "twin_transition_loss",
                "twin_reward_loss",
                "eval_act_s",
            ]
        )
        for r in report.rows:
            writer.writerow(
                [
                    r.episode,
                    r.steps,
                    repr(r.mean_reward),
                    repr(r.critic_loss),
                    repr(r.actor_grad_norm),
                    repr(r.twin_transition_loss),
                    repr(r.twin_reward_loss),
                    repr(r.eval_act_s),
                ]
            )
    print(f"wrote {out / 'checkpoint.json'} and {out / 'report.csv'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    topo, workload, env_cfg = build_scenario(cfg, cfg.sweep_values[0], seed)
    sink = None
    trace_fh = None
    if args.trace:
        trace_fh = open(args.trace, "w")
        sink = lambda rec: trace_fh.write(json.dumps(rec, sort_keys=True) + "\n")
    env = CecEnv(topo, workload, env_cfg, trace_sink=sink)
    if args.scheduler in ("le", "greedy"):
        scheduler = make_scheduler(args.scheduler)
    elif args.scheduler in ("dtdrlmo", "drl_no_dt"):
        if not args.checkpoint:
            print("learning schedulers need --checkpoint", file=sys.stderr)
            return 2
        agent_cfg = replace(cfg.agent, twin_enabled=args.scheduler == "dtdrlmo")
        agent, twin = load_agent(args.checkpoint, agent_cfg, cfg.twin)
        scheduler = AgentScheduler(agent, twin, rng_seed=seed)
    else:
        print(f"unknown scheduler {args.scheduler!r}", file=sys.stderr)
        return 2
    result = run_episode(env, scheduler)
    if trace_fh is not None:
        trace_fh.close()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheduler", "seed", "act_s", "runtime_s", "services"])
        writer.writerow(
            [args.scheduler, seed, repr(result.act_s), repr(env.clock.now_s), len(workload)]
        )
    print(f"{args.scheduler} seed={seed} act_s={result.act_s:.6f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    rows = run_experiment(cfg, args.out)
    print(f"wrote {Path(args.out) / 'results.csv'} ({len(rows)} rows)")
    return 0


def cmd_summarize(args) -> int:
    summary = summarize(args.results, args.out)
    print(f"wrote {Path(args.out) / 'summary.csv'} ({len(summary)} groups)")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cecsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="emit topology and workload JSON")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a learning scheduler")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scheduler", default="dtdrlmo")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate one scheduler on one seeded workload")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scheduler", default="greedy")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--trace", default=None, help="write a JSONL event trace here")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run the configured sweep experiment")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("summarize", help="aggregate a results.csv")
    p.add_argument("results")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_summarize)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
