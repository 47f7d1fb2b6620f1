"""Experiment orchestration: config parsing, sweeps, metrics CSVs, summaries.

A scenario pins one network topology (drawn from the base seed); each sweep
cell evaluates one scheduler on one seeded workload.  Learning schedulers are
trained once per experiment on their own workload stream and reused across
cells.  All outputs are deterministic for a fixed config in single-worker
mode; the `runtime_s` column is the simulated makespan, not wall-clock.
"""

from __future__ import annotations

import configparser
import csv
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .agent import AgentConfig, AgentScheduler, DdpgAgent, train
from .baselines import Greedy, LocalExecution, OracleLimits, brute_force_optimal
from .sim import CecEnv, EnvConfig, run_episode
from .twin import TwinConfig, TwinModels
from .workload import GenConfig, generate_topology, generate_workload, ingest_trace

VALID_SCHEDULERS = ("le", "greedy", "drl_no_dt", "dtdrlmo", "oracle")
VALID_SWEEP_AXES = ("service_count", "max_ms", "mean_link_bw_bps")

RESULT_COLUMNS = ("scenario", "scheduler", "sweep_value", "seed", "act_s", "runtime_s")


class ConfigError(ValueError):
    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "default"
    schedulers: tuple[str, ...] = ("le", "greedy")
    sweep_axis: str = "service_count"
    sweep_values: tuple[float, ...] = (10.0, 20.0)
    seeds: tuple[int, ...] = (0, 1, 2)
    service_count: int = 10
    max_ms: int = 8
    slots: int = 8
    horizon_s: float | None = None
    episodes: int = 300
    max_steps: int = 64
    train_seed: int = 90_000
    train_pool: int = 20
    trace_path: str | None = None
    trace_scaling: float = 1.0
    oracle_max_nodes: int = 4
    oracle_max_total_ms: int = 6
    gen: GenConfig = field(default_factory=GenConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    twin: TwinConfig = field(default_factory=TwinConfig)


def _coerce(value: str, like) -> object:
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected boolean, got {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        if like and isinstance(like[0], int) and not isinstance(like[0], bool):
            return tuple(int(p) for p in parts)
        if like and isinstance(like[0], float):
            return tuple(float(p) for p in parts)
        return tuple(parts)
    return value


def _parse_section(section, defaults, errors: list[str], prefix: str) -> dict:
    out = {}
    known = {f.name: getattr(defaults, f.name) for f in fields(defaults)}
    for key, raw in section.items():
        if key not in known:
            errors.append(f"[{prefix}] unknown key {key!r}")
            continue
        try:
            out[key] = _coerce(raw, known[key])
        except ValueError as exc:
            errors.append(f"[{prefix}] {key}: {exc}")
    return out


def validate_config(path: str | Path | None) -> ExperimentConfig:
    """Parse an INI-style config; absent fields keep the base-setting defaults.

    Collects every violation before raising so a bad file is reported once.
    """
    parser = configparser.ConfigParser()
    if path is not None:
        text = Path(path).read_text()
        parser.read_string(text)
    errors: list[str] = []
    exp_kwargs = {}
    gen_kwargs = {}
    agent_kwargs = {}
    twin_kwargs = {}
    if parser.has_section("experiment"):
        exp_kwargs = _parse_section(parser["experiment"], ExperimentConfig(), errors, "experiment")
    if parser.has_section("gen"):
        gen_kwargs = _parse_section(parser["gen"], GenConfig(), errors, "gen")
    if parser.has_section("agent"):
        agent_kwargs = _parse_section(parser["agent"], AgentConfig(), errors, "agent")
    if parser.has_section("twin"):
        twin_kwargs = _parse_section(parser["twin"], TwinConfig(), errors, "twin")
    for section in parser.sections():
        if section not in ("experiment", "gen", "agent", "twin"):
            errors.append(f"unknown section [{section}]")

    gen = None
    try:
        gen = GenConfig(**gen_kwargs)
    except ValueError as exc:
        errors.append(f"[gen] {exc}")
    agent_cfg = None
    try:
        agent_cfg = AgentConfig(**agent_kwargs)
    except ValueError as exc:
        errors.append(f"[agent] {exc}")
    twin_cfg = None
    try:
        twin_cfg = TwinConfig(**twin_kwargs)
    except (ValueError, TypeError) as exc:
        errors.append(f"[twin] {exc}")

    for name in exp_kwargs.get("schedulers", ()):  # validate before constructing
        if name not in VALID_SCHEDULERS:
            errors.append(
                f"[experiment] unknown scheduler {name!r}; valid: {', '.join(VALID_SCHEDULERS)}"
            )
    axis = exp_kwargs.get("sweep_axis", ExperimentConfig().sweep_axis)
    if axis not in VALID_SWEEP_AXES:
        errors.append(f"[experiment] unknown sweep_axis {axis!r}; valid: {', '.join(VALID_SWEEP_AXES)}")
    if any(v <= 0 for v in exp_kwargs.get("sweep_values", (1.0,))):
        errors.append("[experiment] sweep_values must be positive")
    if not exp_kwargs.get("seeds", (0,)):
        errors.append("[experiment] seeds must be non-empty")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        **exp_kwargs, gen=gen, agent=agent_cfg, twin=twin_cfg
    )


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    scheduler: str
    sweep_value: float
    seed: int
    act_s: float
    runtime_s: float


def _cell_gen(cfg: ExperimentConfig, sweep_value: float, seed: int) -> tuple[GenConfig, int, int]:
    """Per-cell generator config plus (service_count, max_ms) for the axis."""
    gen = replace(cfg.gen, seed=seed)
    service_count = cfg.service_count
    max_ms = cfg.max_ms
    if cfg.sweep_axis == "service_count":
        service_count = int(sweep_value)
    elif cfg.sweep_axis == "max_ms":
        max_ms = int(sweep_value)
    else:  # mean_link_bw_bps
        gen = replace(gen, mean_link_bw_bps=float(sweep_value))
    return gen, service_count, max_ms


def build_scenario(cfg: ExperimentConfig, sweep_value: float, seed: int):
    """Topology (fixed structure from the base seed) plus the cell workload."""
    gen_cell, service_count, max_ms = _cell_gen(cfg, sweep_value, seed)
    topo_gen = replace(gen_cell, seed=cfg.gen.seed)  # one network per scenario
    topo = generate_topology(topo_gen)
    if cfg.trace_path:
        workload = ingest_trace(cfg.trace_path, cfg.trace_scaling, gen_cell, topo)
        workload = workload[:service_count]
    else:
        workload = generate_workload(gen_cell, service_count, max_ms, cfg.horizon_s, topo)
    env_cfg = EnvConfig.from_gen(gen_cell, cfg.slots)
    return topo, workload, env_cfg


def _train_learner(cfg: ExperimentConfig, twin_enabled: bool):
    """Train one agent on the scenario's own workload stream."""
    agent_cfg = replace(cfg.agent, twin_enabled=twin_enabled)
    base_gen = cfg.gen
    topo = generate_topology(base_gen)
    env_cfg = EnvConfig.from_gen(base_gen, cfg.slots)

    pool = []
    for i in range(cfg.train_pool):
        gen_i = replace(base_gen, seed=cfg.train_seed + i)
        pool.append(generate_workload(gen_i, cfg.service_count, cfg.max_ms, cfg.horizon_s, topo))

    def env_factory(ep: int) -> CecEnv:
        return CecEnv(topo, pool[ep % len(pool)], env_cfg)

    state_dim = cfg.slots * 5 + len(topo.links) + len(topo.nodes)
    agent = DdpgAgent(state_dim, cfg.slots, topo.node_ids(), agent_cfg)
    twin = None
    if twin_enabled:
        twin = TwinModels(
            state_dim, agent.action_dim, cfg.slots, cfg.twin, np.random.default_rng([agent_cfg.seed, 4])
        )
    report = train(agent, env_factory, twin, cfg.episodes, cfg.max_steps)
    return agent, twin, report


def _evaluate_cell(cfg: ExperimentConfig, scheduler_name: str, sweep_value: float, seed: int, learner=None) -> ResultRow:
    topo, workload, env_cfg = build_scenario(cfg, sweep_value, seed)
    if scheduler_name == "oracle":
        limits = OracleLimits(cfg.oracle_max_nodes, cfg.oracle_max_total_ms)
        result = brute_force_optimal(topo, workload, env_cfg, limits)
        from .baselines import FixedAssignment

        env = CecEnv(topo, workload, env_cfg)
        run_episode(env, FixedAssignment(result.assignment))
        return ResultRow(cfg.scenario, scheduler_name, sweep_value, seed, result.act_s, env.clock.now_s)
    if scheduler_name == "le":
        scheduler = LocalExecution()
    elif scheduler_name == "greedy":
        scheduler = Greedy()
    else:
        agent, twin = learner
        scheduler = AgentScheduler(agent, twin, rng_seed=seed)
    env = CecEnv(topo, workload, env_cfg)
    episode = run_episode(env, scheduler)
    if not episode.completed_all:
        raise RuntimeError(
            f"cell ({scheduler_name}, {sweep_value}, {seed}) did not complete its workload"
        )
    return ResultRow(cfg.scenario, scheduler_name, sweep_value, seed, episode.act_s, env.clock.now_s)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> list[ResultRow]:
    """Evaluate every (scheduler, sweep value, seed) cell and write results.csv.

    Learning schedulers are trained once up front; CEC_SIM_THREADS > 1 fans
    evaluation cells over processes (single-worker runs are byte-reproducible).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    learners = {}
    for name in cfg.schedulers:
        if name == "dtdrlmo":
            agent, twin, _ = _train_learner(cfg, twin_enabled=True)
            learners[name] = (agent, twin)
        elif name == "drl_no_dt":
            agent, twin, _ = _train_learner(cfg, twin_enabled=False)
            learners[name] = (agent, twin)

    cells = [
        (name, value, seed)
        for name in cfg.schedulers
        for value in cfg.sweep_values
        for seed in cfg.seeds
    ]
    workers = int(os.environ.get("CEC_SIM_THREADS", "1"))
    rows: list[ResultRow] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_evaluate_cell, cfg, name, value, seed, learners.get(name))
                for name, value, seed in cells
            ]
            rows = [f.result() for f in futures]
    else:
        for name, value, seed in cells:
            rows.append(_evaluate_cell(cfg, name, value, seed, learners.get(name)))
    rows.sort(key=lambda r: (r.scheduler, r.sweep_value, r.seed))
    write_results(out / "results.csv", rows)
    return rows


def _fmt(x: float) -> str:
    return repr(float(x))


def write_results(path: str | Path, rows: Sequence[ResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.scenario, r.scheduler, _fmt(r.sweep_value), r.seed, _fmt(r.act_s), _fmt(r.runtime_s)]
            )


def read_results(path: str | Path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"results file missing columns: {sorted(missing)}")
        for rec in reader:
            rows.append(
                ResultRow(
                    rec["scenario"],
                    rec["scheduler"],
                    float(rec["sweep_value"]),
                    int(rec["seed"]),
                    float(rec["act_s"]),
                    float(rec["runtime_s"]),
                )
            )
    return rows


@dataclass(frozen=True)
class SummaryRow:
    scheduler: str
    sweep_value: float
    n: int
    act_mean: float
    act_median: float
    act_std: float


def summarize(results_path: str | Path, out_dir: str | Path) -> list[SummaryRow]:
    """Aggregate ACT over seeds per (scheduler, sweep value); emit summary.csv
    plus one plot-ready series file per scheduler."""
    rows = read_results(results_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple[str, float], list[float]] = {}
    for r in rows:
        groups.setdefault((r.scheduler, r.sweep_value), []).append(r.act_s)
    summary = []
    for (scheduler, value), acts in sorted(groups.items()):
        summary.append(
            SummaryRow(
                scheduler,
                value,
                len(acts),
                sum(acts) / len(acts),
                statistics.median(acts),
                statistics.stdev(acts) if len(acts) > 1 else 0.0,
            )
        )
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheduler", "sweep_value", "n", "act_mean", "act_median", "act_std"])
        for s in summary:
            writer.writerow(
                [s.scheduler, _fmt(s.sweep_value), s.n, _fmt(s.act_mean), _fmt(s.act_median), _fmt(s.act_std)]
            )
    for scheduler in sorted({s.scheduler for s in summary}):
        with open(out / f"plot_{scheduler}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sweep_value", "act_mean", "act_median", "act_std"])
            for s in summary:
                if s.scheduler == scheduler:
                    writer.writerow([_fmt(s.sweep_value), _fmt(s.act_mean), _fmt(s.act_median), _fmt(s.act_std)])
    return summary
