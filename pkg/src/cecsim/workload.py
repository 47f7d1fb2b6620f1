"""Seeded generators for topologies and DAG workloads, plus cluster-trace ingestion."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import EdgeNode, Link, Microservice, ServiceDag, Topology

# Independent RNG streams per concern so that, e.g., changing the link
# bandwidth mean cannot perturb node speeds or the workload draws.
_TOPOLOGY_STREAM = 0
_WORKLOAD_STREAM = 1
_TRACE_STREAM = 2

# Gaussian draws are clamped at this fraction of their mean; the configured
# relative stds would otherwise produce negative speeds/sizes.
TRUNCATION_FLOOR_FRACTION = 0.01


@dataclass(frozen=True)
class GenConfig:
    """Knobs for the stochastic topology and DAG generators.

    Defaults are the base evaluation setting: 8 edge nodes at 40 Mcps (80%
    rel. std), end devices at 10 Mcps (20%), 10 Mbps links (80%), 500 Mbit
    data packets (80%), 500 kcycle loads (60%), Poisson arrivals.
    """

    seed: int = 0
    node_count: int = 8
    device_count: int = 0
    mean_node_speed_cps: float = 40e6
    node_speed_rel_std: float = 0.8
    mean_device_speed_cps: float = 10e6
    device_speed_rel_std: float = 0.2
    mean_link_bw_bps: float = 10e6
    link_bw_rel_std: float = 0.8
    extra_link_prob: float = 0.3
    dag_size_range: tuple[int, int] = (1, 50)
    mean_data_bits: float = 500e6
    data_rel_std: float = 0.8
    mean_load_cycles: float = 500e3
    load_rel_std: float = 0.6
    arrival_rate_per_s: float = 1.0
    edge_prob: float = 0.5
    resource_demand_factor: float = 1e-3
    node_resource_capacity: float = 2000.0

    def __post_init__(self):
        for name in (
            "mean_node_speed_cps",
            "mean_device_speed_cps",
            "mean_link_bw_bps",
            "mean_data_bits",
            "mean_load_cycles",
            "arrival_rate_per_s",
            "node_resource_capacity",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in (
            "node_speed_rel_std",
            "device_speed_rel_std",
            "link_bw_rel_std",
            "data_rel_std",
            "load_rel_std",
            "extra_link_prob",
            "edge_prob",
            "resource_demand_factor",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        lo, hi = self.dag_size_range
        if not (1 <= lo <= hi):
            raise ValueError("dag_size_range must satisfy 1 <= lo <= hi")
        if self.node_count < 2:
            raise ValueError("node_count must be >= 2")
        if self.device_count < 0:
            raise ValueError("device_count must be >= 0")


def _clamped_gaussian(rng: np.random.Generator, mean: float, rel_std: float, size: int) -> np.ndarray:
    draws = rng.normal(mean, mean * rel_std, size)
    return np.maximum(draws, TRUNCATION_FLOOR_FRACTION * mean)


def generate_topology(cfg: GenConfig) -> Topology:
    """Random spanning tree over the edge nodes plus extra links, plus one
    access link per end device.  Deterministic for a fixed seed."""
    rng = np.random.default_rng([cfg.seed, _TOPOLOGY_STREAM])
    width = max(2, len(str(cfg.node_count + cfg.device_count)))
    edge_ids = [f"n{i:0{width}d}" for i in range(cfg.node_count)]
    device_ids = [f"d{i:0{width}d}" for i in range(cfg.device_count)]

    # Structure first, then speeds, then bandwidths: keeps each block of draws
    # independent of the parameter values of the later blocks.
    pairs: list[tuple[str, str]] = []
    for i in range(1, cfg.node_count):
        parent = int(rng.integers(0, i))
        pairs.append((edge_ids[parent], edge_ids[i]))
    tree = set(pairs)
    for i in range(cfg.node_count):
        for j in range(i + 1, cfg.node_count):
            cand = (edge_ids[i], edge_ids[j])
            if cand in tree or (cand[1], cand[0]) in tree:
                continue
            if rng.random() < cfg.extra_link_prob:
                pairs.append(cand)
    for dev in device_ids:
        attach = int(rng.integers(0, cfg.node_count))
        pairs.append((edge_ids[attach], dev))

    node_speeds = _clamped_gaussian(rng, cfg.mean_node_speed_cps, cfg.node_speed_rel_std, cfg.node_count)
    device_speeds = _clamped_gaussian(
        rng, cfg.mean_device_speed_cps, cfg.device_speed_rel_std, max(cfg.device_count, 1)
    )
    bandwidths = _clamped_gaussian(rng, cfg.mean_link_bw_bps, cfg.link_bw_rel_std, len(pairs))

    nodes = [
        EdgeNode(nid, float(node_speeds[i]), cfg.node_resource_capacity, is_end_device=False)
        for i, nid in enumerate(edge_ids)
    ]
    nodes += [
        EdgeNode(did, float(device_speeds[i]), cfg.node_resource_capacity, is_end_device=True)
        for i, did in enumerate(device_ids)
    ]
    links = []
    for k, (a, b) in enumerate(pairs):
        lo, hi = min(a, b), max(a, b)
        links.append(Link(f"{lo}-{hi}", (lo, hi), float(bandwidths[k])))
    return Topology(nodes, links)


def _source_pool(topo: Topology) -> tuple[str, ...]:
    devices = tuple(n.node_id for n in topo.nodes if n.is_end_device)
    return devices if devices else topo.node_ids()


def _layered_dag(
    rng: np.random.Generator,
    cfg: GenConfig,
    service_id: str,
    max_ms: int,
    release_s: float,
    source: str,
) -> ServiceDag:
    lo = cfg.dag_size_range[0]
    hi = min(max_ms, cfg.dag_size_range[1])
    if lo > hi:
        lo = hi
    n = int(np.clip(round(rng.normal((lo + hi) / 2.0, max(hi - lo, 1) / 4.0)), lo, hi))
    n_layers = int(np.clip(round(rng.normal((1 + n) / 2.0, max(n - 1, 1) / 4.0)), 1, n))

    layers: list[list[int]] = [[i] for i in range(n_layers)]
    for i in range(n_layers, n):
        layers[int(rng.integers(0, n_layers))].append(i)

    width = max(2, len(str(n)))
    ms_ids = [f"m{i:0{width}d}" for i in range(n)]
    preds: dict[int, set[int]] = {i: set() for i in range(n)}
    for li in range(1, n_layers):
        prev = layers[li - 1]
        for v in layers[li]:
            chosen = [u for u in prev if rng.random() < cfg.edge_prob]
            if not chosen:
                chosen = [prev[int(rng.integers(0, len(prev)))]]
            preds[v].update(chosen)

    data = _clamped_gaussian(rng, cfg.mean_data_bits, cfg.data_rel_std, n)
    loads = _clamped_gaussian(rng, cfg.mean_load_cycles, cfg.load_rel_std, n)
    microservices = []
    for i in range(n):
        # Demand is capped at the node capacity so every microservice fits
        # somewhere on its own.
        demand = min(float(loads[i]) * cfg.resource_demand_factor, cfg.node_resource_capacity)
        microservices.append(
            Microservice(
                service_id=service_id,
                ms_id=ms_ids[i],
                data_size_bits=float(data[i]),
                compute_load_cycles=float(loads[i]),
                resource_demand=demand,
                predecessors=frozenset(ms_ids[p] for p in preds[i]),
            )
        )
    edges = frozenset((ms_ids[p], ms_ids[v]) for v in range(n) for p in preds[v])
    return ServiceDag(service_id, tuple(microservices), edges, release_s, source)


def generate_workload(
    cfg: GenConfig,
    service_count: int,
    max_ms: int,
    horizon_s: float | None,
    topo: Topology,
) -> tuple[ServiceDag, ...]:
    """Layered random DAGs with Poisson arrivals over [0, horizon).

    Arrival instants are the order statistics of uniforms on the horizon,
    i.e. a Poisson process conditioned on `service_count` arrivals; when no
    horizon is given it defaults to service_count / arrival_rate.
    """
    if service_count < 1:
        raise ValueError("service_count must be >= 1")
    if max_ms < 1:
        raise ValueError("max_ms must be >= 1")
    rng = np.random.default_rng([cfg.seed, _WORKLOAD_STREAM])
    if horizon_s is None:
        horizon_s = service_count / cfg.arrival_rate_per_s
    if horizon_s < 0:
        raise ValueError("horizon_s must be >= 0")
    releases = np.sort(rng.uniform(0.0, horizon_s, service_count))
    pool = _source_pool(topo)
    sources = [pool[int(rng.integers(0, len(pool)))] for _ in range(service_count)]

    width = max(3, len(str(service_count)))
    services = []
    for i in range(service_count):
        services.append(
            _layered_dag(rng, cfg, f"s{i:0{width}d}", max_ms, float(releases[i]), sources[i])
        )
    return tuple(services)


_TASK_NAME_RE = re.compile(r"^[A-Za-z]+(\d+)((?:_\d+)*)$")


@dataclass
class TraceRecord:
    job_id: str
    task_id: int
    dependencies: tuple[int, ...]
    start_time: float
    end_time: float
    plan_cpu: float


@dataclass
class TraceDiagnostics:
    rows_total: int = 0
    rows_skipped: int = 0
    jobs_skipped: int = 0
    reasons: list[str] = field(default_factory=list)


def parse_task_name(task_name: str) -> tuple[int, tuple[int, ...]]:
    """Split a dependency-encoded task name like ``M3_1_2`` into (3, (1, 2))."""
    m = _TASK_NAME_RE.match(task_name.strip())
    if not m:
        raise ValueError(f"unparseable task name {task_name!r}")
    task_id = int(m.group(1))
    deps = tuple(int(tok) for tok in m.group(2).split("_") if tok)
    return task_id, deps


def ingest_trace(
    path: str | Path,
    scaling: float,
    cfg: GenConfig,
    topo: Topology,
    diagnostics: TraceDiagnostics | None = None,
) -> tuple[ServiceDag, ...]:
    """Parse a cluster-trace CSV (job_id,task_name,start_time,end_time,plan_cpu)
    into service DAGs.

    Compute load is (end - start) * plan_cpu * scaling; data sizes and release
    times are drawn from the configured distributions because the trace lacks
    them.  Malformed rows are counted and skipped; a file yielding zero valid
    jobs is an error.
    """
    if scaling <= 0:
        raise ValueError("scaling must be > 0")
    diag = diagnostics if diagnostics is not None else TraceDiagnostics()
    path = Path(path)
    records: dict[str, list[TraceRecord]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"job_id", "task_name", "start_time", "end_time", "plan_cpu"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"trace {path} missing header columns {sorted(required)}")
        for line_no, row in enumerate(reader, start=2):
            diag.rows_total += 1
            try:
                task_id, deps = parse_task_name(row["task_name"])
                start = float(row["start_time"])
                end = float(row["end_time"])
                plan_cpu = float(row["plan_cpu"])
                if end < start:
                    raise ValueError("end_time before start_time")
                if plan_cpu < 0:
                    raise ValueError("negative plan_cpu")
            except (ValueError, KeyError) as exc:
                diag.rows_skipped += 1
                diag.reasons.append(f"row {line_no}: {exc}")
                continue
            records.setdefault(row["job_id"].strip(), []).append(
                TraceRecord(row["job_id"].strip(), task_id, deps, start, end, plan_cpu)
            )

    rng = np.random.default_rng([cfg.seed, _TRACE_STREAM])
    pool = _source_pool(topo)
    services: list[ServiceDag] = []
    release = 0.0
    for job_id in sorted(records):
        recs = sorted(records[job_id], key=lambda r: r.task_id)
        known = {r.task_id for r in recs}
        if len(known) != len(recs):
            diag.jobs_skipped += 1
            diag.reasons.append(f"job {job_id}: duplicate task ids")
            continue
        if any(not set(r.dependencies) <= known - {r.task_id} for r in recs):
            diag.jobs_skipped += 1
            diag.reasons.append(f"job {job_id}: dangling or self dependency")
            continue
        release += float(rng.exponential(1.0 / cfg.arrival_rate_per_s))
        source = pool[int(rng.integers(0, len(pool)))]
        data = _clamped_gaussian(rng, cfg.mean_data_bits, cfg.data_rel_std, len(recs))
        width = max(2, len(str(max(known))))
        try:
            microservices = tuple(
                Microservice(
                    service_id=job_id,
                    ms_id=f"m{r.task_id:0{width}d}",
                    data_size_bits=float(data[i]),
                    compute_load_cycles=(r.end_time - r.start_time) * r.plan_cpu * scaling,
                    resource_demand=min(
                        (r.end_time - r.start_time) * r.plan_cpu * scaling * cfg.resource_demand_factor,
                        cfg.node_resource_capacity,
                    ),
                    predecessors=frozenset(f"m{d:0{width}d}" for d in r.dependencies),
                )
                for i, r in enumerate(recs)
            )
            edges = frozenset(
                (f"m{d:0{width}d}", f"m{r.task_id:0{width}d}") for r in recs for d in r.dependencies
            )
            services.append(ServiceDag(job_id, microservices, edges, release, source))
        except ValueError as exc:
            diag.jobs_skipped += 1
            diag.reasons.append(f"job {job_id}: {exc}")
    if not services:
        raise ValueError(
            f"trace {path} produced no valid jobs "
            f"({diag.rows_total} rows, {diag.rows_skipped} skipped: {diag.reasons[:5]})"
        )
    return tuple(services)


def scale_config(cfg: GenConfig, **overrides) -> GenConfig:
    """Copy of cfg with fields replaced; convenience for sweep axes."""
    return replace(cfg, **overrides)
