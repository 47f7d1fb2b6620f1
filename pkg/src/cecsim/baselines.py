"""Non-learning schedulers and an exact brute-force oracle for tiny instances."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Protocol, Sequence

from .model import FlowAllocation, MsKey, NodeId, Placement, ServiceDag, Topology
from .sim import ActionCommand, CecEnv, DecisionContext, EnvConfig, MsAction, run_episode


class Scheduler(Protocol):
    name: str

    def decide(self, env: CecEnv) -> ActionCommand: ...


class LocalExecution:
    """Run every microservice on its service's source node; no network flows."""

    name = "le"

    def decide(self, env: CecEnv) -> ActionCommand:
        ctx = env.decision_context()
        entries = {
            p.key: MsAction(p.source_node, 1.0, 0.0) for p in ctx.pending
        }
        return ActionCommand(entries)


class Greedy:
    """Myopic earliest-estimated-finish placement.

    For each pending microservice in release order (dependencies first) the
    finish time on every node is estimated from current residuals: latest
    predecessor finish, plus transfer over the shortest path at the full
    currently-feasible bandwidth, plus the node's committed backlog, plus
    compute.  The minimizing node wins; ties go to the lowest node id.  Flows
    request the full available bandwidth with no deferral.
    """

    name = "greedy"

    def decide(self, env: CecEnv) -> ActionCommand:
        ctx = env.decision_context()
        free_at = {nid: ctx.now + ctx.node_backlog_s[nid] for nid in ctx.node_order}
        decided: dict[MsKey, tuple[NodeId, float]] = {}
        entries: dict[MsKey, MsAction] = {}
        for p in ctx.pending:
            best_node = None
            best_finish = math.inf
            for nid in ctx.node_order:
                est = self._estimate_finish(ctx, p, nid, decided, free_at)
                if est < best_finish:
                    best_finish = est
                    best_node = nid
            if best_node is None:  # all estimates infinite: fall back to colocation
                best_node = self._pred_node(ctx, p, decided) or p.source_node
                best_finish = free_at[best_node] + p.ms.compute_load_cycles / ctx.node_speed[best_node]
            decided[p.key] = (best_node, best_finish)
            entries[p.key] = MsAction(best_node, 1.0, 0.0)
            free_at[best_node] = best_finish
        return ActionCommand(entries)

    @staticmethod
    def _pred_node(ctx: DecisionContext, p, decided) -> NodeId | None:
        for pid in sorted(p.ms.predecessors):
            key = (p.key[0], pid)
            if key in decided:
                return decided[key][0]
            node = ctx.resolved_node(key)
            if node is not None:
                return node
        return None

    def _estimate_finish(self, ctx: DecisionContext, p, nid: NodeId, decided, free_at) -> float:
        ready = ctx.now
        transfer = 0.0
        if p.ms.predecessors:
            latest_finish = -math.inf
            latest_node = None
            for pid in sorted(p.ms.predecessors):
                key = (p.key[0], pid)
                if key in decided:
                    node_q, finish_q = decided[key]
                else:
                    node_q = ctx.resolved_node(key)
                    finish_q = ctx.finish_estimate(key)
                    if node_q is None or finish_q is None:
                        continue
                if finish_q > latest_finish:
                    latest_finish = finish_q
                    latest_node = node_q
            if latest_node is not None:
                ready = max(ready, latest_finish)
                if latest_node != nid:
                    bw = ctx.bottleneck_bw(latest_node, nid)
                    if bw <= 0:
                        return math.inf
                    transfer = p.ms.data_size_bits / bw
        arrival = ready + transfer
        start = max(arrival, free_at[nid])
        return start + p.ms.compute_load_cycles / ctx.node_speed[nid]


class FixedAssignment:
    """Replays a prescribed microservice-to-node map; used by the oracle."""

    name = "fixed"

    def __init__(self, assignment: dict[MsKey, NodeId], fraction: float = 1.0, defer_s: float = 0.0):
        self.assignment = assignment
        self.fraction = fraction
        self.defer_s = defer_s

    def decide(self, env: CecEnv) -> ActionCommand:
        entries = {}
        for key in env.pending_keys():
            entries[key] = MsAction(self.assignment[key], self.fraction, self.defer_s)
        return ActionCommand(entries)


@dataclass(frozen=True)
class OracleLimits:
    max_nodes: int = 4
    max_total_ms: int = 6


@dataclass
class OracleResult:
    act_s: float
    assignment: dict[MsKey, NodeId]
    placement: Placement
    flows: tuple[FlowAllocation, ...]


def brute_force_optimal(
    topo: Topology,
    workload: Sequence[ServiceDag],
    env_cfg: EnvConfig,
    limits: OracleLimits = OracleLimits(),
    defer_grid: Sequence[float] = (0.0,),
) -> OracleResult:
    """Exhaustive search over node assignments (full-bandwidth FCFS flows,
    a small global grid over deferrals); exact on tiny instances.

    Refuses instances beyond the limits rather than blowing up silently.
    """
    ms_keys = [ms.key for s in workload for ms in s.microservices]
    node_ids = topo.node_ids()
    if len(node_ids) > limits.max_nodes:
        raise ValueError(f"{len(node_ids)} nodes exceeds oracle limit {limits.max_nodes}")
    if len(ms_keys) > limits.max_total_ms:
        raise ValueError(f"{len(ms_keys)} microservices exceeds oracle limit {limits.max_total_ms}")
    if not defer_grid:
        raise ValueError("defer_grid must be non-empty")

    best: OracleResult | None = None
    env = CecEnv(topo, workload, env_cfg)
    for combo in itertools.product(node_ids, repeat=len(ms_keys)):
        assignment = dict(zip(ms_keys, combo))
        for defer in defer_grid:
            env.reset()
            result = run_episode(env, FixedAssignment(assignment, 1.0, defer))
            if not result.completed_all:
                continue
            if best is None or result.act_s < best.act_s - 1e-12:
                best = OracleResult(
                    result.act_s, assignment, env.placement_record(), env.flow_record()
                )
    if best is None:
        raise RuntimeError("no assignment completed the workload")
    return best


def make_scheduler(name: str) -> Scheduler:
    if name == "le":
        return LocalExecution()
    if name == "greedy":
        return Greedy()
    raise ValueError(f"unknown scheduler {name!r}")
