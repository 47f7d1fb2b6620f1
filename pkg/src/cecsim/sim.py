"""Discrete-event simulator of the collaborative edge network.

Executes placements and flow allocations over a topology, tracks residual node
resources and link bandwidth, derives queueing waits, and exposes the decision
interface (observe / step / reward) used by schedulers and the learner.

Mechanics:
  * one FCFS compute queue per node, one microservice running at a time at
    full node speed; a microservice reserves its resource demand from the
    moment it is ready at the node until it finishes;
  * a dependency's input data moves as a flow along the hop-count shortest
    path, at a fixed bandwidth chosen at flow start (a fraction of the
    bottleneck residual); flows that find no residual bandwidth queue FIFO;
  * co-located dependencies transfer instantly and use no links;
  * decision points are service arrivals: the scheduler assigns every pending
    microservice a target node, bandwidth fraction, and deferral.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .model import (
    Assignment,
    CapacitySnapshot,
    FlowAllocation,
    Microservice,
    MsKey,
    NodeId,
    Placement,
    ServiceDag,
    Topology,
    max_feasible_bandwidth,
)
from .workload import GenConfig

# Event kinds double as same-timestamp priorities: releases of capacity come
# before readiness, which comes before new arrivals.
EV_FLOW_FINISH = 0
EV_COMPUTE_FINISH = 1
EV_FLOW_READY = 2
EV_MS_READY = 3
EV_SERVICE_ARRIVAL = 4
EV_SLOT_BOUNDARY = 5

_EVENT_NAMES = {
    EV_FLOW_FINISH: "flow_finish",
    EV_COMPUTE_FINISH: "compute_finish",
    EV_FLOW_READY: "flow_ready",
    EV_MS_READY: "ms_ready",
    EV_SERVICE_ARRIVAL: "service_arrival",
    EV_SLOT_BOUNDARY: "slot_boundary",
}

FEATURES_PER_MS = 5  # data, load, demand, in-degree, scheduled flag


@dataclass(frozen=True)
class SimClock:
    now_s: float = 0.0
    slot_len_s: float = 1.0
    frame_count: int = 0

    def slot_index(self) -> int:
        return int(self.now_s / self.slot_len_s)


@dataclass(frozen=True)
class EnvConfig:
    """Encoding and actuation knobs for the simulator environment."""

    slots: int
    data_norm_bits: float
    load_norm_cycles: float
    demand_norm: float
    defer_max_s: float = 10.0
    min_fraction: float = 0.05
    slot_len_s: float = 1.0
    audit: bool = False

    @staticmethod
    def from_gen(cfg: GenConfig, slots: int, **overrides) -> "EnvConfig":
        # Bounded inputs stabilize training: means times ten covers the
        # clamped-Gaussian tails.
        base = dict(
            slots=slots,
            data_norm_bits=cfg.mean_data_bits * 10.0,
            load_norm_cycles=cfg.mean_load_cycles * 10.0,
            demand_norm=max(cfg.mean_load_cycles * cfg.resource_demand_factor * 10.0, 1e-12),
        )
        base.update(overrides)
        return EnvConfig(**base)


@dataclass(frozen=True, eq=False)
class EnvState:
    """Fixed-length encoded observation: DAG features plus residual fractions."""

    dag_features: np.ndarray  # (slots * FEATURES_PER_MS,)
    link_residuals: np.ndarray  # (len(links),) in [0, 1]
    node_residuals: np.ndarray  # (len(nodes),) in [0, 1]

    def vector(self) -> np.ndarray:
        return np.concatenate([self.dag_features, self.link_residuals, self.node_residuals])

    def equals(self, other: "EnvState") -> bool:
        return (
            np.array_equal(self.dag_features, other.dag_features)
            and np.array_equal(self.link_residuals, other.link_residuals)
            and np.array_equal(self.node_residuals, other.node_residuals)
        )


@dataclass(frozen=True)
class MsAction:
    target_node: NodeId
    bandwidth_fraction: float
    defer_s: float


@dataclass
class ActionCommand:
    entries: dict[MsKey, MsAction] = field(default_factory=dict)


@dataclass(frozen=True)
class AuditRecord:
    """What was resident and flowing right after one event was handled."""

    time_s: float
    event: str
    resident: tuple[tuple[MsKey, NodeId], ...]
    flows: tuple[FlowAllocation, ...]


class _MsRun:
    __slots__ = (
        "ms", "service", "topo_index", "node", "fraction", "defer_s", "assign_time",
        "missing_inputs", "ready_time", "start_time", "finish_time", "finish_sched", "state",
    )

    def __init__(self, ms: Microservice, service: ServiceDag, topo_index: int):
        self.ms = ms
        self.service = service
        self.topo_index = topo_index
        self.node: NodeId | None = None
        self.fraction = 1.0
        self.defer_s = 0.0
        self.assign_time = math.nan
        self.missing_inputs = len(ms.predecessors)
        self.ready_time = math.nan
        self.start_time = math.nan
        self.finish_time = math.nan
        self.finish_sched = math.nan
        self.state = "unreleased"  # unreleased/pending/assigned/ready/admitted/running/finished


class _NodeRun:
    __slots__ = ("node_id", "speed", "capacity", "reserved", "waiting", "admitted", "running")

    def __init__(self, node_id: NodeId, speed: float, capacity: float):
        self.node_id = node_id
        self.speed = speed
        self.capacity = capacity
        self.reserved = 0.0
        self.waiting: deque[_MsRun] = deque()
        self.admitted: deque[_MsRun] = deque()
        self.running: _MsRun | None = None


class _FlowRun:
    __slots__ = ("flow_id", "src", "dst", "target", "payload", "fraction", "route",
                 "base_time", "start_time", "bw")

    def __init__(self, flow_id, src, dst, target: _MsRun, payload, fraction, route, base_time):
        self.flow_id = flow_id
        self.src = src
        self.dst = dst
        self.target = target
        self.payload = payload
        self.fraction = fraction
        self.route = route
        self.base_time = base_time  # earliest possible start, before deferral
        self.start_time = math.nan
        self.bw = math.nan


@dataclass
class PendingInfo:
    key: MsKey
    ms: Microservice
    release_s: float
    source_node: NodeId


class DecisionContext:
    """Read-only view of the simulator at a decision point.

    Carries what baselines and the reward estimator need: the pending
    snapshot, residuals, per-node committed backlog, routes, and resolvers for
    where already-scheduled microservices sit.
    """

    def __init__(self, env: "CecEnv"):
        self.now = env.clock.now_s
        self.topo = env.topo
        self.node_order = env.node_order
        self.link_order = env.link_order
        self.pending = [
            PendingInfo(r.ms.key, r.ms, r.service.release_time_s, r.service.source_node)
            for r in env._pending_runs()
        ]
        self.node_speed = {n.node_id: n.processing_speed_cps for n in env.topo.nodes}
        self.node_capacity = {n.node_id: n.resource_capacity for n in env.topo.nodes}
        self.link_capacity = dict(env._link_capacity)
        self.link_residual_bps = dict(env._link_residual)
        self.node_residual = {
            nid: env._nodes[nid].capacity - env._nodes[nid].reserved for nid in env.node_order
        }
        self.node_backlog_s = {nid: 0.0 for nid in env.node_order}
        self._node_of: dict[MsKey, NodeId] = {}
        self._finish: dict[MsKey, float] = {}
        for run in env._runs.values():
            if run.node is None:
                continue
            self._node_of[run.ms.key] = run.node
            if run.state == "finished":
                self._finish[run.ms.key] = run.finish_time
                continue
            if run.state == "running":
                remaining = max(0.0, run.finish_sched - self.now)
            else:
                remaining = run.ms.compute_load_cycles / self.node_speed[run.node]
            self.node_backlog_s[run.node] += remaining
        self._route = env.route

    def resolved_node(self, key: MsKey) -> NodeId | None:
        return self._node_of.get(key)

    def finish_estimate(self, key: MsKey) -> float | None:
        if key in self._finish:
            return self._finish[key]
        node = self._node_of.get(key)
        if node is None:
            return None
        return self.now + self.node_backlog_s[node]

    def route(self, src: NodeId, dst: NodeId) -> tuple[NodeId, ...]:
        return self._route(src, dst)

    def bottleneck_bw(self, src: NodeId, dst: NodeId) -> float:
        return max_feasible_bandwidth(self.route(src, dst), self.topo, self.link_residual_bps)


def route(src: NodeId, dst: NodeId, topo: Topology) -> tuple[NodeId, ...]:
    """Hop-count shortest path; ties broken by the lexicographically smallest
    node-id sequence.  Returns an empty path when src == dst."""
    if src == dst:
        if not topo.has_node(src):
            raise KeyError(src)
        return ()
    if not topo.has_node(src) or not topo.has_node(dst):
        raise KeyError(f"unknown endpoint {src!r} or {dst!r}")
    best: dict[NodeId, tuple[int, tuple[NodeId, ...]]] = {}
    heap: list[tuple[int, tuple[NodeId, ...]]] = [(1, (src,))]
    while heap:
        hops, path = heapq.heappop(heap)
        head = path[-1]
        if head == dst:
            return path
        if head in best and best[head] <= (hops, path):
            continue
        best[head] = (hops, path)
        for nbr in topo.neighbors(head):
            if nbr in path:
                continue
            heapq.heappush(heap, (hops + 1, path + (nbr,)))
    raise ValueError(f"no path between {src} and {dst}")


class CecEnv:
    """Simulator instance over one topology and one workload.

    Single-threaded; run many instances in parallel rather than sharing one.
    Identical (topology, workload, actions, seed) yield bit-identical
    trajectories.
    """

    def __init__(
        self,
        topo: Topology,
        workload: Sequence[ServiceDag],
        cfg: EnvConfig,
        seed: int = 0,
        trace_sink: Callable[[dict], None] | None = None,
    ):
        self.topo = topo
        self.workload = tuple(workload)
        self.cfg = cfg
        self.seed = seed
        self.trace_sink = trace_sink
        self.node_order = topo.node_ids()
        self.link_order = topo.link_ids()
        self._link_capacity = {l.link_id: l.bandwidth_capacity_bps for l in topo.links}
        self._routes: dict[tuple[NodeId, NodeId], tuple[NodeId, ...]] = {}
        self.reset()

    # -- lifecycle ---------------------------------------------------------

    def reset(
        self,
        topo: Topology | None = None,
        workload: Sequence[ServiceDag] | None = None,
        seed: int | None = None,
    ) -> EnvState:
        """Rebuild runtime state, schedule arrivals, advance to the first
        decision point, and return the encoded state."""
        if topo is not None:
            self.topo = topo
            self.node_order = topo.node_ids()
            self.link_order = topo.link_ids()
            self._link_capacity = {l.link_id: l.bandwidth_capacity_bps for l in topo.links}
            self._routes = {}
        if workload is not None:
            self.workload = tuple(workload)
        if seed is not None:
            self.seed = seed
        for s in self.workload:
            if not self.topo.has_node(s.source_node):
                raise ValueError(f"service {s.service_id} source {s.source_node} not in topology")

        self.clock = SimClock(0.0, self.cfg.slot_len_s, 0)
        self._seq = itertools.count()
        self._queue: list[tuple[float, int, int, object]] = []
        self._nodes = {
            n.node_id: _NodeRun(n.node_id, n.processing_speed_cps, n.resource_capacity)
            for n in self.topo.nodes
        }
        self._link_residual = dict(self._link_capacity)
        self._runs: dict[MsKey, _MsRun] = {}
        self._service_remaining: dict[str, int] = {}
        self._service_by_id = {s.service_id: s for s in self.workload}
        self._pending: list[MsKey] = []
        self._blocked_flows: deque[_FlowRun] = deque()
        self._active_flows: dict[str, tuple[_FlowRun, FlowAllocation]] = {}
        self._flow_counter = itertools.count()
        self._completions: dict[str, float] = {}  # service_id -> completion time TT
        self._step_completions: list[tuple[str, float]] = []
        self._clamped = 0
        self._placement = Placement()
        self._flow_log: list[FlowAllocation] = []
        self.audit_records: list[AuditRecord] = []

        for s in self.workload:
            self._service_remaining[s.service_id] = len(s.microservices)
            for idx, ms in enumerate(s.topo_order()):
                self._runs[ms.key] = _MsRun(ms, s, idx)
            self._push(s.release_time_s, EV_SERVICE_ARRIVAL, s)
        self._advance_to_decision()
        return self.observe()

    @property
    def done(self) -> bool:
        return len(self._completions) == len(self.workload)

    @property
    def clamp_count(self) -> int:
        return self._clamped

    # -- observation -------------------------------------------------------

    def _pending_runs(self) -> list[_MsRun]:
        return [self._runs[k] for k in self._pending]

    def pending_keys(self) -> tuple[MsKey, ...]:
        return tuple(self._pending)

    def observe(self) -> EnvState:
        feats = np.zeros(self.cfg.slots * FEATURES_PER_MS)
        row = 0
        for run in self._feature_runs():
            if row >= self.cfg.slots:
                break
            ms = run.ms
            base = row * FEATURES_PER_MS
            feats[base + 0] = min(ms.data_size_bits / self.cfg.data_norm_bits, 1.0)
            feats[base + 1] = min(ms.compute_load_cycles / self.cfg.load_norm_cycles, 1.0)
            feats[base + 2] = min(ms.resource_demand / self.cfg.demand_norm, 1.0)
            feats[base + 3] = min(len(ms.predecessors) / self.cfg.slots, 1.0)
            feats[base + 4] = 0.0 if run.state == "pending" else 1.0
            row += 1
        link_res = np.array(
            [self._link_residual[lid] / self._link_capacity[lid] for lid in self.link_order]
        )
        node_res = np.array(
            [
                (self._nodes[nid].capacity - self._nodes[nid].reserved) / self._nodes[nid].capacity
                if self._nodes[nid].capacity > 0
                else 1.0
                for nid in self.node_order
            ]
        )
        return EnvState(feats, np.clip(link_res, 0.0, 1.0), np.clip(node_res, 0.0, 1.0))

    def _feature_runs(self) -> list[_MsRun]:
        pending = self._pending_runs()
        in_flight = [
            r
            for r in self._runs.values()
            if r.state in ("assigned", "ready", "admitted", "running")
        ]
        in_flight.sort(key=lambda r: (r.service.release_time_s, r.ms.service_id, r.topo_index))
        return pending + in_flight

    def decision_context(self) -> DecisionContext:
        return DecisionContext(self)

    def route(self, src: NodeId, dst: NodeId) -> tuple[NodeId, ...]:
        key = (src, dst)
        if key not in self._routes:
            self._routes[key] = route(src, dst, self.topo)
        return self._routes[key]

    # -- records -----------------------------------------------------------

    def placement_record(self) -> Placement:
        return Placement(dict(self._placement.assignments))

    def flow_record(self) -> tuple[FlowAllocation, ...]:
        return tuple(self._flow_log)

    def completion_times(self) -> dict[str, float]:
        return dict(self._completions)

    def act_s(self) -> float:
        if not self._completions:
            raise ValueError("no completed services yet")
        return sum(self._completions.values()) / len(self._completions)

    # -- stepping ----------------------------------------------------------

    def step(self, action: ActionCommand) -> tuple[EnvState, float, bool, dict]:
        """Apply assignments for pending microservices, then advance events to
        the next decision point.  Reward is the negative sum of completion
        times of services finishing during this step."""
        self._step_completions = []
        pending_set = set(self._pending)
        for key in action.entries:
            if key not in pending_set:
                raise ValueError(f"action references non-pending microservice {key}")
        order = {k: i for i, k in enumerate(self._pending)}
        for key in sorted(action.entries, key=order.__getitem__):
            self._apply_assignment(key, action.entries[key])
        if action.entries:
            self._pending = [k for k in self._pending if k not in action.entries]
            self._advance_to_decision()
        reward = -sum(tt for _, tt in self._step_completions)
        done = self.done
        stalled = not done and not self._queue and not self._pending
        info = {
            "time_s": self.clock.now_s,
            "completed": tuple(self._step_completions),
            "clamped": self._clamped,
            "pending_remaining": len(self._pending),
            "stalled": stalled,
        }
        if stalled:
            raise RuntimeError("simulator stalled with work remaining and no events")
        return self.observe(), reward, done, info

    def _apply_assignment(self, key: MsKey, act: MsAction) -> None:
        if not self.topo.has_node(act.target_node):
            raise ValueError(f"action targets unknown node {act.target_node}")
        fraction = act.bandwidth_fraction
        defer = act.defer_s
        if not math.isfinite(fraction) or not math.isfinite(defer):
            raise ValueError("action values must be finite")
        clamped_fraction = min(max(fraction, self.cfg.min_fraction), 1.0)
        clamped_defer = min(max(defer, 0.0), self.cfg.defer_max_s)
        if clamped_fraction != fraction or clamped_defer != defer:
            self._clamped += 1
        run = self._runs[key]
        run.node = act.target_node
        run.fraction = clamped_fraction
        run.defer_s = clamped_defer
        run.assign_time = self.clock.now_s
        run.state = "assigned"
        if run.missing_inputs == 0:
            self._ms_ready(run)
            return
        for pid in sorted(run.ms.predecessors):
            pred = self._runs[(key[0], pid)]
            if pred.state == "finished":
                self._spawn_flow(pred, run)

    # -- event machinery ---------------------------------------------------

    def _push(self, time_s: float, kind: int, payload) -> None:
        heapq.heappush(self._queue, (time_s, kind, next(self._seq), payload))

    def _advance_to_decision(self) -> None:
        while self._queue:
            time_s, kind, _, payload = heapq.heappop(self._queue)
            self.clock = SimClock(time_s, self.clock.slot_len_s, self.clock.frame_count)
            if kind == EV_SERVICE_ARRIVAL:
                self._arrive(payload)
                while self._queue and self._queue[0][0] == time_s and self._queue[0][1] == EV_SERVICE_ARRIVAL:
                    _, _, _, nxt = heapq.heappop(self._queue)
                    self._arrive(nxt)
                self._emit("service_arrival", service=payload.service_id)
                self._audit("service_arrival")
                return
            if kind == EV_FLOW_FINISH:
                self._finish_flow(payload)
                self._emit("flow_finish", flow=payload.flow_id)
                self._audit("flow_finish")
            elif kind == EV_COMPUTE_FINISH:
                self._finish_compute(payload)
                self._emit("compute_finish", ms=list(payload.ms.key))
                self._audit("compute_finish")
            elif kind == EV_FLOW_READY:
                self._flow_ready(payload)
                self._emit("flow_ready", flow=payload.flow_id)
                self._audit("flow_ready")
            elif kind == EV_MS_READY:
                self._ms_ready(payload)
                self._emit("ms_ready", ms=list(payload.ms.key))
                self._audit("ms_ready")

    def _arrive(self, service: ServiceDag) -> None:
        for ms in service.topo_order():
            run = self._runs[ms.key]
            if run.state == "unreleased":
                run.state = "pending"
                self._pending.append(ms.key)

    def _spawn_flow(self, pred: _MsRun, succ: _MsRun) -> None:
        """Create the dependency flow pred -> succ; ready after the deferral."""
        base = max(succ.assign_time, pred.finish_time)
        flow = _FlowRun(
            flow_id=f"f{next(self._flow_counter):06d}",
            src=pred.node,
            dst=succ.node,
            target=succ,
            payload=succ.ms.data_size_bits,
            fraction=succ.fraction,
            route=self.route(pred.node, succ.node),
            base_time=base,
        )
        self._push(base + succ.defer_s, EV_FLOW_READY, flow)

    def _flow_ready(self, flow: _FlowRun) -> None:
        if not self._try_start_flow(flow):
            self._blocked_flows.append(flow)

    def _try_start_flow(self, flow: _FlowRun) -> bool:
        now = self.clock.now_s
        if len(flow.route) < 2 or flow.payload == 0:
            self._deliver_input(flow.target)
            return True
        bottleneck = math.inf
        link_ids = []
        for a, b in zip(flow.route, flow.route[1:]):
            lid = self.topo.link_between(a, b).link_id
            link_ids.append(lid)
            bottleneck = min(bottleneck, self._link_residual[lid])
        # Exhausted links hold exactly 0; the epsilon only absorbs float dust.
        if bottleneck <= 1e-9 * max(self._link_capacity[lid] for lid in link_ids):
            return False
        bw = flow.fraction * bottleneck
        for lid in link_ids:
            self._link_residual[lid] = max(0.0, self._link_residual[lid] - bw)
        flow.bw = bw
        flow.start_time = now
        alloc = FlowAllocation(
            flow_id=flow.flow_id,
            src=flow.src,
            dst=flow.dst,
            route=flow.route,
            bandwidth_bps=bw,
            wait_s=now - flow.base_time,
            payload_bits=flow.payload,
        )
        self._active_flows[flow.flow_id] = (flow, alloc)
        self._flow_log.append(alloc)
        self._push(now + flow.payload / bw, EV_FLOW_FINISH, flow)
        return True

    def _finish_flow(self, flow: _FlowRun) -> None:
        _, alloc = self._active_flows.pop(flow.flow_id)
        for a, b in zip(flow.route, flow.route[1:]):
            lid = self.topo.link_between(a, b).link_id
            self._link_residual[lid] = min(self._link_capacity[lid], self._link_residual[lid] + alloc.bandwidth_bps)
        self._deliver_input(flow.target)
        for blocked in list(self._blocked_flows):
            if self._try_start_flow(blocked):
                self._blocked_flows.remove(blocked)

    def _deliver_input(self, run: _MsRun) -> None:
        run.missing_inputs -= 1
        if run.missing_inputs == 0:
            self._ms_ready(run)

    def _ms_ready(self, run: _MsRun) -> None:
        run.state = "ready"
        run.ready_time = self.clock.now_s
        node = self._nodes[run.node]
        node.waiting.append(run)
        self._drain_node(node)

    def _drain_node(self, node: _NodeRun) -> None:
        while node.waiting:
            head = node.waiting[0]
            demand = head.ms.resource_demand
            fits = demand <= node.capacity - node.reserved + 1e-9
            oversize = demand > node.capacity and node.reserved == 0.0
            if not (fits or oversize):
                break
            if oversize:
                self._clamped += 1
            node.waiting.popleft()
            node.reserved += demand
            head.state = "admitted"
            node.admitted.append(head)
        if node.running is None and node.admitted:
            run = node.admitted.popleft()
            run.state = "running"
            run.start_time = self.clock.now_s
            duration = run.ms.compute_load_cycles / node.speed
            run.finish_sched = self.clock.now_s + duration
            node.running = run
            self._placement.assignments[run.ms.key] = Assignment(
                node.node_id, run.start_time, run.start_time - run.ready_time
            )
            self._push(run.finish_sched, EV_COMPUTE_FINISH, run)

    def _finish_compute(self, run: _MsRun) -> None:
        node = self._nodes[run.node]
        node.reserved = max(0.0, node.reserved - run.ms.resource_demand)
        node.running = None
        run.state = "finished"
        run.finish_time = self.clock.now_s
        sid = run.ms.service_id
        self._service_remaining[sid] -= 1
        if self._service_remaining[sid] == 0:
            tt = self.clock.now_s - run.service.release_time_s
            self._completions[sid] = tt
            self._step_completions.append((sid, tt))
        for succ_id in run.service.successors(run.ms.ms_id):
            succ = self._runs[(sid, succ_id)]
            if succ.node is not None:
                self._spawn_flow(run, succ)
        self._drain_node(node)

    # -- logging -----------------------------------------------------------

    def _emit(self, event: str, **ids) -> None:
        if self.trace_sink is None:
            return
        self.trace_sink(
            {
                "event": event,
                "time_s": self.clock.now_s,
                **ids,
                "link_residual_bps": {lid: self._link_residual[lid] for lid in self.link_order},
                "node_residual": {
                    nid: self._nodes[nid].capacity - self._nodes[nid].reserved
                    for nid in self.node_order
                },
            }
        )

    def _audit(self, event: str) -> None:
        if not self.cfg.audit:
            return
        resident = tuple(
            sorted(
                (r.ms.key, r.node)
                for r in self._runs.values()
                if r.state in ("admitted", "running")
            )
        )
        flows = tuple(alloc for _, alloc in self._active_flows.values())
        self.audit_records.append(AuditRecord(self.clock.now_s, event, resident, flows))


def audit_feasibility(env: CecEnv) -> list:
    """Run the static feasibility check against every recorded audit snapshot.

    Requires the env to have been constructed with cfg.audit=True.  Returns
    the concatenated violation list (empty means the run stayed feasible).
    """
    from .model import check_feasibility

    ms_index = {ms.key: ms for s in env.workload for ms in s.microservices}
    violations = []
    caps = CapacitySnapshot(
        {n.node_id: n.resource_capacity for n in env.topo.nodes},
        {l.link_id: l.bandwidth_capacity_bps for l in env.topo.links},
    )
    for rec in env.audit_records:
        placement = Placement(
            {key: Assignment(node, rec.time_s) for key, node in rec.resident}
        )
        demands = [ms_index[key] for key, _ in rec.resident]
        violations.extend(
            check_feasibility(placement, rec.flows, env.topo, demands, caps)
        )
    return violations


@dataclass
class EpisodeResult:
    act_s: float
    total_reward: float
    steps: int
    completions: dict[str, float]
    completed_all: bool


def run_episode(env: CecEnv, scheduler, max_steps: int = 100_000) -> EpisodeResult:
    """Drive one environment to completion with a scheduler's decisions."""
    total_reward = 0.0
    steps = 0
    while not env.done and steps < max_steps:
        command = scheduler.decide(env)
        if not command.entries and env.pending_keys():
            raise RuntimeError(f"{scheduler!r} returned no action for pending microservices")
        _, reward, done, _ = env.step(command)
        total_reward += reward
        steps += 1
        if done:
            break
    completions = env.completion_times()
    completed_all = env.done
    act = sum(completions.values()) / len(completions) if completions else math.nan
    return EpisodeResult(act, total_reward, steps, completions, completed_all)
