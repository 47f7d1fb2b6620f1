"""Domain types and cost formulas for microservice offloading with bandwidth allocation.

Units are fixed across the whole package: bits, bits/second, CPU cycles,
cycles/second, seconds.  Config loaders convert Mbit/Mbps/Mcps inputs before
anything here sees them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

NodeId = str
LinkId = str
MsKey = tuple[str, str]  # (service_id, ms_id)


def _require_finite(name: str, value: float, minimum: float = 0.0) -> None:
    if not isinstance(value, (int, float)) or not math.isfinite(value) or value < minimum:
        raise ValueError(f"{name} must be finite and >= {minimum}, got {value!r}")


@dataclass(frozen=True)
class Microservice:
    """One node of a service DAG: input data, compute load, resource demand."""

    service_id: str
    ms_id: str
    data_size_bits: float
    compute_load_cycles: float
    resource_demand: float
    predecessors: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        _require_finite("data_size_bits", self.data_size_bits)
        _require_finite("compute_load_cycles", self.compute_load_cycles)
        _require_finite("resource_demand", self.resource_demand)
        object.__setattr__(self, "predecessors", frozenset(self.predecessors))
        if self.ms_id in self.predecessors:
            raise ValueError(f"microservice {self.ms_id} lists itself as predecessor")

    @property
    def key(self) -> MsKey:
        return (self.service_id, self.ms_id)


@dataclass(frozen=True)
class ServiceDag:
    """A released service: microservices plus dependency edges.

    `microservices` keeps its given order; `topo_order` derives a deterministic
    dependency-respecting order from it.
    """

    service_id: str
    microservices: tuple[Microservice, ...]
    edges: frozenset[tuple[str, str]]
    release_time_s: float
    source_node: NodeId

    def __post_init__(self):
        object.__setattr__(self, "microservices", tuple(self.microservices))
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in self.edges))
        _require_finite("release_time_s", self.release_time_s)
        if not self.microservices:
            raise ValueError(f"service {self.service_id} has no microservices")
        ids = [m.ms_id for m in self.microservices]
        if len(set(ids)) != len(ids):
            raise ValueError(f"service {self.service_id} has duplicate ms_ids")
        known = set(ids)
        for m in self.microservices:
            if m.service_id != self.service_id:
                raise ValueError(f"microservice {m.ms_id} belongs to {m.service_id}, not {self.service_id}")
            if not m.predecessors <= known:
                raise ValueError(f"microservice {m.ms_id} references unknown predecessors")
        derived = {(p, m.ms_id) for m in self.microservices for p in m.predecessors}
        if derived != self.edges:
            raise ValueError(f"service {self.service_id}: edges disagree with predecessor sets")
        self.topo_order()  # raises on cycles

    def microservice(self, ms_id: str) -> Microservice:
        for m in self.microservices:
            if m.ms_id == ms_id:
                return m
        raise KeyError(ms_id)

    def topo_order(self) -> tuple[Microservice, ...]:
        """Kahn's algorithm; among ready nodes the first in sequence order wins."""
        remaining = {m.ms_id: set(m.predecessors) for m in self.microservices}
        order: list[Microservice] = []
        placed: set[str] = set()
        while remaining:
            ready = [m for m in self.microservices if m.ms_id in remaining and remaining[m.ms_id] <= placed]
            if not ready:
                raise ValueError(f"service {self.service_id} contains a dependency cycle")
            m = ready[0]
            order.append(m)
            placed.add(m.ms_id)
            del remaining[m.ms_id]
        return tuple(order)

    def successors(self, ms_id: str) -> tuple[str, ...]:
        return tuple(sorted(s for (p, s) in self.edges if p == ms_id))


@dataclass(frozen=True)
class EdgeNode:
    node_id: NodeId
    processing_speed_cps: float
    resource_capacity: float
    is_end_device: bool = False

    def __post_init__(self):
        _require_finite("processing_speed_cps", self.processing_speed_cps)
        if self.processing_speed_cps <= 0:
            raise ValueError("processing_speed_cps must be > 0")
        _require_finite("resource_capacity", self.resource_capacity)


@dataclass(frozen=True)
class Link:
    link_id: LinkId
    endpoints: tuple[NodeId, NodeId]
    bandwidth_capacity_bps: float

    def __post_init__(self):
        a, b = self.endpoints
        if a == b:
            raise ValueError(f"link {self.link_id} connects a node to itself")
        object.__setattr__(self, "endpoints", (min(a, b), max(a, b)))
        _require_finite("bandwidth_capacity_bps", self.bandwidth_capacity_bps)
        if self.bandwidth_capacity_bps <= 0:
            raise ValueError("bandwidth_capacity_bps must be > 0")


class Topology:
    """Connected graph of edge nodes (and end devices) joined by capacity links."""

    def __init__(self, nodes: Iterable[EdgeNode], links: Iterable[Link]):
        self.nodes: tuple[EdgeNode, ...] = tuple(sorted(nodes, key=lambda n: n.node_id))
        self.links: tuple[Link, ...] = tuple(sorted(links, key=lambda l: l.link_id))
        self._node_by_id = {n.node_id: n for n in self.nodes}
        if len(self._node_by_id) != len(self.nodes):
            raise ValueError("duplicate node ids")
        self._link_by_id = {l.link_id: l for l in self.links}
        if len(self._link_by_id) != len(self.links):
            raise ValueError("duplicate link ids")
        self._link_by_pair: dict[tuple[NodeId, NodeId], Link] = {}
        self._adjacency: dict[NodeId, list[NodeId]] = {n.node_id: [] for n in self.nodes}
        for l in self.links:
            a, b = l.endpoints
            if a not in self._node_by_id or b not in self._node_by_id:
                raise ValueError(f"link {l.link_id} references unknown node")
            if (a, b) in self._link_by_pair:
                raise ValueError(f"duplicate link between {a} and {b}")
            self._link_by_pair[(a, b)] = l
            self._adjacency[a].append(b)
            self._adjacency[b].append(a)
        for nbrs in self._adjacency.values():
            nbrs.sort()
        if not self.is_connected():
            raise ValueError("topology is not connected")

    def node(self, node_id: NodeId) -> EdgeNode:
        return self._node_by_id[node_id]

    def has_node(self, node_id: NodeId) -> bool:
        return node_id in self._node_by_id

    def link(self, link_id: LinkId) -> Link:
        return self._link_by_id[link_id]

    def link_between(self, a: NodeId, b: NodeId) -> Link:
        key = (min(a, b), max(a, b))
        if key not in self._link_by_pair:
            raise KeyError(f"no link between {a} and {b}")
        return self._link_by_pair[key]

    def neighbors(self, node_id: NodeId) -> tuple[NodeId, ...]:
        return tuple(self._adjacency[node_id])

    def node_ids(self) -> tuple[NodeId, ...]:
        return tuple(n.node_id for n in self.nodes)

    def link_ids(self) -> tuple[LinkId, ...]:
        return tuple(l.link_id for l in self.links)

    def is_connected(self) -> bool:
        if not self.nodes:
            return False
        seen = {self.nodes[0].node_id}
        stack = [self.nodes[0].node_id]
        while stack:
            for nbr in self._adjacency[stack.pop()]:
                if nbr not in seen:
                    seen.add(nbr)
                    stack.append(nbr)
        return len(seen) == len(self.nodes)


@dataclass(frozen=True)
class Assignment:
    node_id: NodeId
    start_time_s: float
    wait_s: float = 0.0


@dataclass
class Placement:
    """Map of scheduled microservices to nodes.

    Keyed by (service_id, ms_id), so each microservice has at most one
    assignment by construction (the uniqueness constraint as a data invariant).
    """

    assignments: dict[MsKey, Assignment] = field(default_factory=dict)


@dataclass(frozen=True)
class FlowAllocation:
    """An admitted transfer of one dependency's input data along a routed path."""

    flow_id: str
    src: NodeId
    dst: NodeId
    route: tuple[NodeId, ...]
    bandwidth_bps: float
    wait_s: float
    payload_bits: float

    def __post_init__(self):
        object.__setattr__(self, "route", tuple(self.route))
        if len(self.route) < 2 or self.route[0] != self.src or self.route[-1] != self.dst:
            raise ValueError(f"flow {self.flow_id}: route must run from src to dst")
        if len(set(self.route)) != len(self.route):
            raise ValueError(f"flow {self.flow_id}: route must be a simple path")
        _require_finite("bandwidth_bps", self.bandwidth_bps)
        if self.bandwidth_bps <= 0:
            raise ValueError("bandwidth_bps must be > 0")
        _require_finite("wait_s", self.wait_s)
        _require_finite("payload_bits", self.payload_bits)


@dataclass(frozen=True)
class CapacitySnapshot:
    """Available node resources and link bandwidths at one instant."""

    node_resources: Mapping[NodeId, float]
    link_bandwidth_bps: Mapping[LinkId, float]


@dataclass(frozen=True)
class Violation:
    kind: str  # "assignment" | "node_resource" | "link_bandwidth"
    subject: str
    measured: float
    limit: float

    def __str__(self) -> str:
        return f"{self.kind}[{self.subject}]: {self.measured} exceeds {self.limit}"


def computation_time(compute_load_cycles: float, processing_speed_cps: float, wait_s: float) -> float:
    """Compute time on a node: load / speed plus queueing wait."""
    _require_finite("compute_load_cycles", compute_load_cycles)
    _require_finite("wait_s", wait_s)
    _require_finite("processing_speed_cps", processing_speed_cps)
    if processing_speed_cps <= 0:
        raise ValueError("processing_speed_cps must be > 0")
    return compute_load_cycles / processing_speed_cps + wait_s


def flow_time(payload_bits: float, bandwidth_bps: float, wait_s: float) -> float:
    """Transfer time for a flow: payload / allocated bandwidth plus wait.

    A zero payload costs exactly the wait (co-located dependency convention).
    """
    _require_finite("payload_bits", payload_bits)
    _require_finite("wait_s", wait_s)
    if payload_bits == 0:
        return wait_s
    if not math.isfinite(bandwidth_bps) or bandwidth_bps <= 0:
        raise ValueError(f"bandwidth_bps must be > 0 for nonzero payload, got {bandwidth_bps!r}")
    return payload_bits / bandwidth_bps + wait_s


def max_feasible_bandwidth(
    route: Sequence[NodeId], topo: Topology, residual_bw: Mapping[LinkId, float]
) -> float:
    """Bottleneck residual bandwidth along a routed path; +inf for an empty route."""
    if len(route) < 2:
        return math.inf
    best = math.inf
    for a, b in zip(route, route[1:]):
        link = topo.link_between(a, b)
        if link.link_id not in residual_bw:
            raise KeyError(f"no residual bandwidth entry for link {link.link_id}")
        best = min(best, max(0.0, residual_bw[link.link_id]))
    return best


def finish_time(
    ms: Microservice, pt_s: float, bt_s: float, pred_finish: Mapping[str, float]
) -> float:
    """Finish time: compute time plus transfer time plus latest predecessor finish."""
    _require_finite("pt_s", pt_s)
    _require_finite("bt_s", bt_s)
    missing = ms.predecessors - set(pred_finish)
    if missing:
        raise KeyError(f"missing predecessor finish times: {sorted(missing)}")
    latest = max((pred_finish[p] for p in ms.predecessors), default=0.0)
    return pt_s + bt_s + latest


def service_completion(ft: Mapping[str, float]) -> float:
    """Service finish time: the maximum microservice finish time."""
    if not ft:
        raise ValueError("ft must be non-empty")
    return max(ft.values())


def average_completion_time(tt: Sequence[float]) -> float:
    """Mean completion time over services; the headline metric."""
    if not tt:
        raise ValueError("tt must be non-empty")
    return sum(tt) / len(tt)


def check_feasibility(
    placement: Placement,
    flows: Sequence[FlowAllocation],
    topo: Topology,
    demands: Iterable[Microservice],
    residuals: CapacitySnapshot,
) -> list[Violation]:
    """Check assignment uniqueness, node resource sums, and per-link bandwidth sums.

    `demands` lists the microservices that should be placed in this snapshot;
    `residuals` gives the capacity available to them.  Returns the (possibly
    empty) violation list; infeasibility is data, not an exception.
    """
    demand_by_key = {m.key: m for m in demands}
    violations: list[Violation] = []

    for key in demand_by_key:
        n_assigned = 1 if key in placement.assignments else 0
        if n_assigned != 1:
            violations.append(Violation("assignment", f"{key[0]}/{key[1]}", n_assigned, 1))
    for key in placement.assignments:
        if key not in demand_by_key:
            violations.append(Violation("assignment", f"{key[0]}/{key[1]}", 2, 1))

    per_node: dict[NodeId, float] = {}
    for key, asg in placement.assignments.items():
        if key not in demand_by_key:
            continue
        if not topo.has_node(asg.node_id):
            raise KeyError(f"assignment references unknown node {asg.node_id}")
        per_node[asg.node_id] = per_node.get(asg.node_id, 0.0) + demand_by_key[key].resource_demand
    for node_id, used in sorted(per_node.items()):
        limit = residuals.node_resources.get(node_id, topo.node(node_id).resource_capacity)
        if used > limit + 1e-9:
            violations.append(Violation("node_resource", node_id, used, limit))

    per_link: dict[LinkId, float] = {}
    for f in flows:
        for a, b in zip(f.route, f.route[1:]):
            link = topo.link_between(a, b)
            per_link[link.link_id] = per_link.get(link.link_id, 0.0) + f.bandwidth_bps
    for link_id, used in sorted(per_link.items()):
        limit = residuals.link_bandwidth_bps.get(link_id, topo.link(link_id).bandwidth_capacity_bps)
        if used > limit + 1e-9:
            violations.append(Violation("link_bandwidth", link_id, used, limit))

    return violations
