"""Collaborative edge computing simulator: offloading, bandwidth allocation,
baseline schedulers, and a twin-assisted deterministic policy-gradient learner."""

from .model import (
    Assignment,
    CapacitySnapshot,
    EdgeNode,
    FlowAllocation,
    Link,
    Microservice,
    Placement,
    ServiceDag,
    Topology,
    Violation,
    average_completion_time,
    check_feasibility,
    computation_time,
    finish_time,
    flow_time,
    max_feasible_bandwidth,
    service_completion,
)
from .sim import ActionCommand, CecEnv, EnvConfig, EnvState, MsAction, route, run_episode
from .workload import GenConfig, generate_topology, generate_workload, ingest_trace

__all__ = [
    "ActionCommand",
    "Assignment",
    "CapacitySnapshot",
    "CecEnv",
    "EdgeNode",
    "EnvConfig",
    "EnvState",
    "FlowAllocation",
    "GenConfig",
    "Link",
    "Microservice",
    "MsAction",
    "Placement",
    "ServiceDag",
    "Topology",
    "Violation",
    "average_completion_time",
    "check_feasibility",
    "computation_time",
    "finish_time",
    "flow_time",
    "generate_topology",
    "generate_workload",
    "ingest_trace",
    "max_feasible_bandwidth",
    "route",
    "run_episode",
    "service_completion",
]

__version__ = "0.1.0"
