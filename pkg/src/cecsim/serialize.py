"""Canonical JSON serialization for topologies and workloads.

Documents use sorted keys and fixed separators so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from .model import EdgeNode, Link, Microservice, ServiceDag, Topology

SCHEMA_VERSION = 1


def dumps_canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def topology_to_doc(topo: Topology) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "topology",
        "nodes": [
            {
                "node_id": n.node_id,
                "processing_speed_cps": n.processing_speed_cps,
                "resource_capacity": n.resource_capacity,
                "is_end_device": n.is_end_device,
            }
            for n in topo.nodes
        ],
        "links": [
            {
                "link_id": l.link_id,
                "endpoints": list(l.endpoints),
                "bandwidth_capacity_bps": l.bandwidth_capacity_bps,
            }
            for l in topo.links
        ],
    }


def topology_from_doc(doc: dict) -> Topology:
    if doc.get("kind") != "topology":
        raise ValueError("document is not a topology")
    nodes = [
        EdgeNode(d["node_id"], d["processing_speed_cps"], d["resource_capacity"], d["is_end_device"])
        for d in doc["nodes"]
    ]
    links = [
        Link(d["link_id"], tuple(d["endpoints"]), d["bandwidth_capacity_bps"]) for d in doc["links"]
    ]
    return Topology(nodes, links)


def workload_to_doc(services: Sequence[ServiceDag]) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "workload",
        "services": [
            {
                "service_id": s.service_id,
                "release_time_s": s.release_time_s,
                "source_node": s.source_node,
                "microservices": [
                    {
                        "ms_id": m.ms_id,
                        "data_size_bits": m.data_size_bits,
                        "compute_load_cycles": m.compute_load_cycles,
                        "resource_demand": m.resource_demand,
                        "predecessors": sorted(m.predecessors),
                    }
                    for m in s.microservices
                ],
            }
            for s in services
        ],
    }


def workload_from_doc(doc: dict) -> tuple[ServiceDag, ...]:
    if doc.get("kind") != "workload":
        raise ValueError("document is not a workload")
    services = []
    for sd in doc["services"]:
        microservices = tuple(
            Microservice(
                service_id=sd["service_id"],
                ms_id=md["ms_id"],
                data_size_bits=md["data_size_bits"],
                compute_load_cycles=md["compute_load_cycles"],
                resource_demand=md["resource_demand"],
                predecessors=frozenset(md["predecessors"]),
            )
            for md in sd["microservices"]
        )
        edges = frozenset((p, m.ms_id) for m in microservices for p in m.predecessors)
        services.append(
            ServiceDag(sd["service_id"], microservices, edges, sd["release_time_s"], sd["source_node"])
        )
    return tuple(services)


def save_topology(path: str | Path, topo: Topology) -> None:
    Path(path).write_text(dumps_canonical(topology_to_doc(topo)))


def load_topology(path: str | Path) -> Topology:
    return topology_from_doc(json.loads(Path(path).read_text()))


def save_workload(path: str | Path, services: Sequence[ServiceDag]) -> None:
    Path(path).write_text(dumps_canonical(workload_to_doc(services)))


def load_workload(path: str | Path) -> tuple[ServiceDag, ...]:
    return workload_from_doc(json.loads(Path(path).read_text()))
