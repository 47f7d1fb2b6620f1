import pytest

from cecsim.model import EdgeNode, Link, Microservice, ServiceDag, Topology


@pytest.fixture
def line_topology():
    """a -- b -- c with 10 Mbps links; speeds 10/20/40 Mcps."""
    nodes = [
        EdgeNode("a", 10e6, 100.0),
        EdgeNode("b", 20e6, 100.0),
        EdgeNode("c", 40e6, 100.0),
    ]
    links = [Link("a-b", ("a", "b"), 10e6), Link("b-c", ("b", "c"), 10e6)]
    return Topology(nodes, links)


@pytest.fixture
def pair_topology():
    """Two identical nodes joined by one 10 Mbps link."""
    nodes = [EdgeNode("a", 10e6, 100.0), EdgeNode("b", 10e6, 100.0)]
    links = [Link("a-b", ("a", "b"), 10e6)]
    return Topology(nodes, links)


def chain_service(service_id, loads, data_bits, source, release=0.0, demand=1.0):
    """Linear chain m00 -> m01 -> ... with given loads and per-ms input data."""
    n = len(loads)
    ms = []
    for i in range(n):
        preds = frozenset({f"m{i-1:02d}"}) if i > 0 else frozenset()
        ms.append(
            Microservice(service_id, f"m{i:02d}", data_bits[i], loads[i], demand, preds)
        )
    edges = frozenset((f"m{i-1:02d}", f"m{i:02d}") for i in range(1, n))
    return ServiceDag(service_id, tuple(ms), edges, release, source)
