"""Topology parsing, cost families, cuts, and instance validation.

min_cut results on small graphs are checked against brute-force
enumeration of all source/sink node partitions.
"""

import itertools
import math

import numpy as np
import pytest

from cachecast.fixtures import PRESET_B, load_fixture
from cachecast.gf import FieldSpec
from cachecast.network import (
    BARRIER_SLOPE,
    CostFamily,
    Instance,
    Network,
    TopologyError,
    feasible_flow,
    load_topology,
    max_flow,
    min_cut,
    serialize,
)


def brute_cut(net: Network, sink: int) -> float:
    """Minimum cut by enumerating all node bipartitions."""
    inner = [v for v in range(1, net.n_nodes + 1) if v not in (net.source, sink)]
    best = math.inf
    for r in range(len(inner) + 1):
        for chosen in itertools.combinations(inner, r):
            side = {net.source, *chosen}
            val = sum(
                c for (i, j), c in zip(net.edges, net.capacity) if i in side and j not in side
            )
            best = min(best, val)
    return best


UNIT_BUTTERFLY = """
nodes 7 2
edge 1 2 1
edge 1 3 1
edge 2 4 1
edge 3 4 1
edge 2 6 1
edge 3 7 1
edge 4 5 1
edge 5 6 1
edge 5 7 1
"""


def test_parse_fixture_shapes():
    net = load_fixture("butterfly")
    assert (net.n_nodes, net.n_dest, net.n_edges) == (7, 2, 9)
    assert net.source == 1 and net.destinations == (6, 7)
    assert net.edge_cost[0] == CostFamily("mm1", 5.0)
    assert net.cache_nodes == frozenset({4, 5, 6, 7})
    assert net.in_neighbors(4) == [2, 3]
    assert net.out_neighbors(5) == [6, 7]


def test_parse_single_edge_and_comments():
    net = load_topology("# tiny\nnodes 2 1\nedge 1 2 5  # the only link\n")
    assert net.n_edges == 1 and net.capacity == (5.0,)
    assert min_cut(net, 2) == 5.0


@pytest.mark.parametrize(
    "text,frag",
    [
        ("edge 1 2 1\n", "missing 'nodes"),
        ("nodes 3 1\nedge 1 2 1\nedge 3 2 1\nedge 2 3 1\n", "outgoing"),
        ("nodes 2 1\nedge 1 2 1\nedge 1 2 2\n", "duplicate edge"),
        ("nodes 3 1\nedge 1 2 1\n", "unreachable"),
        ("nodes 2 1\nedge 1 2 0\n", "positive"),
        ("nodes 2 1\nedge 1 2 1\nedge 2 1 1\n", "incoming"),
        ("nodes 2 1\nlink 1 2 1\n", "unknown directive"),
        ("nodes 2 1\nedge 1 2 one\n", "line 2"),
        ("nodes 2 1\nedge 1 2 1\nedgecost 1 3 linear:1\n", "undeclared"),
        ("nodes 2 1\nedge 1 2 1\ncache 1\n", "source"),
        ("nodes 4 2\nedge 1 2 1\nedge 2 3 1\nedge 2 4 1\nedge 3 4 1\n", "outgoing"),
    ],
)
def test_parse_errors(text, frag):
    with pytest.raises(TopologyError, match=frag):
        load_topology(text)


def test_cycle_detection():
    net = Network(
        n_nodes=4,
        n_dest=1,
        edges=((1, 2), (2, 3), (3, 2), (3, 4)),
        capacity=(1.0, 1.0, 1.0, 1.0),
        edge_cost=tuple(CostFamily("mm1", 1.0) for _ in range(4)),
    )
    with pytest.raises(TopologyError, match="cycle"):
        net.validate()


def test_min_cut_unit_butterfly():
    net = load_topology(UNIT_BUTTERFLY)
    for t in (6, 7):
        assert min_cut(net, t) == pytest.approx(2.0)
        assert min_cut(net, t) == pytest.approx(brute_cut(net, t))


def test_min_cut_parallel_paths():
    net = load_topology("nodes 4 1\nedge 1 2 3\nedge 1 3 4\nedge 2 4 3\nedge 3 4 6\n")
    assert min_cut(net, 4) == pytest.approx(7.0)
    assert min_cut(net, 4) == pytest.approx(brute_cut(net, 4))


def test_min_cut_fixtures_match_brute_force():
    for name in ("butterfly", "service", "cdn"):
        net = load_fixture(name)
        for t in net.destinations:
            assert min_cut(net, t) == pytest.approx(brute_cut(net, t))


def test_max_flow_conservation():
    net = load_fixture("butterfly")
    value, flow = max_flow(net, 6)
    assert value == pytest.approx(6.0)
    for v in range(2, net.n_nodes):
        into = sum(flow[e] for e in net.in_edges(v))
        out = sum(flow[e] for e in net.out_edges(v))
        assert into == pytest.approx(out if v != 6 else into)
    for e, c in enumerate(net.capacity):
        assert -1e-9 <= flow[e] <= c + 1e-9


def test_feasible_flow_scaled():
    net = load_fixture("butterfly")
    fl = feasible_flow(net, 6, PRESET_B["butterfly"])
    assert sum(fl[e] for e in net.in_edges(6)) == pytest.approx(3.6)
    assert all(fl[e] <= c + 1e-9 for e, c in enumerate(net.capacity))
    with pytest.raises(ValueError, match="exceeds"):
        feasible_flow(net, 6, 100.0)


def test_mm1_cost_values():
    f = CostFamily("mm1", 2.0)
    assert f.cost(1.0) == pytest.approx(1.0)
    assert f.cost(1.5) == pytest.approx(3.0)
    assert f.cost(0.0) == 0.0
    assert f.cost(2.0) == math.inf
    assert f.cost(5.0) == math.inf
    assert f.deriv(1.0) == pytest.approx(2.0)
    assert f.deriv(0.0) == pytest.approx(0.5)
    assert f.deriv(2.0) == BARRIER_SLOPE
    with pytest.raises(ValueError):
        f.cost(-0.1)


def test_polynomial_cost_values():
    assert CostFamily("linear", 2.5).cost(3.0) == pytest.approx(7.5)
    assert CostFamily("linear", 2.5).deriv(100.0) == pytest.approx(2.5)
    assert CostFamily("quadratic", 2.0).cost(3.0) == pytest.approx(18.0)
    assert CostFamily("quadratic", 2.0).deriv(3.0) == pytest.approx(12.0)
    assert CostFamily("zero").cost(9.0) == 0.0
    assert CostFamily("zero").deriv(9.0) == 0.0


def test_cost_monotone_convex_and_deriv_matches_fd():
    rng = np.random.default_rng(11)
    fams = [
        CostFamily("mm1", 3.0),
        CostFamily("linear", 1.3),
        CostFamily("quadratic", 0.7),
    ]
    for fam in fams:
        for _ in range(200):
            s = float(rng.uniform(0, 2.6))
            h = 1e-6
            fd = (fam.cost(s + h) - fam.cost(max(s - h, 0.0))) / (h + min(s, h))
            assert fam.deriv(s) == pytest.approx(fd, rel=1e-4, abs=1e-6)
        s1, s2 = sorted(rng.uniform(0, 2.9, size=2))
        assert fam.cost(s1) <= fam.cost(s2) + 1e-12
        mid = 0.5 * (s1 + s2)
        assert fam.cost(mid) <= 0.5 * (fam.cost(s1) + fam.cost(s2)) + 1e-12


def test_cost_family_parse_labels():
    for fam in (CostFamily("mm1", 3.5), CostFamily("linear", 1.0), CostFamily("zero")):
        assert CostFamily.parse(fam.label()) == fam
    assert CostFamily.parse("none") == CostFamily("zero")
    with pytest.raises(ValueError):
        CostFamily.parse("cubic:2")


def test_serialize_roundtrip():
    for name in ("butterfly", "service", "cdn"):
        net = load_fixture(name)
        assert load_topology(serialize(net)) == net
    text = "nodes 2 1\nedge 1 2 4\nedgecost 1 2 quadratic:0.5\ncache 2 linear:2\n"
    net = load_topology(text)
    assert load_topology(serialize(net)) == net
    assert net.edge_cost[0] == CostFamily("quadratic", 0.5)


def test_eligibility_scenarios():
    net = load_fixture("cdn")
    assert net.eligible_nodes("no") == frozenset()
    assert net.eligible_nodes("edge") == frozenset({6, 7})
    assert net.eligible_nodes("peer") == frozenset({8, 9})
    assert net.eligible_nodes("edge-peer") == frozenset({6, 7, 8, 9})
    assert net.eligible_nodes("edge_peer") == frozenset({6, 7, 8, 9})
    assert net.eligible_nodes("all") == frozenset(range(2, 10))
    with pytest.raises(ValueError, match="scenario"):
        net.eligible_nodes("sometimes")


def test_instance_validation():
    net = load_fixture("service")
    Instance(net, 5.0, 0.05, 100, FieldSpec(2))
    with pytest.raises(ValueError, match="min cut"):
        Instance(net, 6.0, 0.05, 100, FieldSpec(2))
    with pytest.raises(ValueError, match="eps"):
        Instance(net, 5.0, 5.5, 100, FieldSpec(2))
    with pytest.raises(ValueError, match="round"):
        Instance(net, 5.0, 0.05, 0, FieldSpec(2))
    with pytest.raises(ValueError, match="demand"):
        Instance(net, 0.5, 0.0, 1, FieldSpec(2))
    inst = Instance(net, 5.0, 0.0, 1, FieldSpec(2))
    assert inst.eps_symbols == 0 and inst.B_symbols == 5
