"""Network model: topology, link/cache cost families, cuts, instances.

Topologies are directed acyclic graphs with node 1 as the single source and
the last L nodes as destinations.  The text format is line oriented:

    nodes N L
    edge i j capacity
    edgecost i j family[:param]     # optional, default mm1:<capacity>
    cache i family[:param]          # marks node i as storage-capable

Comments start with '#'.  Costs are per transmission unit on a link
(f_{i,j}) or per cached unit at a node (f_i).  The mm1 family s/(c-s)
models an M/M/1 queue and is infinite at loads >= c; its derivative is
capped at a large barrier slope so gradient dynamics push loads back
inside the finite domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gf import FieldSpec

BARRIER_SLOPE = 1e9

SCENARIOS = ("no", "edge", "peer", "edge-peer", "all")


class TopologyError(ValueError):
    """Raised for malformed topology text or invalid graph structure."""


@dataclass(frozen=True)
class CostFamily:
    """One-argument convex cost f(s) with derivative.

    kind: "zero", "linear" (a*s), "quadratic" (a*s^2) or "mm1" (s/(c-s)).
    """

    kind: str
    param: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "linear", "quadratic", "mm1"):
            raise ValueError(f"unknown cost family {self.kind!r}")
        if self.kind == "mm1" and self.param <= 0:
            raise ValueError("mm1 capacity must be positive")

    def cost(self, s: float) -> float:
        if s < 0:
            raise ValueError("negative load")
        if self.kind == "zero":
            return 0.0
        if self.kind == "linear":
            return self.param * s
        if self.kind == "quadratic":
            return self.param * s * s
        if s >= self.param:
            return math.inf
        return s / (self.param - s)

    def deriv(self, s: float, barrier: float = BARRIER_SLOPE) -> float:
        if s < 0:
            raise ValueError("negative load")
        if self.kind == "zero":
            return 0.0
        if self.kind == "linear":
            return self.param
        if self.kind == "quadratic":
            return 2.0 * self.param * s
        if s >= self.param:
            return barrier
        return min(self.param / (self.param - s) ** 2, barrier)

    def label(self) -> str:
        if self.kind == "zero":
            return "zero"
        return f"{self.kind}:{self.param:g}"

    @classmethod
    def parse(cls, text: str) -> "CostFamily":
        kind, _, param = text.partition(":")
        kind = kind.strip().lower()
        if kind == "none":
            kind = "zero"
        if param:
            return cls(kind, float(param))
        return cls(kind) if kind != "mm1" else cls(kind, 1.0)


ZERO_COST = CostFamily("zero")


@dataclass(frozen=True)
class Network:
    """Immutable DAG with costs and cache marks.  Nodes are 1-based."""

    n_nodes: int
    n_dest: int
    edges: tuple  # ((i, j), ...) in declaration order
    capacity: tuple  # parallel to edges
    edge_cost: tuple  # CostFamily per edge
    cache_cost: dict = field(default_factory=dict)  # node -> CostFamily
    cache_nodes: frozenset = frozenset()  # storage-capable nodes

    @property
    def source(self) -> int:
        return 1

    @property
    def destinations(self) -> tuple:
        return tuple(range(self.n_nodes - self.n_dest + 1, self.n_nodes + 1))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_index(self, i: int, j: int) -> int:
        return self.edges.index((i, j))

    def in_edges(self, i: int):
        """Edge indices into i, ordered by tail node index."""
        idx = [e for e, (a, b) in enumerate(self.edges) if b == i]
        return sorted(idx, key=lambda e: self.edges[e][0])

    def out_edges(self, i: int):
        """Edge indices out of i, ordered by head node index."""
        idx = [e for e, (a, b) in enumerate(self.edges) if a == i]
        return sorted(idx, key=lambda e: self.edges[e][1])

    def in_neighbors(self, i: int):
        return [self.edges[e][0] for e in self.in_edges(i)]

    def out_neighbors(self, i: int):
        return [self.edges[e][1] for e in self.out_edges(i)]

    def topo_order(self):
        """Kahn topological order; raises TopologyError on a cycle."""
        indeg = {v: 0 for v in range(1, self.n_nodes + 1)}
        for _, j in self.edges:
            indeg[j] += 1
        ready = sorted(v for v, d in indeg.items() if d == 0)
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            changed = False
            for w in self.out_neighbors(v):
                indeg[w] -= 1
                if indeg[w] == 0:
                    ready.append(w)
                    changed = True
            if changed:
                ready.sort()
        if len(order) != self.n_nodes:
            raise TopologyError("graph contains a cycle")
        return order

    def validate(self):
        n, L = self.n_nodes, self.n_dest
        if n < 2 or L < 1 or L >= n:
            raise TopologyError(f"need 2 <= L+1 <= N, got N={n} L={L}")
        seen = set()
        for (i, j), c in zip(self.edges, self.capacity):
            if not (1 <= i <= n and 1 <= j <= n):
                raise TopologyError(f"edge ({i},{j}) references unknown node")
            if i == j:
                raise TopologyError(f"self-loop at node {i}")
            if (i, j) in seen:
                raise TopologyError(f"duplicate edge ({i},{j})")
            seen.add((i, j))
            if c <= 0:
                raise TopologyError(f"edge ({i},{j}) capacity must be positive")
        dests = set(self.destinations)
        for i, j in self.edges:
            if j == self.source:
                raise TopologyError("source must not have incoming edges")
            if i in dests:
                raise TopologyError(f"destination {i} must not have outgoing edges")
        self.topo_order()
        reach = {self.source}
        frontier = [self.source]
        while frontier:
            v = frontier.pop()
            for w in self.out_neighbors(v):
                if w not in reach:
                    reach.add(w)
                    frontier.append(w)
        missing = dests - reach
        if missing:
            raise TopologyError(f"destinations unreachable from source: {sorted(missing)}")
        for v in self.cache_nodes:
            if not (1 <= v <= n):
                raise TopologyError(f"cache mark on unknown node {v}")
            if v == self.source:
                raise TopologyError("source cannot hold a cache")
        return self

    def eligible_nodes(self, scenario: str) -> frozenset:
        """Nodes whose cache indicator may be nonzero under a scenario.

        "edge" restricts to marked non-destinations, "peer" to marked
        destinations, "edge-peer" to all marked nodes, "all" to every node
        but the source, and "no" disables caching entirely.
        """
        s = scenario.replace("_", "-").replace("+", "-").lower()
        dests = set(self.destinations)
        if s == "no":
            return frozenset()
        if s == "edge":
            return frozenset(self.cache_nodes - dests)
        if s == "peer":
            return frozenset(self.cache_nodes & dests)
        if s in ("edge-peer", "peer-edge"):
            return frozenset(self.cache_nodes)
        if s == "all":
            return frozenset(range(2, self.n_nodes + 1))
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")

    def node_cache_cost(self, i: int) -> CostFamily:
        return self.cache_cost.get(i, ZERO_COST)


def load_topology(text: str) -> Network:
    """Parse topology text; raises TopologyError with a line number."""
    n = L = None
    edges, caps, costs = [], [], {}
    cache_cost, cache_nodes = {}, set()
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "nodes":
                if n is not None:
                    raise TopologyError("duplicate nodes line")
                n, L = int(tok[1]), int(tok[2])
            elif tok[0] == "edge":
                i, j, c = int(tok[1]), int(tok[2]), float(tok[3])
                if c <= 0:
                    raise TopologyError(f"line {ln}: edge ({i},{j}) capacity must be positive")
                edges.append((i, j))
                caps.append(c)
            elif tok[0] == "edgecost":
                i, j = int(tok[1]), int(tok[2])
                costs[(i, j)] = CostFamily.parse(tok[3])
            elif tok[0] == "cache":
                i = int(tok[1])
                cache_nodes.add(i)
                cache_cost[i] = CostFamily.parse(tok[2]) if len(tok) > 2 else ZERO_COST
            else:
                raise TopologyError(f"unknown directive {tok[0]!r}")
        except TopologyError:
            raise
        except (IndexError, ValueError) as exc:
            raise TopologyError(f"line {ln}: {raw.strip()!r}: {exc}") from exc
    if n is None:
        raise TopologyError("missing 'nodes N L' line")
    unknown = set(costs) - set(edges)
    if unknown:
        raise TopologyError(f"edgecost for undeclared edges: {sorted(unknown)}")
    fam = tuple(costs.get(e, CostFamily("mm1", c)) for e, c in zip(edges, caps))
    net = Network(
        n_nodes=n,
        n_dest=L,
        edges=tuple(edges),
        capacity=tuple(caps),
        edge_cost=fam,
        cache_cost=cache_cost,
        cache_nodes=frozenset(cache_nodes),
    )
    return net.validate()


def load_topology_file(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        return load_topology(fh.read())


def serialize(net: Network) -> str:
    """Text form that load_topology parses back to an equal network."""
    out = [f"nodes {net.n_nodes} {net.n_dest}"]
    for (i, j), c, fam in zip(net.edges, net.capacity, net.edge_cost):
        out.append(f"edge {i} {j} {c:g}")
        if fam != CostFamily("mm1", c):
            out.append(f"edgecost {i} {j} {fam.label()}")
    for v in sorted(net.cache_nodes):
        out.append(f"cache {v} {net.node_cache_cost(v).label()}")
    return "\n".join(out) + "\n"


def max_flow(net: Network, sink: int, cap=None):
    """Edmonds-Karp max flow from the source to one sink.

    cap optionally overrides per-edge capacities (parallel sequence).
    Returns (value, flow_per_edge) with flow_per_edge parallel to net.edges.
    """
    caps = list(net.capacity if cap is None else cap)
    if len(caps) != net.n_edges:
        raise ValueError("capacity override length mismatch")
    flow = [0.0] * net.n_edges
    adj = {v: [] for v in range(1, net.n_nodes + 1)}
    for e, (i, j) in enumerate(net.edges):
        adj[i].append((e, j, +1))
        adj[j].append((e, i, -1))
    total = 0.0
    while True:
        parent = {net.source: None}
        queue = [net.source]
        while queue and sink not in parent:
            v = queue.pop(0)
            for e, w, sign in adj[v]:
                residual = caps[e] - flow[e] if sign > 0 else flow[e]
                if w not in parent and residual > 1e-12:
                    parent[w] = (v, e, sign)
                    queue.append(w)
        if sink not in parent:
            return total, flow
        push = math.inf
        v = sink
        while parent[v] is not None:
            u, e, sign = parent[v]
            residual = caps[e] - flow[e] if sign > 0 else flow[e]
            push = min(push, residual)
            v = u
        v = sink
        while parent[v] is not None:
            u, e, sign = parent[v]
            flow[e] += sign * push
            v = u
        total += push


def min_cut(net: Network, sink: int, cap=None) -> float:
    """Value of the minimum source->sink cut (= max flow)."""
    return max_flow(net, sink, cap)[0]


@dataclass(frozen=True)
class Instance:
    """A multicast planning problem: network, demand and stream shape.

    B is the per-destination demand in rate units per round; fractional
    values are legal for the relaxed optimizer.  eps bounds how many
    symbols change between consecutive frames.  Coding layers use the
    integer projections B_symbols and eps_symbols.
    """

    network: Network
    B: float
    eps: float
    M: int
    fieldspec: FieldSpec

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("demand B must be >= 1")
        if not (0 <= self.eps <= self.B):
            raise ValueError("need 0 <= eps <= B")
        if self.M < 1:
            raise ValueError("need at least one round")
        for t in self.network.destinations:
            cut = min_cut(self.network, t)
            if self.B >= cut:
                raise ValueError(
                    f"demand {self.B} is not below the min cut {cut:g} to node {t}"
                )

    @property
    def B_symbols(self) -> int:
        return int(math.ceil(self.B))

    @property
    def eps_symbols(self) -> int:
        if self.eps == 0:
            return 0
        return max(1, int(math.ceil(self.eps)))


def feasible_flow(net: Network, sink: int, demand: float):
    """Per-edge flow of the given value from source to sink.

    Scales the max flow down to the demand; requires demand <= max flow.
    """
    value, flow = max_flow(net, sink)
    if demand > value + 1e-12:
        raise ValueError(f"demand {demand} exceeds max flow {value:g} to {sink}")
    scale = 0.0 if value == 0 else demand / value
    return np.asarray(flow) * scale
