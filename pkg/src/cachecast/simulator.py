"""M-round protocol execution with exact cost accounting.

Round 1 runs the plain network code and seeds every caching node's store:
intermediaries keep their full output stack, destinations keep the
decoded frame.  From round 2 on, an edge whose head caches carries only
the gamma-symbol syndrome of the symbols it would have sent; the head
recovers its new value from the syndromes and its cache and replaces the
cache with it.  All other edges carry full payloads.  Values are
identical to a cache-free execution; only the traffic changes.

The ledger counts symbols and bits moved per edge and round, storage per
caching node, and evaluates the realized total cost Psi_S next to the
placement bound Psi_star, both in symbol units with the network's cost
families.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np

from .fnupd import UpdateCodec, build_codec, decode, encode
from .gf import FieldSpec, FMatrix, vstack
from .lnc import EdgeDims, NetworkCode, build_code, symbol_min_cut
from .network import Instance, Network


def gen_frames(
    fieldspec: FieldSpec, B: int, eps: int, rounds: int, seed: int = 0
) -> list:
    """Frame sequence: uniform start, then exactly-eps-sparse deltas.

    Each successive frame differs from its predecessor in exactly eps
    uniformly chosen positions, by uniform nonzero amounts (the hardest
    sparsity the update codecs are built for).
    """
    if not 0 <= eps <= B:
        raise ValueError("need 0 <= eps <= B")
    if rounds < 1:
        raise ValueError("need at least one round")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
    q = fieldspec.q
    frames = [FMatrix.random(fieldspec, B, 1, rng)]
    for _ in range(rounds - 1):
        data = frames[-1].a.copy()
        support = rng.choice(B, size=eps, replace=False)
        for pos in support:
            data[pos, 0] = (data[pos, 0] + rng.integers(1, q)) % q
        frames.append(FMatrix(fieldspec, data))
    return frames


def plan_dims(net: Network, rates, b_sym: int) -> EdgeDims:
    """Symbol dims covering the given rates, strictly inside mm1 capacities.

    Rates are rounded up per edge, then clamped below any finite-capacity
    cost so realized payload costs stay finite.  Raises when the clamped
    dims cannot support b_sym symbols to every destination.
    """
    dims = []
    for e, fam in enumerate(net.edge_cost):
        d = int(math.ceil(float(rates[e]) - 1e-9))
        if fam.kind == "mm1":
            limit = int(math.ceil(fam.param)) - 1
            d = min(d, max(limit, 0))
        dims.append(max(d, 0))
    planned = EdgeDims(tuple(dims))
    for t in net.destinations:
        cut = symbol_min_cut(net, planned, t)
        if cut < b_sym:
            raise ValueError(
                f"planned dims give symbol cut {cut} < B={b_sym} at destination {t}"
            )
    return planned


@dataclass
class CostLedger:
    """Symbols, bits and costs moved per round, plus the placement bound."""

    edge_symbols: np.ndarray  # (rounds, E) payload symbols per edge
    cache_symbols: np.ndarray  # (rounds, N) stored symbols per node
    edge_cost: np.ndarray  # (rounds,) sum of edge cost family values
    storage_cost: np.ndarray  # (rounds,) sum of node cost family values
    bits_per_symbol: float
    psi_star: float

    @property
    def round_cost(self) -> np.ndarray:
        return self.edge_cost + self.storage_cost

    @property
    def psi_s(self) -> float:
        return float(self.round_cost.sum())

    @property
    def edge_bits(self) -> np.ndarray:
        return self.edge_symbols * self.bits_per_symbol

    @property
    def cache_bits(self) -> np.ndarray:
        return self.cache_symbols * self.bits_per_symbol


@dataclass
class SimResult:
    """Everything a run produced, for verification and reporting."""

    code: NetworkCode
    delta: tuple
    decoded: dict  # destination -> list of decoded frames
    outputs: dict  # non-destination node -> list of output stacks
    codecs: dict  # caching node -> UpdateCodec
    ledger: CostLedger

    def decode_exact(self, frames) -> bool:
        return all(
            dec == frames[r]
            for seq in self.decoded.values()
            for r, dec in enumerate(seq)
        )


def _normalize_delta(net: Network, delta) -> tuple:
    arr = np.asarray(delta, dtype=np.int64)
    if arr.shape != (net.n_nodes,):
        raise ValueError(f"delta must have one entry per node ({net.n_nodes})")
    if arr[net.source - 1]:
        raise ValueError("the source cannot cache")
    if np.any((arr != 0) & (arr != 1)):
        raise ValueError("delta entries must be 0 or 1")
    return tuple(int(d) for d in arr)


def psi_star_bound(
    net: Network,
    dims: EdgeDims,
    delta,
    rounds: int,
    eps: int,
    node_fams=None,
) -> float:
    """Cost upper bound of a placement at the planned symbol dims.

    Charges every edge its full payload in round 1; in the remaining
    rounds an edge into a caching head is charged at the worst-case
    update payload 2 eps, all other edges at full payload, and every
    caching node stores its out-stack.
    """
    delta = _normalize_delta(net, delta)
    fams = node_fams or [net.node_cache_cost(v) for v in range(1, net.n_nodes + 1)]
    m1 = rounds - 1
    total = 0.0
    for e, fam in enumerate(net.edge_cost):
        fe = fam.cost(float(dims[e]))
        head = net.edges[e][1]
        if delta[head - 1]:
            total += fe + m1 * fam.cost(float(2 * eps))
        else:
            total += fe * (1 + m1)
    for v in range(1, net.n_nodes + 1):
        if delta[v - 1]:
            out_sum = float(sum(dims[e] for e in net.out_edges(v)))
            total += m1 * fams[v - 1].cost(out_sum)
    return total


def run(
    code: NetworkCode,
    delta,
    frames,
    eps: int,
    seed: int = 0,
    strict: bool = False,
    node_fams=None,
    retries: int = 32,
) -> SimResult:
    """Execute all rounds of the protocol and account every symbol.

    delta is the 0/1 cache decision per node (index 0 = node 1); frames
    is the sequence from gen_frames.  The cache-aided data path is used
    wherever delta = 1; setting delta to all zeros gives the cache-free
    reference execution.
    """
    net = code.net
    fs = code.fieldspec
    delta = _normalize_delta(net, delta)
    rounds = len(frames)
    dests = set(net.destinations)
    cachers = [v for v in range(1, net.n_nodes + 1) if delta[v - 1]]
    for v in cachers:
        if not net.in_edges(v):
            raise ValueError(f"node {v} has no in-edges and cannot cache")

    codecs: dict[int, UpdateCodec] = {
        v: build_codec(code, v, eps, seed=seed, retries=retries) for v in cachers
    }

    edge_symbols = np.zeros((rounds, net.n_edges))
    cache_symbols = np.zeros((rounds, net.n_nodes))
    edge_cost = np.zeros(rounds)
    storage_cost = np.zeros(rounds)
    fams = node_fams or [net.node_cache_cost(v) for v in range(1, net.n_nodes + 1)]

    caches: dict[int, FMatrix] = {}
    decoded: dict[int, list] = {t: [] for t in net.destinations}
    outputs: dict[int, list] = {
        v: [] for v in range(1, net.n_nodes + 1) if v not in dests
    }

    for r in range(rounds):
        m = frames[r]
        out_syms: dict[int, FMatrix] = {}
        for i in net.topo_order():
            aided = r > 0 and delta[i - 1] == 1
            if i == net.source:
                out_syms[i] = code.coeffs[i] @ m
                outputs[i].append(out_syms[i])
                continue
            if aided:
                codec = codecs[i]
                syns = []
                for e in net.in_edges(i):
                    tail = net.edges[e][0]
                    off = code.out_offset(tail, e)
                    y_edge = out_syms[tail].row_slice(off, off + code.dims[e])
                    syns.append(encode(codec, e, y_edge, rnd=r))
                    edge_symbols[r, e] = codec.gamma
                value = decode(codec, syns, caches[i], strict=strict)
                caches[i] = value
            else:
                blocks = []
                for e in net.in_edges(i):
                    tail = net.edges[e][0]
                    off = code.out_offset(tail, e)
                    blocks.append(out_syms[tail].row_slice(off, off + code.dims[e]))
                    edge_symbols[r, e] = code.dims[e]
                x = vstack(blocks) if blocks else FMatrix.zeros(fs, 0, 1)
                if i in dests:
                    value = code.decoders[i] @ x
                else:
                    value = code.coeffs[i] @ x
                if delta[i - 1]:
                    caches[i] = value
            if i in dests:
                decoded[i].append(value)
            else:
                out_syms[i] = value
                outputs[i].append(value)

        for e in range(net.n_edges):
            edge_cost[r] += net.edge_cost[e].cost(edge_symbols[r, e])
        for v in cachers:
            cache_symbols[r, v - 1] = caches[v].rows
            if r > 0:
                out_sum = float(sum(code.dims[e] for e in net.out_edges(v)))
                storage_cost[r] += fams[v - 1].cost(out_sum)

    ledger = CostLedger(
        edge_symbols=edge_symbols,
        cache_symbols=cache_symbols,
        edge_cost=edge_cost,
        storage_cost=storage_cost,
        bits_per_symbol=fs.bits_per_symbol,
        psi_star=psi_star_bound(net, code.dims, delta, rounds, eps, node_fams=fams),
    )
    return SimResult(
        code=code,
        delta=delta,
        decoded=decoded,
        outputs=outputs,
        codecs=codecs,
        ledger=ledger,
    )


@dataclass
class ScenarioRow:
    """One line of a scenario comparison: relaxed and realized costs."""

    scenario: str
    psi_relaxed: float
    converged: bool
    iterations: int
    delta: tuple
    b_symbols: int
    eps_symbols: int
    psi_star: float
    psi_s: float
    decode_exact: bool


def compare_scenarios(
    net: Network,
    inst: Instance,
    cfg=None,
    scenarios=("no", "edge", "peer", "edge-peer"),
    rounds: int | None = None,
    seed: int = 0,
) -> list:
    """Solve, round and simulate each caching scenario of a fixture.

    rounds defaults to the instance's M; simulation runs in symbol units
    with B rounded up and eps at least one symbol when positive.
    """
    from .optimizer import RelaxedProblem, SolverConfig, round_placement, solve

    cfg = cfg or SolverConfig(seed=seed)
    rounds = inst.M if rounds is None else rounds
    b_sym = inst.B_symbols
    eps_sym = inst.eps_symbols
    frames = gen_frames(inst.fieldspec, b_sym, eps_sym, rounds, seed=seed)
    rows = []
    for scen in scenarios:
        problem = RelaxedProblem(net, inst, eligible=scen)
        res = solve(problem, cfg)
        placement = round_placement(problem, res.state, cfg)
        dims = plan_dims(net, placement.sigma, b_sym)
        code = build_code(net, inst.fieldspec, b_sym, dims, seed=seed)
        sim = run(code, placement.delta, frames, eps_sym, seed=seed)
        rows.append(
            ScenarioRow(
                scenario=scen,
                psi_relaxed=res.psi,
                converged=res.converged,
                iterations=res.iterations,
                delta=placement.delta,
                b_symbols=b_sym,
                eps_symbols=eps_sym,
                psi_star=sim.ledger.psi_star,
                psi_s=sim.ledger.psi_s,
                decode_exact=sim.decode_exact(frames),
            )
        )
    return rows
