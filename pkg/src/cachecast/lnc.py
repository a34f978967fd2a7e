"""Linear network code construction over a prime field.

Every non-destination node i applies one matrix G_i to the stack of its
in-edge symbols (the source applies G_1 to the frame itself) and writes
the result onto its out-edges, dims[e] symbols per edge e.  In-edge and
out-edge stacks are ordered by neighbor node index.  The composition of
these maps gives per-node transfer matrices A_i with y_i = A_i m, and a
destination d holding a full-rank received matrix P_d recovers the frame
with a left inverse D_d.

Coefficients are sampled uniformly at random.  Sampling is retried with
seeds derived from (seed, attempt) until all destinations can decode,
which fails only with probability O(|edges| L B / q) per attempt.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gf import FieldSpec, FMatrix, vstack
from .network import Network, min_cut


class InfeasibleDimsError(ValueError):
    """Symbol budget cannot carry the demand to every destination."""


class CodeSamplingError(RuntimeError):
    """No decodable code found within the retry budget."""


@dataclass(frozen=True)
class EdgeDims:
    """Per-edge symbol counts, parallel to net.edges."""

    dims: tuple

    def __post_init__(self):
        if any((not isinstance(d, int)) or d < 0 for d in self.dims):
            raise ValueError("edge dims must be non-negative integers")

    def __getitem__(self, e: int) -> int:
        return self.dims[e]

    def __len__(self):
        return len(self.dims)

    @classmethod
    def uniform(cls, net: Network, d: int) -> "EdgeDims":
        return cls(tuple(int(d) for _ in range(net.n_edges)))

    @classmethod
    def from_rates(cls, net: Network, rates, per_symbol: float = 1.0) -> "EdgeDims":
        """Round rates up to whole symbols of size per_symbol rate units.

        A hair of slack absorbs float noise so a rate that is numerically
        an integer multiple does not round one symbol up.
        """
        if len(rates) != net.n_edges:
            raise ValueError("rates length mismatch")
        if per_symbol <= 0:
            raise ValueError("per_symbol must be positive")
        out = tuple(int(np.ceil(r / per_symbol - 1e-9)) if r > 0 else 0 for r in rates)
        if any(d < 0 for d in out):
            raise ValueError("negative rate")
        return cls(out)


def symbol_min_cut(net: Network, dims: EdgeDims, sink: int) -> int:
    """Min cut from source to sink counted in symbols."""
    return int(round(min_cut(net, sink, cap=[float(d) for d in dims.dims])))


@dataclass(frozen=True)
class NetworkCode:
    """A sampled code plus everything needed to run and invert it."""

    net: Network
    fieldspec: FieldSpec
    B: int
    dims: EdgeDims
    coeffs: dict  # node -> G_i (FMatrix), for all non-destination nodes
    transfer: dict  # node -> A_i with y_i = A_i m, for non-destination nodes
    received: dict  # destination -> P_d with x_d = P_d m
    decoders: dict  # destination -> D_d with D_d P_d = I
    seed: int
    attempts: int

    def out_offset(self, i: int, e: int) -> int:
        """Row offset of edge e inside node i's output stack."""
        off = 0
        for oe in self.net.out_edges(i):
            if oe == e:
                return off
            off += self.dims[oe]
        raise KeyError(f"edge {e} does not leave node {i}")

    def in_offset(self, i: int, e: int) -> int:
        """Row offset of edge e inside node i's input stack."""
        off = 0
        for ie in self.net.in_edges(i):
            if ie == e:
                return off
            off += self.dims[ie]
        raise KeyError(f"edge {e} does not enter node {i}")

    def edge_transfer(self, e: int) -> FMatrix:
        """A_{i,j}: the rows of A_i written onto edge e = (i, j)."""
        i = self.net.edges[e][0]
        off = self.out_offset(i, e)
        return self.transfer[i].row_slice(off, off + self.dims[e])

    def node_input_transfer(self, i: int) -> FMatrix:
        """P_i: stacked edge transfers into node i (x_i = P_i m)."""
        blocks = [self.edge_transfer(e) for e in self.net.in_edges(i)]
        if not blocks:
            return FMatrix.zeros(self.fieldspec, 0, self.B)
        return vstack(blocks)

    def out_dim(self, i: int) -> int:
        return sum(self.dims[e] for e in self.net.out_edges(i))

    def in_dim(self, i: int) -> int:
        return sum(self.dims[e] for e in self.net.in_edges(i))


def _sample_coeffs(net: Network, fs: FieldSpec, B: int, dims: EdgeDims, rng) -> dict:
    coeffs = {}
    dests = set(net.destinations)
    for i in range(1, net.n_nodes + 1):
        if i in dests:
            continue
        rows = sum(dims[e] for e in net.out_edges(i))
        cols = B if i == net.source else sum(dims[e] for e in net.in_edges(i))
        coeffs[i] = FMatrix.random(fs, rows, cols, rng)
    return coeffs


def _compose_transfers(net: Network, fs: FieldSpec, B: int, dims: EdgeDims, coeffs: dict):
    transfer = {}
    received = {}
    dests = set(net.destinations)
    for i in net.topo_order():
        if i == net.source:
            transfer[i] = coeffs[i]
            continue
        blocks = []
        for e in net.in_edges(i):
            tail = net.edges[e][0]
            off = 0
            for oe in net.out_edges(tail):
                if oe == e:
                    break
                off += dims[oe]
            blocks.append(transfer[tail].row_slice(off, off + dims[e]))
        p = vstack(blocks) if blocks else FMatrix.zeros(fs, 0, B)
        if i in dests:
            received[i] = p
        else:
            transfer[i] = coeffs[i] @ p
    return transfer, received


def build_code(
    net: Network,
    fieldspec: FieldSpec,
    B: int,
    dims: EdgeDims,
    seed: int = 0,
    retries: int = 32,
) -> NetworkCode:
    """Sample a network code that every destination can invert.

    Raises InfeasibleDimsError when some destination's symbol cut is below
    B (no code can exist), and CodeSamplingError when the retry budget is
    exhausted (the field is too small for these dims).
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    if len(dims) != net.n_edges:
        raise ValueError("dims length mismatch")
    for t in net.destinations:
        cut = symbol_min_cut(net, dims, t)
        if cut < B:
            raise InfeasibleDimsError(
                f"symbol cut {cut} to destination {t} is below B={B}"
            )
    for attempt in range(retries):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        coeffs = _sample_coeffs(net, fieldspec, B, dims, rng)
        transfer, received = _compose_transfers(net, fieldspec, B, dims, coeffs)
        decoders = {}
        for t in net.destinations:
            if received[t].rank() != B:
                break
            decoders[t] = received[t].left_inverse()
        else:
            return NetworkCode(
                net=net,
                fieldspec=fieldspec,
                B=B,
                dims=dims,
                coeffs=coeffs,
                transfer=transfer,
                received=received,
                decoders=decoders,
                seed=seed,
                attempts=attempt + 1,
            )
    raise CodeSamplingError(
        f"no decodable code after {retries} attempts over GF({fieldspec.q}); "
        f"a field with q >> {net.n_edges * net.n_dest * B} makes failure unlikely"
    )


def transfer_matrices(code: NetworkCode) -> dict:
    """Per-edge transfer blocks keyed by (i, j)."""
    return {code.net.edges[e]: code.edge_transfer(e) for e in range(code.net.n_edges)}


def propagate(code: NetworkCode, m: FMatrix):
    """Run one round of the code on frame columns m (B x k).

    Returns (node_outputs, node_inputs): node_outputs[i] is y_i for every
    non-destination node, node_inputs[i] is the stacked x_i for every
    node with in-edges (including destinations).
    """
    net = code.net
    if m.rows != code.B:
        raise ValueError(f"frame has {m.rows} rows, code expects {code.B}")
    dests = set(net.destinations)
    outputs, inputs = {}, {}
    for i in net.topo_order():
        if i == net.source:
            outputs[i] = code.coeffs[i] @ m
            continue
        blocks = []
        for e in net.in_edges(i):
            tail = net.edges[e][0]
            off = code.out_offset(tail, e)
            blocks.append(outputs[tail].row_slice(off, off + code.dims[e]))
        x = vstack(blocks) if blocks else FMatrix.zeros(code.fieldspec, 0, m.cols)
        inputs[i] = x
        if i not in dests:
            outputs[i] = code.coeffs[i] @ x
    return outputs, inputs


def decode_all(code: NetworkCode, m: FMatrix) -> dict:
    """Destination decodes after an actual propagation of m."""
    _, inputs = propagate(code, m)
    return {t: code.decoders[t] @ inputs[t] for t in code.net.destinations}


def verify_decoding(code: NetworkCode, m: FMatrix) -> bool:
    """True when every destination reproduces m exactly."""
    return all(dec == m for dec in decode_all(code, m).values())
