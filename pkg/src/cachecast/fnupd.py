"""Update codecs: refresh cached node outputs from short syndromes.

A caching node i normally computes y_i = A_i m from its stacked in-edge
symbols.  Once y_i is cached, a new frame m' = m + e differing in at most
eps positions can be absorbed from far less traffic: each in-neighbor
applies a small matrix to the symbols it would have sent, so that node i
receives only gamma symbols per in-edge, where gamma = min(2 eps, rank A_i).

Writing the node map as A_i = sum_l C_l P_l over in-edges l (C_l the
node's coefficient columns for that edge, P_l the edge's transfer block),
the in-neighbor on edge l sends H_l y_l with H_l = S C_l for one shared
gamma-row sketch S.  The sums telescope:

    sum_l H_l P_l m' = S A_i m',   so   rho = sum - S y_i = S A_i e.

Recovering A_i e from rho needs S to be injective on the relevant
differences, which holds with high probability once q >= 2 eps B^(2 eps):

* sparse branch (rank A_i > 2 eps): S is accepted only after verifying
  rank(S A_T) = rank(A_T) for every column support T of size
  min(2 eps, B).  Any two candidate error vectors of weight <= eps that
  explain rho then differ by an element of null(A_T) on their combined
  support, so every consistent support yields the same update A_i e.
* rank branch (rank A_i <= 2 eps): S is accepted once
  rank(S A_i) = rank(A_i); a recovery matrix R with A_i = R S A_i turns
  the residual directly into the update R rho = A_i e.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .gf import FieldSpec, FMatrix, field_size_bound
from .lnc import NetworkCode


class FieldTooSmallError(ValueError):
    """q is below the 2 eps B^(2 eps) bound required by the codec."""


class SketchSamplingError(RuntimeError):
    """No verifying sketch found within the retry budget."""


class DecodeError(RuntimeError):
    """No error vector of weight <= eps explains the residual."""


class DecodeAmbiguityError(RuntimeError):
    """Consistent supports disagree on the update (invariant violation)."""


@dataclass(frozen=True)
class Syndrome:
    """gamma update symbols sent along one in-edge of a caching node."""

    node: int
    edge: int
    vec: FMatrix
    rnd: int = 0


@dataclass(frozen=True)
class UpdateCodec:
    """Everything a caching node and its in-neighbors need per round."""

    node: int
    fieldspec: FieldSpec
    B: int
    eps: int
    gamma: int
    branch: str  # "sparse", "rank" or "trivial"
    A: FMatrix  # node output map, y = A m
    S: FMatrix  # sketch, gamma x rows(A)
    H: dict  # edge index -> H_l = S C_l
    R: FMatrix | None  # rank branch recovery, A = R S A
    in_edge_list: tuple
    attempts: int = 1

    @property
    def update_symbols_per_edge(self) -> int:
        return self.gamma


def _node_blocks(code: NetworkCode, node: int):
    """(A, C, in-edges, column offsets) for an intermediate or destination."""
    net = code.net
    if node == net.source:
        raise ValueError("the source has no in-edges to update from")
    in_edges = net.in_edges(node)
    if not in_edges:
        raise ValueError(f"node {node} has no in-edges")
    if node in net.destinations:
        a = FMatrix.identity(code.fieldspec, code.B)
        c = code.decoders[node]
    else:
        a = code.transfer[node]
        c = code.coeffs[node]
    offs = {}
    off = 0
    for e in in_edges:
        offs[e] = off
        off += code.dims[e]
    return a, c, in_edges, offs


def _supports_ok(s: FMatrix, a: FMatrix, size: int) -> bool:
    for t in itertools.combinations(range(a.cols), size):
        at = a.take_cols(t)
        if (s @ at).rank() != at.rank():
            return False
    return True


def _recovery(a: FMatrix, sa: FMatrix) -> FMatrix:
    """R with a == R sa; exists when rank(sa) == rank(a)."""
    rows = []
    sat = sa.transpose()
    for k in range(a.rows):
        col = a.row_slice(k, k + 1).transpose()
        x = sat.solve(col)
        if x is None:
            raise SketchSamplingError("rowspace mismatch while building recovery")
        rows.append(x.transpose())
    if not rows:
        return FMatrix.zeros(a.field, 0, sa.rows)
    from .gf import vstack

    return vstack(rows)


def build_codec(
    code: NetworkCode, node: int, eps: int, seed: int = 0, retries: int = 32
) -> UpdateCodec:
    """Construct the update codec for one caching node of a network code."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    fs = code.fieldspec
    a, c, in_edges, offs = _node_blocks(code, node)
    if eps > 0 and fs.q < field_size_bound(eps, code.B):
        raise FieldTooSmallError(
            f"GF({fs.q}) is below the bound {field_size_bound(eps, code.B)} "
            f"for eps={eps}, B={code.B}"
        )
    rank_a = a.rank()
    gamma = min(2 * eps, rank_a)
    if gamma == 0:
        s = FMatrix.zeros(fs, 0, a.rows)
        h = {e: FMatrix.zeros(fs, 0, code.dims[e]) for e in in_edges}
        return UpdateCodec(
            node=node, fieldspec=fs, B=code.B, eps=eps, gamma=0, branch="trivial",
            A=a, S=s, H=h, R=None, in_edge_list=tuple(in_edges),
        )
    branch = "rank" if 2 * eps >= rank_a else "sparse"
    support = min(2 * eps, code.B)
    for attempt in range(retries):
        rng = np.random.default_rng(np.random.SeedSequence([seed, node, attempt]))
        s = FMatrix.random(fs, gamma, a.rows, rng)
        if branch == "rank":
            sa = s @ a
            if sa.rank() != rank_a:
                continue
            r = _recovery(a, sa)
        else:
            if not _supports_ok(s, a, support):
                continue
            r = None
        h = {
            e: s @ c.col_slice(offs[e], offs[e] + code.dims[e]) for e in in_edges
        }
        return UpdateCodec(
            node=node, fieldspec=fs, B=code.B, eps=eps, gamma=gamma, branch=branch,
            A=a, S=s, H=h, R=r, in_edge_list=tuple(in_edges), attempts=attempt + 1,
        )
    raise SketchSamplingError(
        f"no verifying sketch for node {node} after {retries} attempts over GF({fs.q})"
    )


def encode(codec: UpdateCodec, edge: int, y_edge: FMatrix, rnd: int = 0) -> Syndrome:
    """In-neighbor side: compress this round's edge symbols to gamma symbols."""
    if edge not in codec.H:
        raise KeyError(f"edge {edge} does not enter node {codec.node}")
    return Syndrome(node=codec.node, edge=edge, vec=codec.H[edge] @ y_edge, rnd=rnd)


def _sum_syndromes(codec: UpdateCodec, syndromes) -> FMatrix:
    if isinstance(syndromes, FMatrix):
        return syndromes
    seen = set()
    total = FMatrix.zeros(codec.fieldspec, codec.gamma, 1)
    for s in syndromes:
        if s.node != codec.node:
            raise ValueError(f"syndrome for node {s.node} fed to codec of {codec.node}")
        if s.edge in seen:
            raise ValueError(f"duplicate syndrome for edge {s.edge}")
        seen.add(s.edge)
        total = total + s.vec
    if seen != set(codec.in_edge_list):
        raise ValueError(f"expected syndromes for edges {codec.in_edge_list}, got {sorted(seen)}")
    return total


def decode(codec: UpdateCodec, syndromes, cache: FMatrix, strict: bool = False) -> FMatrix:
    """Caching node side: next cached output from syndromes and old cache.

    syndromes is either the summed gamma-column or one Syndrome per
    in-edge.  strict=True additionally checks that every consistent
    support of the smallest size agrees on the update.
    """
    if codec.branch == "trivial":
        _sum_syndromes(codec, syndromes)
        return cache
    if cache.shape != (codec.A.rows, 1):
        raise ValueError(f"cache shape {cache.shape} != ({codec.A.rows}, 1)")
    total = _sum_syndromes(codec, syndromes)
    if total.shape != (codec.gamma, 1):
        raise ValueError(f"syndrome shape {total.shape} != ({codec.gamma}, 1)")
    rho = total - codec.S @ cache
    if codec.branch == "rank":
        return cache + codec.R @ rho
    sa = codec.S @ codec.A
    zero = FMatrix.zeros(codec.fieldspec, codec.gamma, 1)
    if rho == zero:
        return cache
    update = None
    for size in range(1, codec.eps + 1):
        hits = []
        for t in itertools.combinations(range(codec.B), size):
            sat = sa.take_cols(t)
            z = sat.solve(rho)
            if z is None:
                continue
            delta = codec.A.take_cols(t) @ z
            if not strict:
                return cache + delta
            hits.append(delta)
        if hits:
            update = hits[0]
            if any(h != update for h in hits[1:]):
                raise DecodeAmbiguityError(
                    f"supports of size {size} disagree at node {codec.node}"
                )
            break
    if update is None:
        raise DecodeError(
            f"no error of weight <= {codec.eps} explains the residual at node {codec.node}"
        )
    return cache + update
