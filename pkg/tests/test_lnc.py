"""Network code construction and exact decodability."""

import numpy as np
import pytest

from cachecast.gf import FieldSpec, FMatrix, vstack
from cachecast.lnc import (
    CodeSamplingError,
    EdgeDims,
    InfeasibleDimsError,
    NetworkCode,
    build_code,
    decode_all,
    propagate,
    symbol_min_cut,
    transfer_matrices,
    verify_decoding,
)
from cachecast.network import load_topology
from cachecast.fixtures import load_fixture

F251 = FieldSpec(251)

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


def butterfly_code(seed=0, q=251):
    net = load_topology(UNIT_BUTTERFLY)
    dims = EdgeDims.uniform(net, 1)
    return build_code(net, FieldSpec(q), 2, dims, seed=seed)


def test_edge_dims():
    net = load_topology(UNIT_BUTTERFLY)
    d = EdgeDims.uniform(net, 2)
    assert len(d) == 9 and d[0] == 2
    r = EdgeDims.from_rates(net, [0.0, 1.0, 1.5, 2.0 + 1e-12, 3.0, 0.2, 1.0, 1.0, 1.0])
    assert r.dims == (0, 1, 2, 2, 3, 1, 1, 1, 1)
    halves = EdgeDims.from_rates(net, [3.0] * 9, per_symbol=2.0)
    assert halves.dims == (2,) * 9
    with pytest.raises(ValueError):
        EdgeDims((1, -1))
    with pytest.raises(ValueError):
        EdgeDims((1.0,) * 9)


def test_symbol_min_cut():
    net = load_topology(UNIT_BUTTERFLY)
    assert symbol_min_cut(net, EdgeDims.uniform(net, 1), 6) == 2
    assert symbol_min_cut(net, EdgeDims.uniform(net, 3), 7) == 6


def test_butterfly_code_decodes():
    code = butterfly_code()
    assert code.received[6].rank() == 2
    assert code.received[7].rank() == 2
    m = FMatrix.column(F251, [17, 101])
    assert verify_decoding(code, m)
    dec = decode_all(code, m)
    assert dec[6] == m and dec[7] == m


def test_butterfly_code_many_frames():
    code = butterfly_code(seed=5)
    rng = np.random.default_rng(9)
    frames = FMatrix.random(F251, 2, 100, rng)
    assert verify_decoding(code, frames)


def test_infeasible_dims_rejected():
    net = load_topology(UNIT_BUTTERFLY)
    with pytest.raises(InfeasibleDimsError, match="below B"):
        build_code(net, F251, 3, EdgeDims.uniform(net, 1))


def test_retry_budget_exhaustion():
    net = load_topology(UNIT_BUTTERFLY)
    with pytest.raises(CodeSamplingError, match="GF\\(251\\)"):
        build_code(net, F251, 2, EdgeDims.uniform(net, 1), retries=0)


def test_source_transfer_is_its_matrix():
    code = butterfly_code(seed=3)
    assert code.transfer[1] == code.coeffs[1]
    assert code.transfer[1].shape == (2, 2)


def test_transfer_blocks_partition_node_output():
    code = butterfly_code(seed=1)
    net = code.net
    for i in range(1, 6):
        blocks = [code.edge_transfer(e) for e in net.out_edges(i)]
        assert vstack(blocks) == code.transfer[i]


def test_received_equals_stacked_in_transfers():
    code = butterfly_code(seed=2)
    for t in (6, 7):
        assert code.node_input_transfer(t) == code.received[t]


def test_propagation_matches_transfer_algebra():
    code = butterfly_code(seed=7)
    rng = np.random.default_rng(0)
    m = FMatrix.random(F251, 2, 5, rng)
    outputs, inputs = propagate(code, m)
    for i in range(1, 6):
        assert outputs[i] == code.transfer[i] @ m
    for t in (6, 7):
        assert inputs[t] == code.received[t] @ m


def test_determinism_and_seed_sensitivity():
    a = butterfly_code(seed=11)
    b = butterfly_code(seed=11)
    c = butterfly_code(seed=12)
    assert a.coeffs == b.coeffs and a.attempts == b.attempts
    assert any(a.coeffs[i] != c.coeffs[i] for i in a.coeffs)


def test_single_edge_code():
    net = load_topology("nodes 2 1\nedge 1 2 4\n")
    code = build_code(net, F251, 3, EdgeDims.uniform(net, 3), seed=1)
    m = FMatrix.column(F251, [5, 0, 250])
    assert decode_all(code, m)[2] == m
    assert code.received[2] == code.transfer[1]


def test_oversized_dims_still_decode():
    # More symbols than strictly needed must not hurt decodability.
    net = load_fixture("service")
    dims = EdgeDims.uniform(net, 5)
    code = build_code(net, FieldSpec(37), 4, dims, seed=0)
    rng = np.random.default_rng(4)
    m = FMatrix.random(FieldSpec(37), 4, 7, rng)
    assert verify_decoding(code, m)


def test_transfer_matrices_keys():
    code = butterfly_code(seed=4)
    tm = transfer_matrices(code)
    assert set(tm) == set(code.net.edges)
    assert tm[(1, 2)].shape == (1, 2)


def test_zero_dim_edge_allowed():
    net = load_topology("nodes 4 1\nedge 1 2 2\nedge 1 3 2\nedge 2 4 2\nedge 3 4 2\n")
    dims = EdgeDims((2, 0, 2, 0))
    code = build_code(net, F251, 2, dims, seed=0)
    m = FMatrix.column(F251, [9, 30])
    assert decode_all(code, m)[4] == m
    assert code.edge_transfer(1).shape == (0, 2)
