"""Field and matrix layer tests.

Random-matrix rank results are cross-checked against sympy's DomainMatrix
rref over GF(q), an independent elimination implementation.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cachecast.gf import (
    FieldSpec,
    FMatrix,
    field_size_bound,
    hstack,
    is_prime,
    mat_mul,
    next_prime,
    rank,
    smallest_valid_prime,
    solve,
    vstack,
)

F5 = FieldSpec(5)
F251 = FieldSpec(251)


def sympy_rank(mat: FMatrix) -> int:
    from sympy import GF, Matrix
    from sympy.polys.matrices import DomainMatrix

    m = DomainMatrix.from_Matrix(Matrix(mat.a.tolist())).convert_to(GF(mat.field.q))
    return len(m.rref()[1])


def rnd(field, rows, cols, seed):
    return FMatrix.random(field, rows, cols, np.random.default_rng(seed))


def test_primes():
    assert [n for n in range(2, 40) if is_prime(n)] == [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37]
    assert next_prime(32) == 37
    assert next_prime(37) == 37


def test_field_bound():
    assert field_size_bound(1, 4) == 32
    assert smallest_valid_prime(1, 4) == 37
    assert field_size_bound(2, 4) == 1024
    assert smallest_valid_prime(2, 4) == 1031
    assert field_size_bound(1, 8) == 128
    assert smallest_valid_prime(1, 8) == 131
    assert field_size_bound(0, 4) == 2
    assert smallest_valid_prime(0, 4) == 2


def test_field_validation():
    with pytest.raises(ValueError):
        FieldSpec(6)
    with pytest.raises(ValueError):
        FieldSpec(2**31 + 11)
    assert FieldSpec(2).inv(1) == 1
    assert F251.inv(2) * 2 % 251 == 1
    with pytest.raises(ZeroDivisionError):
        F5.inv(0)


def test_immutability():
    m = FMatrix.identity(F5, 3)
    with pytest.raises(ValueError):
        m.a[0, 0] = 2
    with pytest.raises(AttributeError):
        m.a = None


def test_matmul_hand_value():
    a = FMatrix(F5, [[1, 2], [3, 4]])
    b = FMatrix(F5, [[2, 0], [1, 3]])
    assert (a @ b) == FMatrix(F5, [[4, 1], [0, 2]])
    assert mat_mul(a, FMatrix.identity(F5, 2)) == a
    assert (a @ FMatrix.zeros(F5, 2, 2)) == FMatrix.zeros(F5, 2, 2)


def test_matmul_shape_errors():
    a = FMatrix.zeros(F5, 2, 3)
    with pytest.raises(ValueError):
        a @ a
    with pytest.raises(ValueError):
        a @ FMatrix.zeros(F251, 3, 2)


def test_matmul_large_modulus_chunking():
    # Near-cap modulus: products are ~2^61 per term, forcing chunked sums.
    f = FieldSpec(next_prime(2**30))
    rng = np.random.default_rng(0)
    a = FMatrix(f, np.full((2, 64), f.q - 1, dtype=np.int64))
    b = FMatrix(f, np.full((64, 2), f.q - 1, dtype=np.int64))
    expect = 64 * (f.q - 1) * (f.q - 1) % f.q
    assert np.all((a @ b).a == expect)
    c = FMatrix.random(f, 3, 200, rng)
    d = FMatrix.random(f, 200, 3, rng)
    slow = np.zeros((3, 3), dtype=object)
    for i in range(3):
        for j in range(3):
            slow[i, j] = sum(int(x) * int(y) for x, y in zip(c.a[i], d.a[:, j])) % f.q
    assert np.array_equal((c @ d).a, slow.astype(np.int64))


def test_rank_examples():
    assert FMatrix.identity(F5, 4).rank() == 4
    dup = FMatrix(F5, [[1, 2, 3], [2, 4, 6], [0, 1, 1]])
    assert dup.rank() == 2
    assert FMatrix.zeros(F5, 3, 3).rank() == 0


def test_rank_against_sympy():
    for seed in range(30):
        rng = np.random.default_rng(seed)
        r, c = rng.integers(1, 7, size=2)
        m = FMatrix.random(F5 if seed % 2 else F251, int(r), int(c), rng)
        assert m.rank() == sympy_rank(m)
        assert rank(m) == rank(m.transpose())


def test_rref_idempotent_and_pivots():
    m = rnd(F251, 5, 7, 3)
    red, piv = m.rref()
    again, piv2 = red.rref()
    assert red == again and piv == piv2
    for row, c in enumerate(piv):
        col = red.a[:, c]
        assert col[row] == 1 and np.count_nonzero(col) == 1


def test_solve_identity_and_inconsistent():
    b = FMatrix.column(F5, [1, 2, 3])
    x = FMatrix.identity(F5, 3).solve(b)
    assert x == b
    a = FMatrix(F5, [[1, 0], [1, 0]])
    assert a.solve(FMatrix.column(F5, [1, 2])) is None


def test_solve_roundtrip_random():
    for seed in range(25):
        rng = np.random.default_rng(100 + seed)
        rows = int(rng.integers(1, 7))
        cols = int(rng.integers(1, 7))
        a = FMatrix.random(F251, rows, cols, rng)
        x0 = FMatrix.random(F251, cols, 1, rng)
        b = a @ x0
        x = solve(a, b)
        assert x is not None
        assert (a @ x) == b


def test_left_inverse():
    a = rnd(F251, 6, 3, 7)
    if a.rank() == 3:
        li = a.left_inverse()
        assert (li @ a) == FMatrix.identity(F251, 3)
    wide = FMatrix.zeros(F5, 2, 4)
    assert wide.left_inverse() is None
    sq = FMatrix(F5, [[2, 1], [1, 1]])
    inv = sq.inverse()
    assert (inv @ sq) == FMatrix.identity(F5, 2)
    assert FMatrix(F5, [[1, 1], [2, 2]]).inverse() is None


def test_stacking_and_slices():
    a = FMatrix(F5, [[1, 2]])
    b = FMatrix(F5, [[3, 4]])
    v = vstack([a, b])
    assert v == FMatrix(F5, [[1, 2], [3, 4]])
    h = hstack([a.transpose(), b.transpose()])
    assert h == v.transpose()
    assert v.row_slice(1, 2) == b
    assert v.col_slice(0, 1) == FMatrix(F5, [[1], [3]])
    assert v.take_cols([1]) == FMatrix(F5, [[2], [4]])


small = st.integers(min_value=1, max_value=5)
elems = st.integers(min_value=0, max_value=10**6)


@st.composite
def triple(draw):
    r, k, c = draw(small), draw(small), draw(small)
    f = FieldSpec(draw(st.sampled_from([2, 5, 251, 1031])))
    def mk(rr, cc):
        return FMatrix(f, [[draw(elems) for _ in range(cc)] for _ in range(rr)])
    return mk(r, k), mk(k, c), mk(c, r)


@settings(max_examples=60, deadline=None)
@given(triple())
def test_matmul_associative(ms):
    a, b, c = ms
    assert ((a @ b) @ c) == (a @ (b @ c))


@settings(max_examples=60, deadline=None)
@given(triple())
def test_matmul_distributive(ms):
    a, b, _ = ms
    b2 = b.scale(3)
    assert (a @ (b + b2)) == ((a @ b) + (a @ b2))


@settings(max_examples=60, deadline=None)
@given(triple())
def test_rank_transpose_property(ms):
    a = ms[0]
    assert a.rank() == a.transpose().rank()
    assert a.rank() <= min(a.shape)
