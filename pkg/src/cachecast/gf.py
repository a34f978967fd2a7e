"""Prime-field matrix arithmetic used by the network and update codecs.

All symbols live in GF(q) for a prime q.  Matrices are immutable wrappers
around int64 numpy arrays holding canonical representatives in [0, q).
Elimination uses first-nonzero pivoting so every reduction is deterministic.

The modulus is capped at 2**31 so that a product of two canonical
representatives fits comfortably in int64; accumulated dot products are
reduced in chunks sized to keep partial sums below 2**62.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_MODULUS = 2**31


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for n < 3.3e24."""
    if n < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def next_prime(n: int) -> int:
    """Smallest prime >= n."""
    c = max(2, int(n))
    while not is_prime(c):
        c += 1
    return c


def field_size_bound(eps: int, B: int) -> int:
    """Update codecs need q >= 2*eps*B**(2*eps); returns that bound (>= 2)."""
    if eps < 0 or B < 1:
        raise ValueError("need eps >= 0 and B >= 1")
    return max(2, 2 * eps * B ** (2 * eps))


def smallest_valid_prime(eps: int, B: int) -> int:
    """Smallest prime meeting the update-codec field bound for (eps, B)."""
    return next_prime(field_size_bound(eps, B))


@dataclass(frozen=True)
class FieldSpec:
    """A prime field GF(q)."""

    q: int

    def __post_init__(self):
        if not is_prime(self.q):
            raise ValueError(f"modulus {self.q} is not prime")
        if self.q >= MAX_MODULUS:
            raise ValueError(f"modulus {self.q} exceeds the {MAX_MODULUS} cap")

    def inv(self, a: int) -> int:
        """Multiplicative inverse of a nonzero element."""
        a = int(a) % self.q
        if a == 0:
            raise ZeroDivisionError("0 has no inverse")
        return pow(a, self.q - 2, self.q)

    @property
    def bits_per_symbol(self) -> float:
        return float(np.log2(self.q))


def _accum_chunk(q: int) -> int:
    """Rows of the contraction axis that can be summed before reducing."""
    return max(1, (1 << 62) // ((q - 1) * (q - 1) + 1))


class FMatrix:
    """Immutable 2-D matrix over a prime field.

    Arithmetic returns new instances; the backing array is read-only.
    """

    __slots__ = ("field", "a")

    def __init__(self, field: FieldSpec, data):
        arr = np.asarray(data, dtype=np.int64) % field.q
        if arr.ndim != 2:
            raise ValueError("FMatrix is strictly 2-D")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "field", field)
        object.__setattr__(self, "a", arr)

    def __setattr__(self, name, value):
        raise AttributeError("FMatrix is immutable")

    # -- constructors -----------------------------------------------------

    @classmethod
    def zeros(cls, field: FieldSpec, rows: int, cols: int) -> "FMatrix":
        return cls(field, np.zeros((rows, cols), dtype=np.int64))

    @classmethod
    def identity(cls, field: FieldSpec, n: int) -> "FMatrix":
        return cls(field, np.eye(n, dtype=np.int64))

    @classmethod
    def random(cls, field: FieldSpec, rows: int, cols: int, rng) -> "FMatrix":
        return cls(field, rng.integers(0, field.q, size=(rows, cols), dtype=np.int64))

    @classmethod
    def column(cls, field: FieldSpec, entries) -> "FMatrix":
        return cls(field, np.asarray(entries, dtype=np.int64).reshape(-1, 1))

    # -- shape and access -------------------------------------------------

    @property
    def shape(self):
        return self.a.shape

    @property
    def rows(self) -> int:
        return self.a.shape[0]

    @property
    def cols(self) -> int:
        return self.a.shape[1]

    def row_slice(self, lo: int, hi: int) -> "FMatrix":
        return FMatrix(self.field, self.a[lo:hi, :])

    def col_slice(self, lo: int, hi: int) -> "FMatrix":
        return FMatrix(self.field, self.a[:, lo:hi])

    def take_cols(self, idx) -> "FMatrix":
        return FMatrix(self.field, self.a[:, list(idx)])

    def transpose(self) -> "FMatrix":
        return FMatrix(self.field, self.a.T)

    def vector(self) -> np.ndarray:
        """Flat copy of a single-column (or single-row) matrix."""
        if 1 not in self.a.shape:
            raise ValueError("not a vector")
        return self.a.reshape(-1).copy()

    # -- ring operations --------------------------------------------------

    def _check(self, other: "FMatrix"):
        if self.field.q != other.field.q:
            raise ValueError("field mismatch")

    def __add__(self, other: "FMatrix") -> "FMatrix":
        self._check(other)
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return FMatrix(self.field, self.a + other.a)

    def __sub__(self, other: "FMatrix") -> "FMatrix":
        self._check(other)
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return FMatrix(self.field, self.a - other.a)

    def __neg__(self) -> "FMatrix":
        return FMatrix(self.field, -self.a)

    def scale(self, c: int) -> "FMatrix":
        return FMatrix(self.field, self.a * (int(c) % self.field.q))

    def __matmul__(self, other: "FMatrix") -> "FMatrix":
        self._check(other)
        if self.cols != other.rows:
            raise ValueError(f"inner dims {self.cols} vs {other.rows}")
        q = self.field.q
        k = self.cols
        chunk = _accum_chunk(q)
        if k <= chunk:
            prod = (self.a @ other.a) % q
        else:
            prod = np.zeros((self.rows, other.cols), dtype=np.int64)
            for lo in range(0, k, chunk):
                hi = min(lo + chunk, k)
                prod = (prod + self.a[:, lo:hi] @ other.a[lo:hi, :]) % q
        return FMatrix(self.field, prod)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FMatrix):
            return NotImplemented
        return (
            self.field.q == other.field.q
            and self.shape == other.shape
            and bool(np.array_equal(self.a, other.a))
        )

    def __hash__(self):
        return hash((self.field.q, self.a.tobytes(), self.shape))

    def __repr__(self):
        return f"FMatrix(GF({self.field.q}), {self.a.tolist()})"

    # -- elimination ------------------------------------------------------

    def rref(self):
        """Reduced row echelon form.

        Returns (R, pivots) where pivots lists the pivot column of each
        nonzero row.  Pivot choice is the first row with a nonzero entry in
        the scanned column, making the reduction deterministic.
        """
        q = self.field.q
        m = self.a.copy()
        rows, cols = m.shape
        pivots = []
        r = 0
        for c in range(cols):
            if r == rows:
                break
            nz = np.nonzero(m[r:, c])[0]
            if nz.size == 0:
                continue
            p = r + int(nz[0])
            if p != r:
                m[[r, p], :] = m[[p, r], :]
            inv = pow(int(m[r, c]), q - 2, q)
            m[r, :] = m[r, :] * inv % q
            hit = np.nonzero(m[:, c])[0]
            hit = hit[hit != r]
            if hit.size:
                m[hit, :] = (m[hit, :] - np.outer(m[hit, c], m[r, :])) % q
            pivots.append(c)
            r += 1
        return FMatrix(self.field, m), pivots

    def rank(self) -> int:
        return len(self.rref()[1])

    def solve(self, b: "FMatrix"):
        """Solve self @ x = b for a single column b.

        Returns the column x with free variables set to zero, or None when
        the system is inconsistent.
        """
        self._check(b)
        if b.cols != 1 or b.rows != self.rows:
            raise ValueError("b must be a column matching the row count")
        aug = FMatrix(self.field, np.hstack([self.a, b.a]))
        red, pivots = aug.rref()
        n = self.cols
        if n in pivots:
            return None
        x = np.zeros(n, dtype=np.int64)
        for row, c in enumerate(pivots):
            x[c] = red.a[row, n]
        return FMatrix.column(self.field, x)

    def left_inverse(self):
        """Matrix L with L @ self == identity, or None if rank < cols.

        Built from the rref of [self | I]; requires full column rank.
        """
        n = self.cols
        aug = FMatrix(self.field, np.hstack([self.a, np.eye(self.rows, dtype=np.int64)]))
        red, pivots = aug.rref()
        lead = [c for c in pivots if c < n]
        if len(lead) < n:
            return None
        return FMatrix(self.field, red.a[:n, n:])

    def inverse(self):
        """Two-sided inverse of a square matrix, or None if singular."""
        if self.rows != self.cols:
            raise ValueError("inverse needs a square matrix")
        return self.left_inverse()


def mat_mul(a: FMatrix, b: FMatrix) -> FMatrix:
    return a @ b


def rank(a: FMatrix) -> int:
    return a.rank()


def solve(a: FMatrix, b: FMatrix):
    return a.solve(b)


def hstack(parts) -> FMatrix:
    parts = list(parts)
    f = parts[0].field
    return FMatrix(f, np.hstack([p.a for p in parts]))


def vstack(parts) -> FMatrix:
    parts = list(parts)
    f = parts[0].field
    return FMatrix(f, np.vstack([p.a for p in parts]))
