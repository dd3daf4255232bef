"""Arithmetic over GF(2^m) and the small amount of dense linear algebra the
coders need (rank, basis exchange test, square solve).

Elements are plain integers in ``[0, 2^m)``; vectors and matrices are numpy
integer arrays.  Addition is XOR.  Multiplication goes through log/antilog
tables, with a full product table for m <= 8 since it is small and fast.

Reduction polynomials (the usual choices):

    m = 4   x^4 + x + 1                 0x13
    m = 8   x^8 + x^4 + x^3 + x^2 + 1   0x11D
    m = 16  x^16 + x^12 + x^3 + x + 1   0x1100B

x (the element 2) is primitive for all three.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

POLYNOMIALS = {4: 0x13, 8: 0x11D, 16: 0x1100B}


class SingularMatrix(ValueError):
    """Raised when a system handed to :func:`solve_linear_system` is rank deficient."""


def clmul_mod(a: int, b: int, m: int, poly: int) -> int:
    """Carry-less product of ``a`` and ``b`` reduced modulo ``poly`` (bitwise reference)."""
    r = 0
    top = 1 << m
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & top:
            a ^= poly
    return r


class GF:
    """The field GF(2^m) for m in {4, 8, 16}."""

    def __init__(self, m: int = 8):
        if m not in POLYNOMIALS:
            raise ValueError(f"unsupported field exponent m={m}; choose one of {sorted(POLYNOMIALS)}")
        self.m = m
        self.q = 1 << m
        self.poly = POLYNOMIALS[m]
        self.dtype = np.uint16 if m > 8 else np.uint8

        order = self.q - 1
        exp = np.zeros(2 * order, dtype=np.int64)
        log = np.full(self.q, -1, dtype=np.int64)
        x = 1
        for k in range(order):
            exp[k] = x
            log[x] = k
            x = clmul_mod(x, 2, m, self.poly)
        if x != 1 or np.count_nonzero(log >= 0) != order:
            raise RuntimeError("generator is not primitive for the chosen polynomial")
        exp[order:] = exp[:order]
        self._exp = exp
        self._log = log
        self._order = order

        inv = np.zeros(self.q, dtype=np.int64)
        inv[1:] = exp[(order - log[1:]) % order]
        self._inv = inv

        self._table = None
        if m <= 8:
            a = np.arange(self.q)
            la = log[a]
            t = exp[(la[:, None] + la[None, :]) % order]
            t[0, :] = 0
            t[:, 0] = 0
            self._table = t.astype(self.dtype)

    def __repr__(self) -> str:
        return f"GF(2^{self.m})"

    def __eq__(self, other) -> bool:
        return isinstance(other, GF) and other.m == self.m

    def __hash__(self) -> int:
        return hash(("GF", self.m))

    # -- scalar / elementwise ------------------------------------------------

    def mul(self, a, b):
        """Elementwise product; broadcasts like numpy."""
        if self._table is not None:
            return self._table[a, b]
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        out = self._exp[(self._log[a] + self._log[b]) % self._order]
        return np.where((a == 0) | (b == 0), 0, out).astype(self.dtype)

    def inv(self, a):
        a_arr = np.asarray(a)
        if np.any(a_arr == 0):
            raise ZeroDivisionError("0 has no multiplicative inverse")
        out = self._inv[a_arr]
        return int(out) if out.ndim == 0 else out.astype(self.dtype)

    def div(self, a, b):
        return self.mul(a, self.inv(b))

    def pow(self, a: int, e: int) -> int:
        if a == 0:
            return 0 if e > 0 else 1
        return int(self._exp[(self._log[a] * e) % self._order])

    # -- vectors ---------------------------------------------------------------

    def zeros(self, *shape) -> np.ndarray:
        return np.zeros(shape, dtype=self.dtype)

    def unit(self, d: int, k: int) -> np.ndarray:
        e = self.zeros(d)
        e[k] = 1
        return e

    def asvec(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.int64)
        if v.size and (v.min() < 0 or v.max() >= self.q):
            raise ValueError(f"values outside GF(2^{self.m})")
        return v.astype(self.dtype)

    def scale(self, c: int, v: np.ndarray) -> np.ndarray:
        return self.mul(c, v)

    def dot(self, a: np.ndarray, b: np.ndarray) -> int:
        if len(a) == 0:
            return 0
        return int(np.bitwise_xor.reduce(self.mul(a, b)))

    def combine(self, coeffs, rows) -> np.ndarray:
        """Return sum_k coeffs[k] * rows[k]."""
        rows = np.asarray(rows)
        coeffs = np.asarray(coeffs, dtype=np.int64)
        if rows.shape[0] == 0:
            return self.zeros(*rows.shape[1:])
        return np.bitwise_xor.reduce(self.mul(coeffs[:, None], rows), axis=0)

    def matmul(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        A = np.asarray(A)
        B = np.asarray(B)
        if A.shape[1] == 0:
            return self.zeros(A.shape[0], B.shape[1])
        return np.bitwise_xor.reduce(self.mul(A[:, :, None], B[None, :, :]), axis=1)

    def random_vector(self, rng: np.random.Generator, *shape) -> np.ndarray:
        return rng.integers(0, self.q, size=shape).astype(self.dtype)

    # -- elimination -------------------------------------------------------------

    def row_reduce(self, M: np.ndarray, ncols: int | None = None):
        """Reduced row echelon form of ``M`` pivoting only on the first ``ncols``
        columns.  Returns ``(R, pivots)``."""
        R = np.array(M, dtype=self.dtype, copy=True)
        if R.ndim != 2:
            raise ValueError("row_reduce expects a 2-D array")
        rows, cols = R.shape
        ncols = cols if ncols is None else ncols
        pivots: list[int] = []
        r = 0
        for c in range(ncols):
            if r == rows:
                break
            nz = np.flatnonzero(R[r:, c])
            if nz.size == 0:
                continue
            p = r + int(nz[0])
            if p != r:
                R[[r, p]] = R[[p, r]]
            R[r] = self.mul(self._inv[R[r, c]], R[r])
            hit = np.flatnonzero(R[:, c])
            hit = hit[hit != r]
            if hit.size:
                R[hit] ^= self.mul(R[hit, c][:, None], R[r][None, :])
            pivots.append(c)
            r += 1
        return R, pivots


@lru_cache(maxsize=None)
def field(m: int = 8) -> GF:
    """Shared, cached field instance."""
    return GF(m)


def gf_mul(a: int, b: int, m: int = 8) -> int:
    return int(field(m).mul(a, b))


def gf_inv(a: int, m: int = 8) -> int:
    return int(field(m).inv(a))


def _stack(vectors: Sequence, f: GF) -> np.ndarray:
    vecs = [np.asarray(v) for v in vectors]
    if not vecs:
        return f.zeros(0, 0)
    d = len(vecs[0])
    if any(len(v) != d for v in vecs):
        raise ValueError("all vectors must have the same length")
    return np.array(vecs, dtype=f.dtype).reshape(len(vecs), d)


def rank(vectors: Sequence, f: GF | None = None) -> int:
    """Rank over GF(2^m) of a list of equal-length vectors."""
    f = f or field(8)
    M = _stack(vectors, f)
    if M.size == 0:
        return 0
    return len(f.row_reduce(M)[1])


def _same(a, b) -> bool:
    return a is b or (len(a) == len(b) and np.array_equal(np.asarray(a), np.asarray(b)))


def is_basis_after_swap(basis: Sequence, remove, add, f: GF | None = None) -> bool:
    """True iff ``(basis - {remove}) + {add}`` still has ``len(basis)`` independent vectors."""
    f = f or field(8)
    idx = next((k for k, v in enumerate(basis) if _same(v, remove)), None)
    if idx is None:
        raise ValueError("vector to remove is not an element of the basis")
    swapped = list(basis)
    swapped[idx] = add
    return rank(swapped, f) == len(basis)


def solve_linear_system(equations: Iterable, f: GF | None = None) -> list[np.ndarray]:
    """Solve ``sum_j b_k[j] * u_j = rhs_k`` for the unknown packets u_1..u_d.

    ``equations`` is a sequence of ``(b, rhs)`` pairs; there must be exactly
    d of them and the coefficient matrix must be invertible.
    """
    f = f or field(8)
    eqs = list(equations)
    if not eqs:
        return []
    B = _stack([b for b, _ in eqs], f)
    rhs = _stack([r for _, r in eqs], f)
    d = B.shape[1]
    if B.shape[0] != d:
        raise SingularMatrix(f"need exactly {d} equations, got {B.shape[0]}")
    R, pivots = f.row_reduce(np.hstack([B, rhs]), ncols=d)
    if len(pivots) < d:
        raise SingularMatrix(f"coefficient matrix has rank {len(pivots)} < {d}")
    return [R[k, d:].copy() for k in range(d)]
