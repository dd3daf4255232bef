import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bpec import gf
from conftest import peasant_mul

POLY = {4: 0x13, 8: 0x11D, 16: 0x1100B}


@pytest.mark.parametrize("m", [4, 8])
def test_full_product_table_matches_shift_and_add(m):
    f = gf.field(m)
    a = np.arange(f.q)
    got = f.mul(a[:, None], a[None, :])
    want = np.array([[peasant_mul(x, y, m, POLY[m]) for y in range(f.q)] for x in range(f.q)])
    assert np.array_equal(got, want)


@given(st.integers(0, 0xFFFF), st.integers(0, 0xFFFF))
def test_gf16_products_match_shift_and_add(a, b):
    assert gf.gf_mul(a, b, 16) == peasant_mul(a, b, 16, POLY[16])


def test_powers_of_two_in_gf256():
    # the usual 0x11D exponent table, as printed in Reed-Solomon references
    f = gf.field(8)
    head = [f.pow(2, k) for k in range(16)]
    assert head == [1, 2, 4, 8, 16, 32, 64, 128, 29, 58, 116, 232, 205, 135, 19, 38]
    assert f.pow(2, 255) == 1


@pytest.mark.parametrize("m", [4, 8, 16])
def test_inverses(m):
    f = gf.field(m)
    a = np.arange(1, f.q)
    assert np.all(f.mul(a, f.inv(a)) == 1)
    with pytest.raises(ZeroDivisionError):
        f.inv(0)


def test_unsupported_exponent():
    with pytest.raises(ValueError):
        gf.GF(5)


def test_asvec_range_check():
    with pytest.raises(ValueError):
        gf.field(4).asvec([3, 16])


def _span_size(rows, m):
    """Count distinct combinations by brute force; equals q ** rank."""
    q = 1 << m
    seen = set()
    for coeffs in itertools.product(range(q), repeat=len(rows)):
        acc = [0] * len(rows[0])
        for c, row in zip(coeffs, rows):
            for k, x in enumerate(row):
                acc[k] ^= peasant_mul(c, int(x), m, POLY[m])
        seen.add(tuple(acc))
    return len(seen)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(0, 15), min_size=3, max_size=3), min_size=1, max_size=3))
def test_rank_against_span_enumeration(rows):
    r = gf.rank(rows, gf.field(4))
    assert 16 ** r == _span_size(rows, 4)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1), st.sampled_from([4, 8, 16]))
def test_solve_recovers_unknowns(d, seed, m):
    f = gf.field(m)
    rng = np.random.default_rng(seed)
    while True:
        B = f.random_vector(rng, d, d)
        if gf.rank(list(B), f) == d:
            break
    X = f.random_vector(rng, d, 3)
    rhs = f.matmul(B, X)
    got = gf.solve_linear_system(list(zip(B, rhs)), f)
    assert np.array_equal(np.array(got), X)


def test_solve_rejects_singular():
    f = gf.field(8)
    B = np.array([[1, 2], [2, 4]], dtype=np.uint8)   # second row is 2 x first
    with pytest.raises(gf.SingularMatrix):
        gf.solve_linear_system([(B[0], [1]), (B[1], [0])], f)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_swap_check_agrees_with_rank(d, seed):
    f = gf.field(4)
    rng = np.random.default_rng(seed)
    basis = list(np.eye(d, dtype=np.uint8))
    new = f.random_vector(rng, d)
    k = int(rng.integers(d))
    swapped = basis[:k] + [new] + basis[k + 1:]
    # replacing e_k keeps a basis exactly when the new vector has a nonzero k-th entry
    assert gf.is_basis_after_swap(basis, basis[k], new, f) == (new[k] != 0)
    assert gf.is_basis_after_swap(basis, basis[k], new, f) == (gf.rank(swapped, f) == d)


def test_row_reduce_is_reduced_echelon():
    f = gf.field(8)
    rng = np.random.default_rng(3)
    M = f.random_vector(rng, 4, 6)
    M[2] = f.combine([3, 7], M[:2])   # force rank 3
    R, piv = f.row_reduce(M)
    assert len(piv) == 3
    for r, c in enumerate(piv):
        col = R[:, c]
        assert col[r] == 1 and np.count_nonzero(col) == 1
    assert not R[3].any()


def test_combine_and_dot():
    f = gf.field(8)
    rows = np.array([[1, 0, 5], [0, 1, 7]], dtype=np.uint8)
    out = f.combine([2, 3], rows)
    assert list(out) == [2, 3, peasant_mul(2, 5, 8, POLY[8]) ^ peasant_mul(3, 7, 8, POLY[8])]
    assert f.dot(np.array([2, 3]), np.array([5, 7])) == out[2]
