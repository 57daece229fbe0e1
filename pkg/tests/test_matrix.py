import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypertraffic.analytics import compute_quantities
from hypertraffic.matrix import (
    MatrixError,
    RangeSet,
    TrafficMatrix,
    add,
    col_sums,
    exclude,
    from_triples,
    max_entry,
    row_sums,
    subrange,
    sum_all,
    vector_max,
    vector_nnz,
    zero_norm,
)
from oracles import dense_accumulate, dense_diag_product, per_source_distinct

N = 256


def random_triples(rng, n, dim=N, max_count=5):
    r = rng.integers(0, dim, n)
    c = rng.integers(0, dim, n)
    v = rng.integers(0, max_count + 1, n)
    return list(zip(r.tolist(), c.tolist(), v.tolist()))


triples_strategy = st.lists(
    st.tuples(st.integers(0, 31), st.integers(0, 31), st.integers(0, 1000)), max_size=200)


def test_duplicates_accumulate():
    A = from_triples([(1, 2, 1), (1, 2, 1)])
    assert A.to_dict() == {(1, 2): 2}
    assert A.nnz == 1


def test_empty():
    A = from_triples([])
    assert A.nnz == 0 and sum_all(A) == 0
    assert zero_norm(A).nnz == 0
    assert row_sums(A).nnz == 0 and col_sums(A).nnz == 0
    assert max_entry(A) == 0


def test_zero_counts_dropped():
    A = from_triples([(1, 1, 0), (2, 2, 3), (3, 3, 0)])
    assert A.to_dict() == {(2, 2): 3}


def test_out_of_range_names_triple():
    with pytest.raises(MatrixError, match=r"triple 1 \(5, 300, 1\)"):
        TrafficMatrix.from_triples([(0, 0, 1), (5, 300, 1)], 256, 256)
    with pytest.raises(MatrixError):
        TrafficMatrix.from_triples([(0, 0, -1)], 4, 4)


def test_random_matches_dense_accumulation(rng):
    t = random_triples(rng, 10_000)
    A = from_triples(t, N, N)
    D = dense_accumulate(t, N, N)
    np.testing.assert_array_equal(A.to_dense(), D)
    assert sum_all(A) == D.sum()
    assert max_entry(A) == D.max()


def test_storage_is_proportional_to_nnz():
    A = TrafficMatrix.from_triples([(2**32 - 1, 2**32 - 1, 3), (0, 7, 1)])
    assert A.shape == (2**32, 2**32)
    assert A.rows.nbytes + A.cols.nbytes + A.vals.nbytes == 2 * 16


def test_sum_all_small():
    assert sum_all(from_triples([(k, k + 1, 1) for k in range(5)])) == 5


def test_zero_norm_counts_distinct_pairs(rng):
    src = rng.integers(0, 64, 5000)
    dst = rng.integers(0, 64, 5000)
    A = TrafficMatrix.from_pairs(src, dst, 64, 64)
    assert zero_norm(from_triples([(1, 2, 5)])).to_dict() == {(1, 2): 1}
    assert sum_all(zero_norm(A)) == len(set(zip(src.tolist(), dst.tolist())))


def test_row_col_sums_example():
    A = from_triples([(0, 1, 2), (0, 2, 1), (3, 1, 4)])
    assert row_sums(A).to_dict() == {0: 3, 3: 4}
    assert col_sums(A).to_dict() == {1: 6, 2: 1}
    assert max_entry(A) == 4
    assert vector_max(row_sums(A)) == 4 and vector_nnz(col_sums(A)) == 2


def test_fanout_matches_distinct_destinations(rng):
    src = rng.integers(0, 50, 3000)
    dst = rng.integers(0, 50, 3000)
    A = TrafficMatrix.from_pairs(src, dst, 50, 50)
    expected = per_source_distinct(zip(src.tolist(), dst.tolist()))
    assert row_sums(zero_norm(A)).to_dict() == expected


def test_add():
    A = from_triples([(1, 1, 1)])
    assert add(A, TrafficMatrix.empty()) == A
    assert add(A, from_triples([(1, 1, 2)])).to_dict() == {(1, 1): 3}
    with pytest.raises(MatrixError):
        add(TrafficMatrix.empty(4, 4), TrafficMatrix.empty(8, 8))


def test_add_detects_overflow():
    big = from_triples([(0, 0, 2**63)])
    with pytest.raises(OverflowError):
        add(big, big)


def test_64_blocks_sum_to_window():
    rng = np.random.default_rng(3)
    blocks = [TrafficMatrix.from_pairs(rng.integers(0, 2**32, 2**17, dtype=np.uint64),
                                       rng.integers(0, 2**32, 2**17, dtype=np.uint64))
              for _ in range(64)]
    assert all(sum_all(b) == 131072 for b in blocks)
    assert sum_all(add(*blocks)) == 8388608


def test_subrange_exclude_trivial(rng):
    A = from_triples(random_triples(rng, 500), N, N)
    assert subrange(A, RangeSet.full(N)) == A
    assert subrange(A, RangeSet()).nnz == 0
    assert exclude(A, RangeSet()) == A
    assert exclude(A, RangeSet.full(N)).nnz == 0


def test_subrange_matches_diagonal_product(rng):
    for _ in range(20):
        t = random_triples(rng, 800)
        ids = rng.choice(N, rng.integers(0, N), replace=False).tolist()
        A = from_triples(t, N, N)
        r = RangeSet.from_ids(ids)
        D = dense_accumulate(t, N, N)
        np.testing.assert_array_equal(subrange(A, r).to_dense(), dense_diag_product(D, ids))
        assert add(subrange(A, r), exclude(A, r)) == A


def test_rangeset_parse():
    r = RangeSet.parse("10.0.0.0/30, 5, 100-102")
    assert r.intervals == [(5, 5), (100, 102), (167772160, 167772163)]
    assert 167772161 in r and 6 not in r
    assert len(RangeSet.parse("")) == 0
    with pytest.raises(ValueError):
        RangeSet.parse("1.2.3")
    with pytest.raises(ValueError):
        RangeSet.parse("9-x")


def test_rangeset_merges_adjacent():
    assert RangeSet([(0, 3), (4, 9), (2, 5)]).intervals == [(0, 9)]
    assert RangeSet.from_ids([1, 2, 3, 7]).intervals == [(1, 3), (7, 7)]


def test_immutable():
    A = from_triples([(1, 1, 1)])
    with pytest.raises(AttributeError):
        A.rows = None
    with pytest.raises(ValueError):
        A.vals[0] = 5


@settings(max_examples=60, deadline=None)
@given(triples_strategy)
def test_zero_norm_idempotent(t):
    A = from_triples(t, 32, 32)
    assert zero_norm(zero_norm(A)) == zero_norm(A)


@settings(max_examples=60, deadline=None)
@given(triples_strategy, st.sets(st.integers(0, 31)))
def test_reconstruction_identity(t, ids):
    A = from_triples(t, 32, 32)
    r = RangeSet.from_ids(ids)
    assert add(subrange(A, r), exclude(A, r)) == A


@settings(max_examples=60, deadline=None)
@given(triples_strategy, st.permutations(list(range(32))))
def test_scalar_quantities_permutation_invariant(t, perm):
    A = from_triples(t, 32, 32)
    assert compute_quantities(A.permute(np.array(perm))) == compute_quantities(A)


@settings(max_examples=60, deadline=None)
@given(triples_strategy, triples_strategy)
def test_add_conserves_sum(a, b):
    A, B = from_triples(a, 32, 32), from_triples(b, 32, 32)
    assert sum_all(add(A, B)) == sum_all(A) + sum_all(B)
    np.testing.assert_array_equal(add(A, B).to_dense(),
                                  dense_accumulate(a + b, 32, 32).astype(np.uint64))
