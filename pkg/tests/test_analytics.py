import json
from dataclasses import asdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypertraffic.analytics import (
    HierarchicalAggregator,
    NetworkQuantities,
    compute_quantities,
    compute_vectors,
    hierarchical_aggregate,
    hierarchical_quantities,
    parse_quantities_tsv,
    quantities_report,
)
from hypertraffic.matrix import MatrixError, TrafficMatrix, add, from_triples
from hypertraffic.sources import SyntheticSource
from oracles import dense_accumulate, dense_quantities, dense_vectors

EXAMPLE = [(0, 1, 2), (0, 2, 1), (3, 1, 4)]


def test_worked_example():
    q = compute_quantities(from_triples(EXAMPLE))
    expected = dict(valid_packets=7, unique_links=3, max_link_packets=4, unique_sources=2,
                    max_source_packets=4, max_source_fanout=2, unique_destinations=2,
                    max_destination_packets=6, max_destination_fanin=2)
    assert asdict(q) == expected
    assert dense_quantities(dense_accumulate(EXAMPLE, 4, 3)) == expected


def test_empty_all_zero():
    assert compute_quantities(TrafficMatrix.empty()) == NetworkQuantities()


def test_vectors_match_oracle(rng):
    t = list(zip(*(rng.integers(0, 64, 2000).tolist() for _ in range(2)), [1] * 2000))
    v = compute_vectors(from_triples(t, 64, 64))
    expected = dense_vectors(dense_accumulate(t, 64, 64))
    assert v.source_packets.to_dict() == expected["source_packets"]
    assert v.source_fanout.to_dict() == expected["source_fanout"]
    assert v.destination_packets.to_dict() == expected["destination_packets"]
    assert v.destination_fanin.to_dict() == expected["destination_fanin"]


def test_window_valid_packets_equals_block():
    chunk = next(iter(SyntheticSource(2**17, chunk_size=2**17)))
    assert compute_quantities(TrafficMatrix.from_pairs(chunk.src, chunk.dst)).valid_packets == 2**17


triples = st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15), st.integers(1, 50)), max_size=80)


@settings(max_examples=100, deadline=None)
@given(triples)
def test_ordering_invariants(t):
    q = compute_quantities(from_triples(t, 16, 16))
    q.check_invariants()
    assert asdict(q) == dense_quantities(dense_accumulate(t, 16, 16))


@settings(max_examples=60, deadline=None)
@given(triples, triples)
def test_additivity_and_monotonicity(a, b):
    A, B = from_triples(a, 16, 16), from_triples(b, 16, 16)
    qa, qs = compute_quantities(A), compute_quantities(add(A, B))
    assert qs.valid_packets == qa.valid_packets + compute_quantities(B).valid_packets
    for name in ("max_link_packets", "max_source_packets", "max_source_fanout",
                 "max_destination_packets", "max_destination_fanin"):
        assert getattr(qs, name) >= getattr(qa, name)


def _windows(n, size, seed=0):
    src = SyntheticSource(n * size, seed=seed, chunk_size=size)
    return [TrafficMatrix.from_pairs(c.src, c.dst) for c in src]


def test_two_windows_one_level():
    ws = [from_triples([(0, 1, 4)]), from_triples([(2, 3, 4)])]
    levels = hierarchical_aggregate(ws, 1)
    assert len(levels[1]) == 1 and compute_quantities(levels[1][0]).valid_packets == 8


def test_subadditive_unique_links():
    ws = _windows(8, 500, seed=1)
    levels = hierarchical_aggregate(ws, 3)
    for k in range(1, 4):
        for j, M in enumerate(levels[k]):
            parts = levels[k - 1][2 * j:2 * j + 2]
            assert compute_quantities(M).unique_links <= sum(compute_quantities(P).unique_links for P in parts)


def test_top_level_equals_whole_stream():
    chunks = list(SyntheticSource(64 * 2048, seed=9, chunk_size=2048))
    ws = [TrafficMatrix.from_pairs(c.src, c.dst) for c in chunks]
    levels = hierarchical_aggregate(ws, 6)
    assert [len(l) for l in levels] == [64, 32, 16, 8, 4, 2, 1]
    whole = TrafficMatrix.from_pairs(np.concatenate([c.src for c in chunks]),
                                     np.concatenate([c.dst for c in chunks]))
    assert levels[6][0] == whole
    assert [compute_quantities(l[0]).valid_packets for l in levels] == [2048 * 2**k for k in range(7)]


def test_odd_windows_carry_remainder():
    ws = _windows(5, 100)
    agg = HierarchicalAggregator(2)
    out = [(lvl, idx) for W in ws for lvl, idx, _ in agg.push(W)]
    assert sorted(out) == [(0, i) for i in range(5)] + [(1, 0), (1, 1), (2, 0)]
    assert [k for k, _ in agg.remainders] == [0]


def test_dimension_mismatch():
    with pytest.raises(MatrixError):
        hierarchical_aggregate([TrafficMatrix.empty(4, 4), TrafficMatrix.empty(8, 8)], 1)


def test_report_tsv_roundtrip():
    rows = list(hierarchical_quantities(_windows(4, 300), 2))
    text = quantities_report(rows, "tsv")
    lines = text.splitlines()
    assert lines[0] == ("level\twindow_index\tnv\tunique_links\tmax_link\tunique_src\tmax_src_pkts"
                        "\tmax_src_fanout\tunique_dst\tmax_dst_pkts\tmax_dst_fanin")
    assert parse_quantities_tsv(text) == rows


def test_report_empty_and_constant_nv():
    assert quantities_report([], "tsv").count("\n") == 1
    qs = [compute_quantities(W) for W in _windows(3, 256)]
    lines = quantities_report(qs).splitlines()[1:]
    assert len(lines) == 3 and {l.split("\t")[2] for l in lines} == {"256"}


def test_report_json():
    qs = [compute_quantities(from_triples(EXAMPLE))]
    doc = json.loads(quantities_report(qs, "json"))
    assert doc["rows"][0]["max_destination_packets"] == 6
    with pytest.raises(ValueError):
        quantities_report(qs, "xml")
