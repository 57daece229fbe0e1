"""Independent brute-force oracles. Nothing here imports the sparse code paths."""

from __future__ import annotations

from collections import Counter, defaultdict

import numpy as np


def dense_accumulate(triples, n_rows, n_cols):
    D = np.zeros((n_rows, n_cols), dtype=np.int64)
    for r, c, v in triples:
        D[r, c] += v
    return D


def dense_quantities(D) -> dict:
    """Every scalar in the summation-notation column, evaluated on a dense array."""
    D = np.asarray(D, dtype=np.int64)
    L = (D != 0).astype(np.int64)
    src = D.sum(axis=1)
    dst = D.sum(axis=0)
    fanout = L.sum(axis=1)
    fanin = L.sum(axis=0)
    return {
        "valid_packets": int(D.sum()),
        "unique_links": int(L.sum()),
        "max_link_packets": int(D.max()) if D.size else 0,
        "unique_sources": int((src != 0).sum()),
        "max_source_packets": int(src.max()) if src.size else 0,
        "max_source_fanout": int(fanout.max()) if fanout.size else 0,
        "unique_destinations": int((dst != 0).sum()),
        "max_destination_packets": int(dst.max()) if dst.size else 0,
        "max_destination_fanin": int(fanin.max()) if fanin.size else 0,
    }


def dense_vectors(D) -> dict:
    D = np.asarray(D, dtype=np.int64)
    L = (D != 0).astype(np.int64)

    def nz(v):
        return {int(i): int(v[i]) for i in np.flatnonzero(v)}

    return {
        "source_packets": nz(D.sum(axis=1)),
        "source_fanout": nz(L.sum(axis=1)),
        "destination_packets": nz(D.sum(axis=0)),
        "destination_fanin": nz(L.sum(axis=0)),
    }


def dense_diag_product(D, ids):
    """``D_r @ D @ D_r`` with an explicit 0/1 diagonal matrix."""
    n = D.shape[0]
    Dr = np.zeros((n, n), dtype=np.int64)
    for i in ids:
        Dr[i, i] = 1
    return Dr @ D.astype(np.int64) @ Dr


def cooccurrence(records, field_a, field_b):
    """Pairwise co-occurrence counts by direct enumeration of records."""
    out = Counter()
    for rec in records:
        if field_a in rec and field_b in rec:
            out[(rec[field_a], rec[field_b])] += 1
    return dict(out)


def lcp(a: int, b: int, bits: int = 32) -> int:
    for k in range(bits):
        shift = bits - 1 - k
        if (a >> shift) & 1 != (b >> shift) & 1:
            return k
    return bits


def per_source_distinct(pairs):
    seen = defaultdict(set)
    for s, d in pairs:
        seen[s].add(d)
    return {s: len(v) for s, v in seen.items()}
