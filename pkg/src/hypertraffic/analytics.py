"""Network quantities of a traffic window and multi-scale aggregation."""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Iterator

from .matrix import (
    MatrixError,
    SparseVector,
    TrafficMatrix,
    add,
    col_sums,
    max_entry,
    row_sums,
    sum_all,
    zero_norm,
)


@dataclass(frozen=True)
class NetworkQuantities:
    """Scalar aggregates of one traffic window, all exact counts."""

    valid_packets: int = 0
    unique_links: int = 0
    max_link_packets: int = 0
    unique_sources: int = 0
    max_source_packets: int = 0
    max_source_fanout: int = 0
    unique_destinations: int = 0
    max_destination_packets: int = 0
    max_destination_fanin: int = 0

    def check_invariants(self) -> None:
        """Assert the ordering relations every traffic matrix satisfies."""
        q = self
        assert q.unique_links <= q.valid_packets
        assert q.unique_sources <= q.unique_links
        assert q.unique_destinations <= q.unique_links
        assert q.max_source_fanout <= q.unique_destinations
        assert q.max_destination_fanin <= q.unique_sources
        assert q.max_link_packets <= q.max_source_packets
        assert q.max_link_packets <= q.max_destination_packets

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))


@dataclass(frozen=True)
class QuantityVectors:
    """Per-id quantities; computed on demand because they scale with the id count."""

    link_packets: TrafficMatrix
    source_packets: SparseVector
    source_fanout: SparseVector
    destination_packets: SparseVector
    destination_fanin: SparseVector


def compute_quantities(A: TrafficMatrix) -> NetworkQuantities:
    links = zero_norm(A)
    src_pkts = row_sums(A)
    dst_pkts = col_sums(A)
    fanout = row_sums(links)
    fanin = col_sums(links)
    return NetworkQuantities(
        valid_packets=sum_all(A),
        unique_links=sum_all(links),
        max_link_packets=max_entry(A),
        unique_sources=src_pkts.nnz,
        max_source_packets=src_pkts.max(),
        max_source_fanout=fanout.max(),
        unique_destinations=dst_pkts.nnz,
        max_destination_packets=dst_pkts.max(),
        max_destination_fanin=fanin.max(),
    )


def compute_vectors(A: TrafficMatrix) -> QuantityVectors:
    links = zero_norm(A)
    # destination packets are plain column sums; fan-in is column sums of the zero-norm
    return QuantityVectors(A, row_sums(A), row_sums(links), col_sums(A), col_sums(links))


class HierarchicalAggregator:
    """Pairwise summation of consecutive windows across ``levels`` levels.

    Level 0 holds the input windows. A level-``k`` window is the sum of two
    consecutive level-``k-1`` windows, so it spans ``2**k`` inputs. An odd
    window waits at its level for a partner; it is never merged unevenly.
    """

    def __init__(self, levels: int):
        if levels < 0:
            raise ValueError("levels must be non-negative")
        self.levels = levels
        self._carry: list[TrafficMatrix | None] = [None] * (levels + 1)
        self._count = [0] * (levels + 1)
        self._shape = None

    def push(self, A: TrafficMatrix) -> Iterator[tuple[int, int, TrafficMatrix]]:
        """Add one level-0 window; yields every ``(level, index, matrix)`` it completes."""
        if self._shape is None:
            self._shape = A.shape
        elif A.shape != self._shape:
            raise MatrixError(f"dimension mismatch: {A.shape} vs {self._shape}")
        level, M = 0, A
        while True:
            idx = self._count[level]
            self._count[level] += 1
            yield level, idx, M
            if level == self.levels:
                return
            held = self._carry[level]
            if held is None:
                self._carry[level] = M
                return
            self._carry[level] = None
            level, M = level + 1, add(held, M)

    @property
    def remainders(self) -> list[tuple[int, TrafficMatrix]]:
        return [(k, M) for k, M in enumerate(self._carry) if M is not None]


def hierarchical_aggregate(windows: Iterable[TrafficMatrix], levels: int) -> list[list[TrafficMatrix]]:
    """All windows at every level ``0..levels``, in arrival order."""
    agg = HierarchicalAggregator(levels)
    out: list[list[TrafficMatrix]] = [[] for _ in range(levels + 1)]
    for W in windows:
        for level, _idx, M in agg.push(W):
            out[level].append(M)
    return out


def hierarchical_quantities(windows: Iterable[TrafficMatrix], levels: int):
    """Yield ``(level, index, NetworkQuantities)`` without keeping every level in memory."""
    agg = HierarchicalAggregator(levels)
    for W in windows:
        for level, idx, M in agg.push(W):
            yield level, idx, compute_quantities(M)


# -- reports ------------------------------------------------------------------

TSV_COLUMNS = ("level", "window_index", "nv", "unique_links", "max_link", "unique_src",
               "max_src_pkts", "max_src_fanout", "unique_dst", "max_dst_pkts", "max_dst_fanin")
_FIELD_FOR = dict(zip(TSV_COLUMNS[2:], (f.name for f in fields(NetworkQuantities))))


def quantities_report(rows, format: str = "tsv") -> str:
    """Render ``(level, window_index, NetworkQuantities)`` rows as TSV or JSON.

    A bare list of :class:`NetworkQuantities` is treated as level 0, in order.
    """
    rows = [(0, k, r) if isinstance(r, NetworkQuantities) else r for k, r in enumerate(rows)]
    if format == "tsv":
        buf = io.StringIO()
        buf.write("\t".join(TSV_COLUMNS) + "\n")
        for level, idx, q in rows:
            vals = [level, idx] + [getattr(q, _FIELD_FOR[c]) for c in TSV_COLUMNS[2:]]
            buf.write("\t".join(str(v) for v in vals) + "\n")
        return buf.getvalue()
    if format == "json":
        return json.dumps({"columns": list(TSV_COLUMNS),
                           "rows": [dict(level=level, window_index=idx, **asdict(q))
                                    for level, idx, q in rows]}, indent=1) + "\n"
    raise ValueError(f"unknown report format {format!r}")


def parse_quantities_tsv(text: str) -> list[tuple[int, int, NetworkQuantities]]:
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != TSV_COLUMNS:
        raise ValueError("missing or unexpected quantities header")
    out = []
    for line in lines[1:]:
        vals = dict(zip(TSV_COLUMNS, (int(v) for v in line.split("\t"))))
        q = NetworkQuantities(**{_FIELD_FOR[c]: vals[c] for c in TSV_COLUMNS[2:]})
        out.append((vals["level"], vals["window_index"], q))
    return out
