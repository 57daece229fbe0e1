"""Hypersparse traffic matrices.

A :class:`TrafficMatrix` stores packet counts keyed by (source, destination)
as three parallel arrays sorted row-major. Storage is proportional to the
number of stored entries; the nominal dimensions (``2**32`` for IPv4 traffic)
are never materialized.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ADDRESS_SPACE = 1 << 32
_U64_MAX = (1 << 64) - 1


class MatrixError(ValueError):
    """Raised for invalid matrix construction or incompatible operands."""


def _segment_sum(vals: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Sum ``vals`` over segments beginning at ``starts``, refusing to wrap."""
    if len(vals) == 0:
        return np.zeros(0, dtype=np.uint64)
    out = np.add.reduceat(vals, starts)
    approx = np.add.reduceat(vals.astype(np.float64), starts)
    # float sums are exact to ~1e-16 relative, so anything below 2**63 cannot have wrapped
    suspect = np.flatnonzero(approx >= 2.0**63)
    if len(suspect):
        ends = np.append(starts[1:], len(vals))
        for k in suspect:
            exact = sum(int(v) for v in vals[starts[k]:ends[k]])
            if exact > _U64_MAX:
                raise OverflowError(f"packet count overflows uint64 at segment {k}")
    return out


@dataclass(frozen=True)
class SparseVector:
    """Sparse vector of counts indexed by 32-bit ids (sorted, no zeros)."""

    ids: np.ndarray
    vals: np.ndarray
    dim: int = ADDRESS_SPACE

    @property
    def nnz(self) -> int:
        return len(self.ids)

    def max(self) -> int:
        return int(self.vals.max()) if len(self.vals) else 0

    def sum(self) -> int:
        return int(self.vals.sum(dtype=np.uint64)) if len(self.vals) else 0

    def to_dict(self) -> dict[int, int]:
        return dict(zip(self.ids.tolist(), self.vals.tolist()))

    def __len__(self) -> int:
        return self.nnz


def vector_max(v: SparseVector) -> int:
    return v.max()


def vector_nnz(v: SparseVector) -> int:
    return v.nnz


class TrafficMatrix:
    """Immutable hypersparse matrix of unsigned 64-bit packet counts.

    Entries are kept as ``rows``, ``cols`` (uint32) and ``vals`` (uint64),
    sorted by ``(row, col)`` with no duplicates and no stored zeros.
    Use :meth:`from_triples` or :meth:`from_pairs` to build one.
    """

    __slots__ = ("rows", "cols", "vals", "row_dim", "col_dim")

    def __init__(self, rows, cols, vals, row_dim: int = ADDRESS_SPACE,
                 col_dim: int = ADDRESS_SPACE, *, _canonical: bool = False):
        if not (0 < row_dim <= ADDRESS_SPACE and 0 < col_dim <= ADDRESS_SPACE):
            raise MatrixError(f"dimensions must be in (0, 2**32], got {row_dim}x{col_dim}")
        rows = np.asarray(rows, dtype=np.uint32)
        cols = np.asarray(cols, dtype=np.uint32)
        vals = np.asarray(vals, dtype=np.uint64)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise MatrixError("rows, cols and vals must be 1-D arrays of equal length")
        if not _canonical:
            rows, cols, vals = _canonicalize(rows, cols, vals)
        for arr in (rows, cols, vals):
            arr.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "vals", vals)
        object.__setattr__(self, "row_dim", int(row_dim))
        object.__setattr__(self, "col_dim", int(col_dim))

    def __setattr__(self, name, value):
        raise AttributeError("TrafficMatrix is immutable")

    # -- construction -------------------------------------------------------

    @classmethod
    def from_triples(cls, triples: Iterable[Sequence[int]], row_dim: int = ADDRESS_SPACE,
                     col_dim: int = ADDRESS_SPACE) -> "TrafficMatrix":
        """Build a matrix from ``(row, col, count)`` triples.

        Duplicate keys accumulate, zero counts are dropped.

        Raises
        ------
        MatrixError
            If an id is outside the dimensions or a count is negative. The
            message names the offending triple.
        """
        triples = list(triples)
        for k, t in enumerate(triples):
            r, c, v = (int(x) for x in t)
            if not (0 <= r < row_dim and 0 <= c < col_dim):
                raise MatrixError(f"triple {k} {tuple(t)!r} out of range for {row_dim}x{col_dim}")
            if not 0 <= v <= _U64_MAX:
                raise MatrixError(f"triple {k} {tuple(t)!r} has invalid count")
        if not triples:
            return cls.empty(row_dim, col_dim)
        rows, cols, vals = zip(*triples)
        return cls(np.array(rows, dtype=np.uint64).astype(np.uint32),
                   np.array(cols, dtype=np.uint64).astype(np.uint32),
                   np.array([int(v) for v in vals], dtype=np.uint64), row_dim, col_dim)

    @classmethod
    def from_pairs(cls, src, dst, row_dim: int = ADDRESS_SPACE,
                   col_dim: int = ADDRESS_SPACE) -> "TrafficMatrix":
        """Build a matrix counting one packet per ``(src[k], dst[k])`` pair."""
        src = np.asarray(src)
        dst = np.asarray(dst)
        if src.shape != dst.shape:
            raise MatrixError("src and dst must have the same length")
        if len(src) == 0:
            return cls.empty(row_dim, col_dim)
        if (src.min() < 0 or dst.min() < 0 or int(src.max()) >= row_dim
                or int(dst.max()) >= col_dim):
            raise MatrixError(f"address out of range for {row_dim}x{col_dim}")
        keys = (src.astype(np.uint64) << np.uint64(32)) | dst.astype(np.uint64)
        uniq, counts = np.unique(keys, return_counts=True)
        return cls((uniq >> np.uint64(32)).astype(np.uint32),
                   (uniq & np.uint64(0xFFFFFFFF)).astype(np.uint32),
                   counts.astype(np.uint64), row_dim, col_dim, _canonical=True)

    @classmethod
    def empty(cls, row_dim: int = ADDRESS_SPACE, col_dim: int = ADDRESS_SPACE) -> "TrafficMatrix":
        z = np.zeros(0, dtype=np.uint32)
        return cls(z, z, np.zeros(0, dtype=np.uint64), row_dim, col_dim, _canonical=True)

    @classmethod
    def from_dense(cls, dense) -> "TrafficMatrix":
        dense = np.asarray(dense)
        r, c = np.nonzero(dense)
        return cls(r, c, dense[r, c].astype(np.uint64), dense.shape[0], dense.shape[1])

    # -- views --------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.row_dim, self.col_dim)

    @property
    def nnz(self) -> int:
        return len(self.vals)

    def triples(self) -> list[tuple[int, int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.vals.tolist()))

    def to_dict(self) -> dict[tuple[int, int], int]:
        return {(r, c): v for r, c, v in self.triples()}

    def to_dense(self) -> np.ndarray:
        if self.row_dim * self.col_dim > 1 << 24:
            raise MatrixError(f"refusing to densify a {self.row_dim}x{self.col_dim} matrix")
        out = np.zeros(self.shape, dtype=np.uint64)
        out[self.rows, self.cols] = self.vals
        return out

    def transpose(self) -> "TrafficMatrix":
        return TrafficMatrix(self.cols, self.rows, self.vals, self.col_dim, self.row_dim)

    def permute(self, mapping) -> "TrafficMatrix":
        """Relabel both rows and columns through ``mapping`` (array or callable)."""
        if callable(mapping):
            return TrafficMatrix(mapping(self.rows), mapping(self.cols), self.vals,
                                 self.row_dim, self.col_dim)
        mapping = np.asarray(mapping)
        return TrafficMatrix(mapping[self.rows], mapping[self.cols], self.vals,
                             self.row_dim, self.col_dim)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrafficMatrix):
            return NotImplemented
        return (self.shape == other.shape and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.cols, other.cols)
                and np.array_equal(self.vals, other.vals))

    __hash__ = None

    def __add__(self, other: "TrafficMatrix") -> "TrafficMatrix":
        return add(self, other)

    def __repr__(self) -> str:
        return f"TrafficMatrix(shape={self.shape}, nnz={self.nnz}, sum={sum_all(self)})"


def _canonicalize(rows, cols, vals):
    if len(rows) == 0:
        return rows, cols, vals
    keys = (rows.astype(np.uint64) << np.uint64(32)) | cols.astype(np.uint64)
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    vals = vals[order]
    starts = np.flatnonzero(np.concatenate(([True], keys[1:] != keys[:-1])))
    summed = _segment_sum(vals, starts)
    keys = keys[starts]
    keep = summed != 0
    keys, summed = keys[keep], summed[keep]
    return ((keys >> np.uint64(32)).astype(np.uint32),
            (keys & np.uint64(0xFFFFFFFF)).astype(np.uint32), summed)


def from_triples(triples, row_dim: int = ADDRESS_SPACE, col_dim: int = ADDRESS_SPACE) -> TrafficMatrix:
    return TrafficMatrix.from_triples(triples, row_dim, col_dim)


def sum_all(A: TrafficMatrix) -> int:
    """Total of all entries (the window's valid packet count)."""
    return int(A.vals.sum(dtype=np.uint64)) if A.nnz else 0


def zero_norm(A: TrafficMatrix) -> TrafficMatrix:
    """Same pattern as ``A`` with every stored value set to 1."""
    return TrafficMatrix(A.rows, A.cols, np.ones(A.nnz, dtype=np.uint64),
                         A.row_dim, A.col_dim, _canonical=True)


def _reduce_by(ids: np.ndarray, vals: np.ndarray, dim: int) -> SparseVector:
    if len(ids) == 0:
        return SparseVector(np.zeros(0, dtype=np.uint32), np.zeros(0, dtype=np.uint64), dim)
    order = np.argsort(ids, kind="stable")
    ids = ids[order]
    starts = np.flatnonzero(np.concatenate(([True], ids[1:] != ids[:-1])))
    return SparseVector(ids[starts], _segment_sum(vals[order], starts), dim)


def row_sums(A: TrafficMatrix) -> SparseVector:
    """``A 1``: per-row totals, keyed by row id."""
    if A.nnz == 0:
        return _reduce_by(A.rows, A.vals, A.row_dim)
    # rows are already sorted
    starts = np.flatnonzero(np.concatenate(([True], A.rows[1:] != A.rows[:-1])))
    return SparseVector(A.rows[starts], _segment_sum(A.vals, starts), A.row_dim)


def col_sums(A: TrafficMatrix) -> SparseVector:
    """``1^T A``: per-column totals, keyed by column id."""
    return _reduce_by(A.cols, A.vals, A.col_dim)


def max_entry(A: TrafficMatrix) -> int:
    return int(A.vals.max()) if A.nnz else 0


def _check_same_shape(A: TrafficMatrix, B: TrafficMatrix) -> None:
    if A.shape != B.shape:
        raise MatrixError(f"dimension mismatch: {A.shape} vs {B.shape}")


def add(A: TrafficMatrix, B: TrafficMatrix, *more: TrafficMatrix) -> TrafficMatrix:
    """Element-wise sum of two or more matrices of equal shape."""
    mats = (A, B) + more
    for M in mats[1:]:
        _check_same_shape(A, M)
    mats = [M for M in mats if M.nnz]
    if not mats:
        return TrafficMatrix.empty(A.row_dim, A.col_dim)
    if len(mats) == 1:
        return mats[0]
    return TrafficMatrix(np.concatenate([M.rows for M in mats]),
                         np.concatenate([M.cols for M in mats]),
                         np.concatenate([M.vals for M in mats]), A.row_dim, A.col_dim)


def sum_matrices(mats: Sequence[TrafficMatrix]) -> TrafficMatrix:
    if not mats:
        raise MatrixError("cannot sum an empty list of matrices")
    if len(mats) == 1:
        return mats[0]
    return add(*mats)


# -- address ranges -----------------------------------------------------------


class RangeSet:
    """Set of 32-bit ids stored as sorted, disjoint, inclusive intervals.

    Acts as the 0/1 diagonal selector used by :func:`subrange` and
    :func:`exclude` without ever materializing a diagonal matrix.
    """

    __slots__ = ("starts", "ends")

    def __init__(self, intervals: Iterable[tuple[int, int]] = ()):
        spans = []
        for lo, hi in intervals:
            lo, hi = int(lo), int(hi)
            if not (0 <= lo <= hi < ADDRESS_SPACE):
                raise ValueError(f"invalid interval [{lo}, {hi}]")
            spans.append((lo, hi))
        spans.sort()
        merged: list[list[int]] = []
        for lo, hi in spans:
            if merged and lo <= merged[-1][1] + 1:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        self.starts = np.array([m[0] for m in merged], dtype=np.uint64)
        self.ends = np.array([m[1] for m in merged], dtype=np.uint64)

    @classmethod
    def from_ids(cls, ids: Iterable[int]) -> "RangeSet":
        ids = np.unique(np.asarray(list(ids), dtype=np.int64))
        if len(ids) == 0:
            return cls()
        breaks = np.flatnonzero(np.diff(ids) != 1)
        lo = np.concatenate(([0], breaks + 1))
        hi = np.concatenate((breaks, [len(ids) - 1]))
        return cls(zip(ids[lo].tolist(), ids[hi].tolist()))

    @classmethod
    def full(cls, dim: int = ADDRESS_SPACE) -> "RangeSet":
        return cls([(0, dim - 1)])

    @classmethod
    def parse(cls, text: str) -> "RangeSet":
        """Parse a comma-separated list of ids, ``lo-hi`` spans and CIDR blocks.

        Ids may be decimal or dotted-quad: ``"10.0.0.0/8,167772160-167772200,7"``.
        An empty string yields the empty set.
        """
        spans = []
        for part in filter(None, (p.strip() for p in text.split(","))):
            try:
                if "/" in part:
                    net = ipaddress.IPv4Network(part, strict=False)
                    spans.append((int(net.network_address), int(net.broadcast_address)))
                elif "-" in part:
                    lo, hi = part.split("-", 1)
                    spans.append((_parse_id(lo), _parse_id(hi)))
                else:
                    v = _parse_id(part)
                    spans.append((v, v))
            except ValueError as exc:
                raise ValueError(f"malformed range element {part!r}: {exc}") from None
        return cls(spans)

    def contains(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.uint64)
        if len(self.starts) == 0:
            return np.zeros(ids.shape, dtype=bool)
        k = np.searchsorted(self.starts, ids, side="right") - 1
        ok = k >= 0
        kk = np.where(ok, k, 0)
        return ok & (ids <= self.ends[kk])

    def __contains__(self, i: int) -> bool:
        return bool(self.contains(np.array([i]))[0])

    def __len__(self) -> int:
        return int((self.ends - self.starts + 1).sum()) if len(self.starts) else 0

    @property
    def intervals(self) -> list[tuple[int, int]]:
        return list(zip(self.starts.tolist(), self.ends.tolist()))

    def __repr__(self) -> str:
        return f"RangeSet({self.intervals})"


def _parse_id(text: str) -> int:
    text = text.strip()
    if "." in text:
        return int(ipaddress.IPv4Address(text))
    v = int(text)
    if not 0 <= v < ADDRESS_SPACE:
        raise ValueError(f"id {v} outside 32-bit range")
    return v


def _inside(A: TrafficMatrix, r: RangeSet) -> np.ndarray:
    return r.contains(A.rows) & r.contains(A.cols)


def _select(A: TrafficMatrix, mask: np.ndarray) -> TrafficMatrix:
    return TrafficMatrix(A.rows[mask], A.cols[mask], A.vals[mask], A.row_dim, A.col_dim,
                         _canonical=True)


def subrange(A: TrafficMatrix, r: RangeSet) -> TrafficMatrix:
    """Traffic with both endpoints in ``r`` (the product ``D_r A D_r``)."""
    return _select(A, _inside(A, r))


def exclude(A: TrafficMatrix, r: RangeSet) -> TrafficMatrix:
    """``A - D_r A D_r``: everything :func:`subrange` would keep is removed."""
    return _select(A, ~_inside(A, r))
