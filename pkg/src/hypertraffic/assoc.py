"""Associative arrays over string keys and the connection-log report.

An :class:`AssocArray` is a sparse count matrix whose row and column keys are
sorted, duplicate-free strings. Log records are exploded into an event array
``E`` with one row per record and one column per ``field|value`` pair;
co-occurrence tallies are then products such as ``E_user^T E_dst``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from scipy import sparse

FIELD_SEP = "|"
_ESC = "\\"


def escape(text: str) -> str:
    return text.replace(_ESC, _ESC + _ESC).replace(FIELD_SEP, _ESC + FIELD_SEP)


def unescape(text: str) -> str:
    out, it = [], iter(text)
    for ch in it:
        out.append(next(it, "") if ch == _ESC else ch)
    return "".join(out)


def encode_key(field_name: str, value: str) -> str:
    """``field|value`` with ``|`` and ``\\`` escaped on both sides."""
    return f"{escape(field_name)}{FIELD_SEP}{escape(value)}"


def decode_key(key: str) -> tuple[str, str]:
    i = 0
    while i < len(key):
        if key[i] == _ESC:
            i += 2
            continue
        if key[i] == FIELD_SEP:
            return unescape(key[:i]), unescape(key[i + 1:])
        i += 1
    raise ValueError(f"column key {key!r} has no unescaped {FIELD_SEP!r}")


def _key_array(keys) -> np.ndarray:
    keys = list(keys)
    return np.array(keys, dtype=str) if keys else np.zeros(0, dtype="<U1")


class AssocArray:
    """Sparse array of non-negative counts keyed by strings.

    Keys are kept sorted in code-point order; entries never store zero.
    """

    def __init__(self, row_keys, col_keys, data):
        self.row_keys = _key_array(row_keys)
        self.col_keys = _key_array(col_keys)
        data = sparse.csr_array(data, shape=(len(self.row_keys), len(self.col_keys)),
                                dtype=np.int64)
        data.eliminate_zeros()
        data.sort_indices()
        self.data = data

    @classmethod
    def from_triples(cls, triples: Iterable[tuple[str, str, int]]) -> "AssocArray":
        triples = list(triples)
        if not triples:
            return cls.empty()
        r, c, v = zip(*triples)
        rk, ri = np.unique(np.array(r, dtype=str), return_inverse=True)
        ck, ci = np.unique(np.array(c, dtype=str), return_inverse=True)
        vals = np.array(v, dtype=np.int64)
        if np.any(vals < 0):
            raise ValueError("associative array values must be non-negative counts")
        coo = sparse.coo_array((vals, (ri.ravel(), ci.ravel())), shape=(len(rk), len(ck)))
        return cls(rk, ck, coo.tocsr()).condense()

    @classmethod
    def empty(cls) -> "AssocArray":
        return cls([], [], sparse.csr_array((0, 0), dtype=np.int64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def nnz(self) -> int:
        return int(self.data.nnz)

    def triples(self) -> list[tuple[str, str, int]]:
        coo = self.data.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(str(self.row_keys[i]), str(self.col_keys[j]), int(v))
                for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order])]

    def to_dict(self) -> dict[tuple[str, str], int]:
        return {(r, c): v for r, c, v in self.triples()}

    def __getitem__(self, key: tuple[str, str]) -> int:
        r, c = key
        i = np.searchsorted(self.row_keys, r)
        j = np.searchsorted(self.col_keys, c)
        if i < len(self.row_keys) and self.row_keys[i] == r and j < len(self.col_keys) \
                and self.col_keys[j] == c:
            return int(self.data[i, j])
        return 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, AssocArray):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None

    def __repr__(self) -> str:
        return f"AssocArray(shape={self.shape}, nnz={self.nnz})"

    def condense(self) -> "AssocArray":
        """Drop row and column keys that hold no entries."""
        rows = np.flatnonzero(np.diff(self.data.indptr))
        cols = np.unique(self.data.indices)
        if len(rows) == len(self.row_keys) and len(cols) == len(self.col_keys):
            return self
        sub = self.data[rows][:, cols]
        return AssocArray(self.row_keys[rows], self.col_keys[cols], sub)

    def transpose(self) -> "AssocArray":
        return AssocArray(self.col_keys, self.row_keys, self.data.T.tocsr())

    @property
    def T(self) -> "AssocArray":
        return self.transpose()

    def zero_norm(self) -> "AssocArray":
        ones = self.data.copy()
        ones.data = np.ones_like(ones.data)
        return AssocArray(self.row_keys, self.col_keys, ones)

    def select_cols(self, prefix: str) -> "AssocArray":
        """Columns whose key starts with ``prefix`` (e.g. ``"userID|"``)."""
        keep = np.flatnonzero(np.char.startswith(self.col_keys, prefix)) if len(self.col_keys) \
            else np.zeros(0, dtype=int)
        return AssocArray(self.row_keys, self.col_keys[keep], self.data[:, keep]).condense()

    def row_sums(self) -> dict[str, int]:
        sums = np.asarray(self.data.sum(axis=1)).ravel()
        return {str(k): int(v) for k, v in zip(self.row_keys, sums) if v}

    def col_sums(self) -> dict[str, int]:
        sums = np.asarray(self.data.sum(axis=0)).ravel()
        return {str(k): int(v) for k, v in zip(self.col_keys, sums) if v}

    def relabel(self, rows=None, cols=None) -> "AssocArray":
        """Apply key-mapping functions; keys that collide are summed."""
        rows = rows or (lambda k: k)
        cols = cols or (lambda k: k)
        return AssocArray.from_triples((rows(r), cols(c), v) for r, c, v in self.triples())

    def strip_fields(self) -> "AssocArray":
        """Replace ``field|value`` keys by their values."""
        return self.relabel(lambda k: decode_key(k)[1], lambda k: decode_key(k)[1])


def _align_rows(E: AssocArray, universe: np.ndarray) -> sparse.csr_array:
    idx = np.searchsorted(universe, E.row_keys)
    coo = E.data.tocoo()
    return sparse.csr_array((coo.data, (idx[coo.row], coo.col)),
                            shape=(len(universe), E.shape[1]))


def transpose_multiply(Ea: AssocArray, Eb: AssocArray) -> AssocArray:
    """``Ea^T Eb``: entry ``(a, b)`` counts rows that hold both ``a`` and ``b``.

    Rows are matched by key; a row missing from one operand contributes zero.
    """
    universe = np.union1d(Ea.row_keys, Eb.row_keys)
    if len(universe) == 0:
        return AssocArray.empty()
    prod = _align_rows(Ea, universe).T @ _align_rows(Eb, universe)
    return AssocArray(Ea.col_keys, Eb.col_keys, prod).condense()


class ArrayTallies(NamedTuple):
    row_sums: dict[str, int]
    row_fanout: dict[str, int]
    col_sums: dict[str, int]
    col_fanin: dict[str, int]


def array_quantities(A: AssocArray) -> ArrayTallies:
    """Row/column sums of ``A`` and of its zero-norm."""
    Z = A.zero_norm()
    return ArrayTallies(A.row_sums(), Z.row_sums(), A.col_sums(), Z.col_sums())


# -- connection logs ----------------------------------------------------------


@dataclass(frozen=True)
class LogRecord:
    record_id: str
    fields: dict = field(default_factory=dict)


class LogFormatError(ValueError):
    pass


ID_COLUMNS = ("record_id", "id")


class LogParser:
    """Parses a tab-separated log whose first line names the fields.

    Lines whose field count differs from the header, or that repeat a
    record id, are skipped and counted in ``skipped``; more than
    ``error_budget`` of them raises :class:`LogFormatError`. Records without
    an id column get ``<date>-<line number>``.
    """

    def __init__(self, error_budget: int = 100, date: str = "day"):
        self.error_budget = error_budget
        self.date = date
        self.skipped = 0
        self.lines = 0

    def _bad(self, lineno: int, why: str) -> None:
        self.skipped += 1
        if self.skipped > self.error_budget:
            raise LogFormatError(f"line {lineno}: {why}; error budget of "
                                 f"{self.error_budget} exceeded")

    def parse(self, lines: Iterable[str]) -> list[LogRecord]:
        it = iter(lines)
        header_line = next(it, None)
        if header_line is None or not header_line.strip():
            raise LogFormatError("missing header line")
        header = header_line.rstrip("\r\n").split("\t")
        id_col = next((k for k, h in enumerate(header) if h in ID_COLUMNS), None)
        out: list[LogRecord] = []
        seen: set[str] = set()
        for lineno, line in enumerate(it, 2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            self.lines += 1
            parts = line.split("\t")
            if len(parts) != len(header):
                self._bad(lineno, f"expected {len(header)} fields, found {len(parts)}")
                continue
            rid = parts[id_col] if id_col is not None else f"{self.date}-{lineno}"
            if not rid or rid in seen:
                self._bad(lineno, f"missing or duplicate record id {rid!r}")
                continue
            seen.add(rid)
            vals = {h: v for k, (h, v) in enumerate(zip(header, parts)) if v and k != id_col}
            out.append(LogRecord(rid, vals))
        return out


def parse_log(source, error_budget: int = 100, date: str = "day") -> list[LogRecord]:
    """Parse TSV log text, a list of lines, or a path."""
    if isinstance(source, Path):
        with open(source, encoding="utf-8") as fh:
            return LogParser(error_budget, date).parse(fh)
    if isinstance(source, str):
        source = source.splitlines()
    return LogParser(error_budget, date).parse(source)


def explode(records: Iterable[LogRecord], fields: Iterable[str]) -> AssocArray:
    """Event array: ``E[record, field|value] = 1`` for each present field."""
    fields = list(fields)
    if not fields:
        raise ValueError("field subset must be non-empty")
    triples = [(r.record_id, encode_key(f, r.fields[f]), 1)
               for r in records for f in fields if f in r.fields]
    return AssocArray.from_triples(triples)


# -- daily report -------------------------------------------------------------


def top_k(tally: dict[str, int], k: int) -> list[tuple[str, int]]:
    """Largest counts first; ties go to the smaller key."""
    return sorted(tally.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


@dataclass
class DailyReport:
    date: str
    records: int
    distinct_users: int
    distinct_destinations: int
    connections: int
    top_users_by_connections: list
    top_users_by_destinations: list
    top_destinations_by_connections: list
    top_destinations_by_users: list
    parse_seconds: float = 0.0
    analyze_seconds: float = 0.0

    TABLES = ("top_users_by_connections", "top_users_by_destinations",
              "top_destinations_by_connections", "top_destinations_by_users")

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write("table\trank\tkey\tvalue\n")
        for name in ("records", "distinct_users", "distinct_destinations", "connections"):
            buf.write(f"summary\t0\t{name}\t{getattr(self, name)}\n")
        for table in self.TABLES:
            for rank, (key, value) in enumerate(getattr(self, table), 1):
                buf.write(f"{table}\t{rank}\t{key}\t{value}\n")
        return buf.getvalue()

    def to_text(self) -> str:
        out = [f"Connection report for {self.date}", "",
               f"records:               {self.records}",
               f"connections:           {self.connections}",
               f"distinct users:        {self.distinct_users}",
               f"distinct destinations: {self.distinct_destinations}"]
        for table in self.TABLES:
            out += ["", table.replace("_", " ") + ":"]
            rows = getattr(self, table)
            out += [f"  {rank:>3}  {key}  {value}" for rank, (key, value) in enumerate(rows, 1)]
            if not rows:
                out.append("  (none)")
        return "\n".join(out) + "\n"

    def write(self, outdir) -> tuple[Path, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        txt = outdir / f"report_{self.date}.txt"
        tsv = outdir / f"report_{self.date}.tsv"
        txt.write_text(self.to_text(), encoding="utf-8")
        tsv.write_text(self.to_tsv(), encoding="utf-8")
        return txt, tsv


def user_destination_array(records, user_field: str = "userID",
                           dst_field: str = "DstIP") -> AssocArray:
    """``E_user^T E_dst`` with the field prefixes stripped from the keys."""
    records = list(records)
    A = transpose_multiply(explode(records, [user_field]), explode(records, [dst_field]))
    return A.strip_fields()


def daily_report(records, top: int = 10, date: str = "day", user_field: str = "userID",
                 dst_field: str = "DstIP") -> DailyReport:
    if top < 1:
        raise ValueError("top_k must be at least 1")
    records = list(records)
    A = user_destination_array(records, user_field, dst_field)
    t = array_quantities(A)
    return DailyReport(
        date=date,
        records=len(records),
        distinct_users=len(t.row_sums),
        distinct_destinations=len(t.col_sums),
        connections=sum(t.row_sums.values()),
        top_users_by_connections=top_k(t.row_sums, top),
        top_users_by_destinations=top_k(t.row_fanout, top),
        top_destinations_by_connections=top_k(t.col_sums, top),
        top_destinations_by_users=top_k(t.col_fanin, top),
    )
