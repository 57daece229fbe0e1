"""Matrix blobs, Zstandard framing and TAR archive units.

Blob layout (little-endian)::

    magic    4s   b"HSTM"
    version  u16  1
    flags    u16  bit0 = partial block
    row_dim  u64
    col_dim  u64
    nnz      u64
    packets  u64
    ts_first u64  microseconds
    ts_last  u64  microseconds
    nnz x (row u32, col u32, count u64), sorted by (row, col)

Each blob is compressed into its own Zstandard frame (level 1) and stored as
one member of a POSIX ustar archive next to a ``manifest.json`` member.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tarfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import zstandard

from .matrix import TrafficMatrix, sum_all

BLOB_MAGIC = b"HSTM"
BLOB_VERSION = 1
FLAG_PARTIAL = 0x1
ZSTD_LEVEL = 1
MANIFEST_NAME = "manifest.json"
ARCHIVE_FORMAT = "hstm-archive"

_HEADER = struct.Struct("<4sHHQQQQQQ")
_TRIPLE = np.dtype([("row", "<u4"), ("col", "<u4"), ("count", "<u8")])
_DECODE_STEP = 1 << 16


class BlobError(ValueError):
    """Malformed matrix blob."""


class DecodeError(ValueError):
    """Corrupt or truncated Zstandard frame; ``offset`` locates the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ArchiveError(ValueError):
    """Invalid, truncated or inconsistent archive container."""


@dataclass(frozen=True)
class BlobMeta:
    packet_count: int
    ts_first: int = 0
    ts_last: int = 0
    partial: bool = False


def serialize(A: TrafficMatrix, meta: BlobMeta | None = None) -> bytes:
    """Canonical byte encoding of ``A``; equal matrices give equal bytes."""
    if meta is None:
        meta = BlobMeta(sum_all(A))
    header = _HEADER.pack(BLOB_MAGIC, BLOB_VERSION, FLAG_PARTIAL if meta.partial else 0,
                          A.row_dim, A.col_dim, A.nnz, meta.packet_count,
                          meta.ts_first, meta.ts_last)
    payload = np.empty(A.nnz, dtype=_TRIPLE)
    payload["row"] = A.rows
    payload["col"] = A.cols
    payload["count"] = A.vals
    return header + payload.tobytes()


def deserialize(blob: bytes) -> tuple[TrafficMatrix, BlobMeta]:
    if len(blob) < _HEADER.size:
        raise BlobError(f"blob of {len(blob)} bytes is shorter than the header")
    magic, version, flags, row_dim, col_dim, nnz, packets, ts0, ts1 = _HEADER.unpack_from(blob)
    if magic != BLOB_MAGIC:
        raise BlobError(f"bad blob magic {magic!r}")
    if version != BLOB_VERSION:
        raise BlobError(f"unsupported blob version {version}")
    expected = _HEADER.size + nnz * _TRIPLE.itemsize
    if len(blob) != expected:
        raise BlobError(f"blob length {len(blob)} does not match nnz={nnz} ({expected} bytes)")
    payload = np.frombuffer(blob, dtype=_TRIPLE, offset=_HEADER.size, count=nnz)
    rows = payload["row"].astype(np.uint32)
    cols = payload["col"].astype(np.uint32)
    vals = payload["count"].astype(np.uint64)
    if nnz:
        keys = (rows.astype(np.uint64) << np.uint64(32)) | cols
        if np.any(keys[1:] <= keys[:-1]):
            raise BlobError("blob triples are not strictly sorted by (row, col)")
        if np.any(vals == 0):
            raise BlobError("blob stores an explicit zero")
        if int(rows.max()) >= row_dim or int(cols.max()) >= col_dim:
            raise BlobError("blob index exceeds declared dimensions")
    A = TrafficMatrix(rows, cols, vals, row_dim, col_dim, _canonical=True)
    if sum_all(A) != packets:
        raise BlobError(f"packet count {packets} in header disagrees with entries ({sum_all(A)})")
    return A, BlobMeta(packets, ts0, ts1, bool(flags & FLAG_PARTIAL))


def compress(blob: bytes) -> bytes:
    return zstandard.ZstdCompressor(level=ZSTD_LEVEL, write_content_size=True).compress(blob)


def decompress(data: bytes) -> bytes:
    """Decode exactly one Zstandard frame, raising :class:`DecodeError` on damage."""
    dobj = zstandard.ZstdDecompressor().decompressobj()
    out = []
    off = 0
    while off < len(data):
        piece = data[off:off + _DECODE_STEP]
        try:
            out.append(dobj.decompress(piece))
        except zstandard.ZstdError as exc:
            raise DecodeError(f"corrupt zstd frame: {exc}", off) from None
        off += len(piece)
        if dobj.eof:
            break
    if not dobj.eof:
        raise DecodeError("truncated zstd frame", len(data))
    if off < len(data) or dobj.unused_data:
        raise DecodeError("trailing bytes after zstd frame", len(data) - len(dobj.unused_data))
    return b"".join(out)


def encode_matrix(A: TrafficMatrix, meta: BlobMeta | None = None) -> bytes:
    return compress(serialize(A, meta))


def decode_matrix(data: bytes) -> tuple[TrafficMatrix, BlobMeta]:
    return deserialize(decompress(data))


# -- containers ---------------------------------------------------------------


def member_name(window_seq: int, block_seq: int) -> str:
    return f"w{window_seq:08d}_b{block_seq:02d}.gbz"


class ArchiveUnit(NamedTuple):
    path: Path
    members: list[str]
    manifest: dict


class ArchiveContents(NamedTuple):
    manifest: dict
    matrices: list[TrafficMatrix]
    metas: list[BlobMeta]
    errors: dict[str, str]


def write_archive(blobs, path, manifest: dict | None = None, window_seq: int | None = None,
                  compressed: bool = False) -> ArchiveUnit:
    """Write serialized blobs as one TAR archive unit.

    ``blobs`` are uncompressed blobs from :func:`serialize` (or frames from
    :func:`compress` with ``compressed=True``). The manifest is completed with
    member names and packet totals and stored as ``manifest.json``. The file
    is written to a temporary name and renamed, so a finished path is always
    a complete archive.
    """
    blobs = list(blobs)
    if not blobs:
        raise ArchiveError("refusing to write an archive with no matrix members")
    manifest = dict(manifest or {})
    if window_seq is None:
        window_seq = int(manifest.get("window_seq", 0))
    frames = blobs if compressed else [compress(b) for b in blobs]
    names = [member_name(window_seq, k) for k in range(len(frames))]
    metas = [deserialize(decompress(f) if compressed else b)[1]
             for f, b in zip(frames, blobs)]
    manifest.setdefault("format", ARCHIVE_FORMAT)
    manifest.setdefault("version", 1)
    manifest["window_seq"] = window_seq
    manifest.setdefault("created", time.time())
    manifest["total_packets"] = sum(m.packet_count for m in metas)
    manifest.setdefault("partial", any(m.partial for m in metas))
    blocks = manifest.get("blocks") or [{} for _ in frames]
    if len(blocks) != len(frames):
        raise ArchiveError("manifest block list does not match the number of blobs")
    manifest["blocks"] = [dict(info, name=name, packets=m.packet_count,
                               ts_first_us=m.ts_first, ts_last_us=m.ts_last, partial=m.partial)
                          for info, name, m in zip(blocks, names, metas)]
    path = Path(path)
    mtime = int(manifest["created"])
    tmp = path.with_name(path.name + ".tmp")
    with tarfile.open(tmp, "w", format=tarfile.USTAR_FORMAT) as tar:
        _add_member(tar, MANIFEST_NAME,
                    json.dumps(manifest, sort_keys=True, indent=1).encode() + b"\n", mtime)
        for name, frame in zip(names, frames):
            _add_member(tar, name, frame, mtime)
    os.replace(tmp, path)
    return ArchiveUnit(path, names, manifest)


def _add_member(tar: tarfile.TarFile, name: str, data: bytes, mtime: int) -> None:
    info = tarfile.TarInfo(name)
    info.size = len(data)
    info.mtime = mtime
    info.mode = 0o644
    tar.addfile(info, io.BytesIO(data))


def open_archive(path, strict: bool = True) -> ArchiveContents:
    """Read every member of an archive unit in block order.

    With ``strict=False`` a damaged member is recorded in ``errors`` and
    skipped; the remaining members still decode.
    """
    path = Path(path)
    try:
        tar = tarfile.open(path, "r:")
    except (tarfile.TarError, OSError) as exc:
        raise ArchiveError(f"{path}: unreadable container: {exc}") from None
    members: dict[str, bytes] = {}
    with tar:
        try:
            for info in tar:
                if info.name in members:
                    raise ArchiveError(f"{path}: duplicate member {info.name}")
                fh = tar.extractfile(info)
                if fh is None:
                    raise ArchiveError(f"{path}: member {info.name} is not a regular file")
                data = fh.read()
                if len(data) != info.size:
                    raise ArchiveError(f"{path}: member {info.name} is truncated")
                members[info.name] = data
        except (tarfile.TarError, OSError, EOFError) as exc:
            raise ArchiveError(f"{path}: truncated container: {exc}") from None
    if MANIFEST_NAME not in members:
        raise ArchiveError(f"{path}: missing {MANIFEST_NAME}")
    try:
        manifest = json.loads(members.pop(MANIFEST_NAME))
    except ValueError as exc:
        raise ArchiveError(f"{path}: invalid manifest: {exc}") from None
    expected = [b["name"] for b in manifest.get("blocks", [])]
    if not expected:
        raise ArchiveError(f"{path}: manifest lists no matrix members")
    missing = [n for n in expected if n not in members]
    if missing:
        raise ArchiveError(f"{path}: missing members {missing}")
    extra = sorted(set(members) - set(expected))
    if extra:
        raise ArchiveError(f"{path}: unexpected members {extra}")
    matrices, metas, errors = [], [], {}
    for name in expected:
        try:
            A, meta = decode_matrix(members[name])
        except (DecodeError, BlobError) as exc:
            if strict:
                raise ArchiveError(f"{path}: member {name}: {exc}") from None
            errors[name] = str(exc)
            continue
        matrices.append(A)
        metas.append(meta)
    return ArchiveContents(manifest, matrices, metas, errors)


def read_archive(path) -> tuple[dict, list[TrafficMatrix]]:
    contents = open_archive(path)
    return contents.manifest, contents.matrices


# -- pipeline hand-off --------------------------------------------------------


@dataclass(frozen=True)
class BlockInfo:
    stream: int
    seq: int
    packets: int
    ts_first: int
    ts_last: int
    partial: bool = False


@dataclass
class WindowUnit:
    """One reporter window: ``K`` block matrices (fewer when ``partial``)."""

    window_seq: int
    matrices: list[TrafficMatrix]
    blocks: list[BlockInfo]
    partial: bool = False
    build_seconds: float = 0.0

    @property
    def packets(self) -> int:
        return sum(b.packets for b in self.blocks)

    def blobs(self) -> list[bytes]:
        return [serialize(A, BlobMeta(b.packets, b.ts_first, b.ts_last, b.partial))
                for A, b in zip(self.matrices, self.blocks)]

    def manifest(self, created: float, extra: dict | None = None) -> dict:
        out = dict(extra or {})
        out.update(window_seq=self.window_seq, created=created, partial=self.partial,
                   ts_first_us=min((b.ts_first for b in self.blocks), default=0),
                   ts_last_us=max((b.ts_last for b in self.blocks), default=0),
                   blocks=[{"block_seq": k, "stream": b.stream, "stream_seq": b.seq,
                            "nnz": A.nnz}
                           for k, (A, b) in enumerate(zip(self.matrices, self.blocks))])
        return out


class MemorySink:
    """Keeps emitted units in memory (tests, library use)."""

    def __init__(self):
        self.units: list[WindowUnit] = []

    def write(self, unit: WindowUnit):
        self.units.append(unit)
        return unit


class DirectorySink:
    """Writes each unit as ``window_<seq>.tar`` (``window_<seq>.partial.tar``)."""

    def __init__(self, outdir, clock=time.time, extra_manifest: dict | None = None):
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self.extra_manifest = extra_manifest or {}
        self.paths: list[Path] = []

    def write(self, unit: WindowUnit) -> ArchiveUnit:
        suffix = ".partial.tar" if unit.partial else ".tar"
        path = self.outdir / f"window_{unit.window_seq:08d}{suffix}"
        out = write_archive(unit.blobs(), path,
                            unit.manifest(self.clock(), self.extra_manifest),
                            unit.window_seq)
        self.paths.append(path)
        return out
