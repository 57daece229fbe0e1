"""Packet sources: synthetic generators and file adapters.

Every source is an iterable of :class:`PacketChunk` (parallel ``src``,
``dst``, ``ts`` arrays). Working in chunks keeps per-packet Python overhead
out of the ingest path; the pipeline still assigns streams per packet.
"""

from __future__ import annotations

import struct
import time
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

DEFAULT_CHUNK = 1 << 16
EPOCH_US = 1_690_000_000_000_000
MODELS = ("uniform", "heavy-tail")


class PacketRecord(NamedTuple):
    src: int
    dst: int
    timestamp: int  # microseconds since epoch


class PacketChunk(NamedTuple):
    src: np.ndarray
    dst: np.ndarray
    ts: np.ndarray

    def __len__(self) -> int:
        return len(self.src)

    def records(self) -> list[PacketRecord]:
        return [PacketRecord(*r) for r in zip(self.src.tolist(), self.dst.tolist(),
                                              self.ts.tolist())]

    @classmethod
    def from_records(cls, records) -> "PacketChunk":
        records = list(records)
        if not records:
            return cls(*_empty_arrays())
        s, d, t = zip(*records)
        return cls(np.array(s, dtype=np.uint32), np.array(d, dtype=np.uint32),
                   np.array(t, dtype=np.uint64))


def _empty_arrays():
    return (np.zeros(0, dtype=np.uint32), np.zeros(0, dtype=np.uint32),
            np.zeros(0, dtype=np.uint64))


class SourceError(RuntimeError):
    """A packet source failed to read or exceeded its malformed-input budget."""


class PacketSource:
    """Base class. Subclasses implement ``_chunks`` and may count skips."""

    def __init__(self):
        self.skipped = {"malformed": 0, "non_ipv4": 0}
        self.emitted = 0

    @property
    def skipped_total(self) -> int:
        return sum(self.skipped.values())

    def _chunks(self) -> Iterator[PacketChunk]:
        raise NotImplementedError

    def __iter__(self) -> Iterator[PacketChunk]:
        for chunk in self._chunks():
            if len(chunk):
                self.emitted += len(chunk)
                yield chunk

    def records(self) -> Iterator[PacketRecord]:
        for chunk in self:
            yield from chunk.records()


class ArraySource(PacketSource):
    """Source over in-memory arrays, yielded in fixed-size chunks."""

    def __init__(self, src, dst, ts=None, chunk_size: int = DEFAULT_CHUNK):
        super().__init__()
        self.src = np.asarray(src, dtype=np.uint32)
        self.dst = np.asarray(dst, dtype=np.uint32)
        self.ts = (np.arange(len(self.src), dtype=np.uint64) + EPOCH_US if ts is None
                   else np.asarray(ts, dtype=np.uint64))
        self.chunk_size = chunk_size

    def _chunks(self):
        for lo in range(0, len(self.src), self.chunk_size):
            hi = lo + self.chunk_size
            yield PacketChunk(self.src[lo:hi], self.dst[lo:hi], self.ts[lo:hi])


class SyntheticSource(PacketSource):
    """Seeded synthetic traffic.

    ``"uniform"`` draws independent uniform source and destination
    addresses. ``"heavy-tail"`` draws Zipf-distributed popularity ranks for
    both endpoints and scatters ranks over the address space with an odd
    multiplier (a bijection modulo ``2**addr_bits``). Inter-arrival gaps are
    exponential with mean ``1e6 / rate`` microseconds.

    ``n=None`` produces an endless stream; wrap it with :class:`TimedSource`.
    """

    def __init__(self, n: int | None, model: str = "heavy-tail", seed: int = 0,
                 addr_bits: int = 32, chunk_size: int = DEFAULT_CHUNK,
                 zipf_exponent: float = 1.3, rate: float = 1e6):
        super().__init__()
        if model not in MODELS:
            raise ValueError(f"unknown traffic model {model!r}; choose from {MODELS}")
        if n is not None and n < 0:
            raise ValueError("packet count must be non-negative")
        if not 1 <= addr_bits <= 32:
            raise ValueError("addr_bits must be in [1, 32]")
        self.n = n
        self.model = model
        self.seed = seed
        self.addr_bits = addr_bits
        self.chunk_size = chunk_size
        self.zipf_exponent = zipf_exponent
        self.rate = rate

    def _draw(self, rng: np.random.Generator, m: int):
        mask = np.uint64((1 << self.addr_bits) - 1)
        if self.model == "uniform":
            hi = 1 << self.addr_bits
            return (rng.integers(0, hi, m, dtype=np.uint64).astype(np.uint32),
                    rng.integers(0, hi, m, dtype=np.uint64).astype(np.uint32))
        src_rank = rng.zipf(self.zipf_exponent, m).astype(np.uint64)
        dst_rank = rng.zipf(self.zipf_exponent, m).astype(np.uint64)
        src = (src_rank * np.uint64(2654435761) + np.uint64(0x0A000000)) & mask
        dst = (dst_rank * np.uint64(2246822519) + np.uint64(0xC0A80000)) & mask
        return src.astype(np.uint32), dst.astype(np.uint32)

    def _chunks(self):
        rng = np.random.default_rng(self.seed)
        clock = EPOCH_US
        done = 0
        while self.n is None or done < self.n:
            m = self.chunk_size if self.n is None else min(self.chunk_size, self.n - done)
            src, dst = self._draw(rng, m)
            gaps = rng.exponential(1e6 / self.rate, m).astype(np.uint64)
            ts = clock + np.cumsum(gaps, dtype=np.uint64)
            clock = int(ts[-1])
            done += m
            yield PacketChunk(src, dst, ts)


def generate_synthetic(n: int, model: str = "heavy-tail", seed: int = 0, **kwargs) -> SyntheticSource:
    return SyntheticSource(n, model, seed, **kwargs)


class TimedSource(PacketSource):
    """Stops pulling from ``inner`` once ``seconds`` of wall time have passed."""

    def __init__(self, inner: PacketSource, seconds: float):
        super().__init__()
        self.inner = inner
        self.seconds = seconds

    def _chunks(self):
        deadline = time.monotonic() + self.seconds
        it = iter(self.inner)
        while time.monotonic() < deadline:
            chunk = next(it, None)
            if chunk is None:
                break
            yield chunk
        self.skipped = dict(self.inner.skipped)


# -- canonical CSV ------------------------------------------------------------


def format_csv(chunk: PacketChunk) -> str:
    lines = [f"{s},{d},{t}" for s, d, t in zip(chunk.src.tolist(), chunk.dst.tolist(),
                                                chunk.ts.tolist())]
    return "".join(line + "\n" for line in lines)


def write_csv(source, path) -> int:
    """Write ``src_u32,dst_u32,timestamp_us`` lines; returns the record count."""
    n = 0
    with open(path, "w", newline="\n") as fh:
        for chunk in source:
            fh.write(format_csv(chunk))
            n += len(chunk)
    return n


class CsvSource(PacketSource):
    """Reads the canonical ``src,dst,timestamp_us`` CSV format.

    Lines that do not parse count as ``malformed``; addresses at or above
    ``2**32`` or written as IPv6 count as ``non_ipv4``. Once ``error_budget``
    malformed lines have been seen, iteration raises :class:`SourceError`.
    """

    def __init__(self, path, error_budget: int = 100, chunk_size: int = DEFAULT_CHUNK):
        super().__init__()
        self.path = Path(path)
        self.error_budget = error_budget
        self.chunk_size = chunk_size

    def _bad(self, lineno: int, line: str) -> None:
        self.skipped["malformed"] += 1
        if self.skipped["malformed"] > self.error_budget:
            raise SourceError(f"{self.path}:{lineno}: malformed record {line.strip()!r} "
                              f"exceeds error budget of {self.error_budget}")

    def _chunks(self):
        src, dst, ts = [], [], []
        try:
            fh = open(self.path, "r", encoding="ascii", errors="replace")
        except OSError as exc:
            raise SourceError(f"cannot open {self.path}: {exc}") from exc
        with fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                parts = line.rstrip("\r\n").split(",")
                if len(parts) != 3:
                    self._bad(lineno, line)
                    continue
                if ":" in parts[0] or ":" in parts[1]:
                    self.skipped["non_ipv4"] += 1
                    continue
                try:
                    s, d, t = int(parts[0]), int(parts[1]), int(parts[2])
                except ValueError:
                    self._bad(lineno, line)
                    continue
                if s < 0 or d < 0 or t < 0 or t >= 1 << 64:
                    self._bad(lineno, line)
                    continue
                if s >= 1 << 32 or d >= 1 << 32:
                    self.skipped["non_ipv4"] += 1
                    continue
                src.append(s)
                dst.append(d)
                ts.append(t)
                if len(src) >= self.chunk_size:
                    yield _to_chunk(src, dst, ts)
                    src, dst, ts = [], [], []
        if src:
            yield _to_chunk(src, dst, ts)


def _to_chunk(src, dst, ts) -> PacketChunk:
    return PacketChunk(np.array(src, dtype=np.uint32), np.array(dst, dtype=np.uint32),
                       np.array(ts, dtype=np.uint64))


# -- pcap ---------------------------------------------------------------------

_LINK_ETHERNET = 1
_LINK_RAW = (101, 228)
_LINK_SLL = 113
_ETH_IPV4 = 0x0800
_ETH_VLAN = (0x8100, 0x88A8)


class PcapSource(PacketSource):
    """Extracts IPv4 source/destination from a classic libpcap capture.

    Supports Ethernet (with 802.1Q/802.1ad tags), raw IP and Linux cooked
    link types. Non-IPv4 frames are counted and skipped; truncated frames
    count against the malformed budget.
    """

    def __init__(self, path, error_budget: int = 100, chunk_size: int = DEFAULT_CHUNK):
        super().__init__()
        self.path = Path(path)
        self.error_budget = error_budget
        self.chunk_size = chunk_size

    def _bad(self, index: int, why: str) -> None:
        self.skipped["malformed"] += 1
        if self.skipped["malformed"] > self.error_budget:
            raise SourceError(f"{self.path}: frame {index}: {why}; "
                              f"error budget of {self.error_budget} exceeded")

    def _chunks(self):
        try:
            data = self.path.read_bytes()
        except OSError as exc:
            raise SourceError(f"cannot open {self.path}: {exc}") from exc
        if len(data) == 0:
            return
        if len(data) < 24:
            raise SourceError(f"{self.path}: truncated pcap header")
        magic = data[:4]
        if magic in (b"\xd4\xc3\xb2\xa1", b"\x4d\x3c\xb2\xa1"):
            endian = "<"
        elif magic in (b"\xa1\xb2\xc3\xd4", b"\xa1\xb2\x3c\x4d"):
            endian = ">"
        else:
            raise SourceError(f"{self.path}: not a libpcap file (magic {magic.hex()})")
        nanos = magic in (b"\x4d\x3c\xb2\xa1", b"\xa1\xb2\x3c\x4d")
        linktype = struct.unpack(endian + "I", data[20:24])[0] & 0x0FFFFFFF
        rec = struct.Struct(endian + "IIII")
        off = 24
        index = 0
        src, dst, ts = [], [], []
        while off < len(data):
            if off + rec.size > len(data):
                self._bad(index, "truncated record header")
                break
            sec, frac, incl, _orig = rec.unpack_from(data, off)
            off += rec.size
            frame = data[off:off + incl]
            off += incl
            if len(frame) < incl:
                self._bad(index, "truncated frame")
                break
            addrs = self._ipv4(frame, linktype)
            if addrs is None:
                self.skipped["non_ipv4"] += 1
            elif addrs is False:
                self._bad(index, "short IPv4 header")
            else:
                src.append(addrs[0])
                dst.append(addrs[1])
                ts.append(sec * 1_000_000 + (frac // 1000 if nanos else frac))
                if len(src) >= self.chunk_size:
                    yield _to_chunk(src, dst, ts)
                    src, dst, ts = [], [], []
            index += 1
        if src:
            yield _to_chunk(src, dst, ts)

    @staticmethod
    def _ipv4(frame: bytes, linktype: int):
        if linktype == _LINK_ETHERNET:
            if len(frame) < 14:
                return False
            etype = int.from_bytes(frame[12:14], "big")
            ip = 14
            while etype in _ETH_VLAN:
                if len(frame) < ip + 4:
                    return False
                etype = int.from_bytes(frame[ip + 2:ip + 4], "big")
                ip += 4
            if etype != _ETH_IPV4:
                return None
        elif linktype == _LINK_SLL:
            if len(frame) < 16:
                return False
            if int.from_bytes(frame[14:16], "big") != _ETH_IPV4:
                return None
            ip = 16
        elif linktype in _LINK_RAW:
            ip = 0
        else:
            return None
        if len(frame) < ip + 20:
            return False
        if frame[ip] >> 4 != 4:
            return None
        return (int.from_bytes(frame[ip + 12:ip + 16], "big"),
                int.from_bytes(frame[ip + 16:ip + 20], "big"))


FORMATS = ("csv", "pcap")


def read_records(path, format: str = "csv", error_budget: int = 100,
                 chunk_size: int = DEFAULT_CHUNK) -> PacketSource:
    """Open a packet file as a source. ``format`` is ``"csv"`` or ``"pcap"``."""
    if format == "csv":
        return CsvSource(path, error_budget, chunk_size)
    if format == "pcap":
        return PcapSource(path, error_budget, chunk_size)
    raise ValueError(f"unknown record format {format!r}; choose from {FORMATS}")
