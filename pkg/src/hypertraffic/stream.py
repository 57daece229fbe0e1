"""Constant-packet window pipeline.

Thread layout::

    caller thread   splitter: round-robin, per packet, over S stream queues
    S workers       cut full B-packet blocks, publish to the reporter
    reporter        gathers K full blocks per window, anonymizes, builds matrices
    writer          hands finished windows to the archive sink
    sampler         optional 1-second metrics buckets

All queues are bounded; a full queue blocks its producer, nothing is dropped.
Blocks left over at shutdown (fewer than K full blocks, plus each stream's
short tail) are emitted as one unit marked partial.
"""

from __future__ import annotations

import logging
import os
import queue
import threading
import time
from dataclasses import dataclass, field, replace as _dc_replace

import numpy as np

from .anonymize import Anonymizer
from .archive import BlockInfo, MemorySink, WindowUnit
from .matrix import ADDRESS_SPACE, TrafficMatrix, sum_all
from .sources import PacketChunk, PacketSource

try:
    import psutil
except ImportError:  # pragma: no cover
    psutil = None

log = logging.getLogger(__name__)

_STOP = object()


@dataclass(frozen=True)
class PacketBlock:
    """A stream's buffer of ``len(src)`` packets, published as a unit."""

    src: np.ndarray
    dst: np.ndarray
    ts: np.ndarray
    stream: int = 0
    seq: int = 0
    partial: bool = False

    def __len__(self) -> int:
        return len(self.src)

    @property
    def ts_first(self) -> int:
        return int(self.ts[0]) if len(self.ts) else 0

    @property
    def ts_last(self) -> int:
        return int(self.ts[-1]) if len(self.ts) else 0

    def replace(self, **changes) -> "PacketBlock":
        return _dc_replace(self, **changes)

    def info(self) -> BlockInfo:
        return BlockInfo(self.stream, self.seq, len(self), self.ts_first, self.ts_last,
                         self.partial)

    @classmethod
    def from_records(cls, records, **kwargs) -> "PacketBlock":
        chunk = PacketChunk.from_records(records)
        return cls(chunk.src, chunk.dst, chunk.ts, **kwargs)


def _is_pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


@dataclass(frozen=True)
class WindowConfig:
    block_size: int = 1 << 17
    blocks_per_window: int = 64
    streams: int = 8
    mode: str = "direct"
    worker_queue: int = 16
    reporter_queue: int = 256
    writer_queue: int = 2

    def __post_init__(self):
        if not _is_pow2(self.block_size):
            raise ValueError(f"block_size must be a power of two, got {self.block_size}")
        if not _is_pow2(self.blocks_per_window):
            raise ValueError(f"blocks_per_window must be a power of two, got {self.blocks_per_window}")
        if self.streams < 1:
            raise ValueError("need at least one stream")
        if self.mode not in Anonymizer.MODES:
            raise ValueError(f"unknown anonymization mode {self.mode!r}")
        for name in ("worker_queue", "reporter_queue", "writer_queue"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")

    @property
    def window_packets(self) -> int:
        return self.block_size * self.blocks_per_window


class PipelineMetrics:
    """Counters shared by pipeline threads plus a 1-second sampler."""

    def __init__(self, streams: int = 0):
        self._lock = threading.Lock()
        self.started = None
        self.packets_in = 0
        self.packets_out = 0
        self.windows = 0
        self.blocks_per_stream = [0] * streams
        self.window_latency: list[float] = []
        self.rows: list[dict] = []
        self._reporter_q = None
        self._last_t = None
        self._last_packets = 0
        self._proc = psutil.Process(os.getpid()) if psutil else None

    def add_in(self, n: int) -> None:
        with self._lock:
            self.packets_in += n

    def add_block(self, stream: int) -> None:
        with self._lock:
            self.blocks_per_stream[stream] += 1

    def add_window(self, packets: int, seconds: float) -> None:
        with self._lock:
            self.packets_out += packets
            self.windows += 1
            self.window_latency.append(seconds)

    def snapshot(self) -> dict:
        """Current metrics record; rates cover the interval since the last call."""
        now = time.monotonic()
        with self._lock:
            packets = self.packets_in
            blocks = list(self.blocks_per_stream)
            latency = self.window_latency[-1] if self.window_latency else 0.0
            windows = self.windows
        if self._last_t is None or self.started is None:
            rate = 0.0
        else:
            dt = now - self._last_t
            rate = (packets - self._last_packets) / dt if dt > 0 else 0.0
        self._last_t, self._last_packets = now, packets
        rss = cpu = 0.0
        if self._proc is not None and self.started is not None:
            rss = float(self._proc.memory_info().rss)
            cpu = self._proc.cpu_percent(None)
        return {
            "elapsed_s": now - self.started if self.started else 0.0,
            "packets_total": packets,
            "packets_per_s": rate,
            "blocks_per_stream": blocks,
            "windows": windows,
            "reporter_queue_depth": self._reporter_q.qsize() if self._reporter_q else 0,
            "rss_bytes": rss,
            "cpu_percent": cpu,
            "window_build_s": latency,
        }

    def sample(self) -> dict:
        row = self.snapshot()
        self.rows.append(row)
        return row

    def start(self) -> None:
        self.started = time.monotonic()
        self._last_t = self.started
        if self._proc is not None:
            self._proc.cpu_percent(None)


METRICS_COLUMNS = ("elapsed_s", "packets_total", "packets_per_s", "blocks_published",
                   "windows", "reporter_queue_depth", "rss_bytes", "cpu_percent",
                   "window_build_s")


def metrics_tsv(rows) -> str:
    lines = ["\t".join(METRICS_COLUMNS)]
    for r in rows:
        vals = dict(r, blocks_published=sum(r["blocks_per_stream"]))
        lines.append("\t".join(_fmt(vals[c]) for c in METRICS_COLUMNS))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)


@dataclass
class RunReport:
    packets_in: int = 0
    packets_out: int = 0
    skipped: dict = field(default_factory=dict)
    blocks: int = 0
    windows: int = 0
    partial_units: int = 0
    units: list = field(default_factory=list)
    elapsed_s: float = 0.0
    error: str | None = None
    last_durable_window: int | None = None
    metrics: list = field(default_factory=list)

    @property
    def packets_per_s(self) -> float:
        return self.packets_in / self.elapsed_s if self.elapsed_s > 0 else 0.0


class PipelineError(RuntimeError):
    def __init__(self, message: str, report: RunReport):
        super().__init__(message)
        self.report = report


class _Worker(threading.Thread):
    def __init__(self, stream: int, cfg: WindowConfig, inbox: queue.Queue,
                 outbox: queue.Queue, metrics: PipelineMetrics):
        super().__init__(name=f"stream-{stream}", daemon=True)
        self.stream = stream
        self.cfg = cfg
        self.inbox = inbox
        self.outbox = outbox
        self.metrics = metrics
        self.seq = 0

    def _publish(self, src, dst, ts, partial=False):
        self.outbox.put(PacketBlock(src, dst, ts, self.stream, self.seq, partial))
        self.seq += 1
        if not partial:
            self.metrics.add_block(self.stream)

    def run(self):
        B = self.cfg.block_size
        parts: list[PacketChunk] = []
        held = 0
        while True:
            item = self.inbox.get()
            if item is _STOP:
                break
            parts.append(item)
            held += len(item)
            if held < B:
                continue
            src = np.concatenate([p.src for p in parts])
            dst = np.concatenate([p.dst for p in parts])
            ts = np.concatenate([p.ts for p in parts])
            full = held - held % B
            for lo in range(0, full, B):
                self._publish(src[lo:lo + B], dst[lo:lo + B], ts[lo:lo + B])
            parts = [PacketChunk(src[full:], dst[full:], ts[full:])] if full < held else []
            held -= full
        if held:
            self._publish(np.concatenate([p.src for p in parts]),
                          np.concatenate([p.dst for p in parts]),
                          np.concatenate([p.ts for p in parts]), partial=True)
        self.outbox.put((_STOP, self.stream))


class _Reporter(threading.Thread):
    def __init__(self, cfg: WindowConfig, anonymizer, inbox: queue.Queue,
                 outbox: queue.Queue, failed: threading.Event, dims: int):
        super().__init__(name="reporter", daemon=True)
        self.cfg = cfg
        self.anonymizer = anonymizer
        self.inbox = inbox
        self.outbox = outbox
        self.failed = failed
        self.dims = dims
        self.error: BaseException | None = None
        self.window_seq = 0
        self.blocks = 0

    def _emit(self, blocks: list[PacketBlock], partial: bool) -> None:
        t0 = time.perf_counter()
        if self.anonymizer is not None:
            # one pass over the whole window: each distinct address is mapped once
            n = [len(b) for b in blocks]
            both = self.anonymizer(np.concatenate([b.src for b in blocks] + [b.dst for b in blocks]))
            total = sum(n)
            src_all, dst_all = both[:total], both[total:]
            cuts = np.cumsum(n)[:-1]
            blocks = [b.replace(src=s, dst=d) for b, s, d in
                      zip(blocks, np.split(src_all, cuts), np.split(dst_all, cuts))]
        mats = [TrafficMatrix.from_pairs(b.src, b.dst, self.dims, self.dims) for b in blocks]
        unit = WindowUnit(self.window_seq, mats, [b.info() for b in blocks], partial,
                          time.perf_counter() - t0)
        self.window_seq += 1
        self.outbox.put(unit)

    def run(self):
        K = self.cfg.blocks_per_window
        live = self.cfg.streams
        pending: list[PacketBlock] = []
        tails: list[PacketBlock] = []
        while live:
            item = self.inbox.get()
            if isinstance(item, tuple) and item[0] is _STOP:
                live -= 1
                continue
            if self.failed.is_set():
                continue  # drain so workers never block
            self.blocks += 1
            try:
                if item.partial:
                    tails.append(item)
                    continue
                pending.append(item)
                if len(pending) == K:
                    self._emit(pending, False)
                    pending = []
            except BaseException as exc:  # noqa: BLE001 - reported to caller
                self.error = exc
                self.failed.set()
        if not self.failed.is_set() and (pending or tails):
            try:
                self._emit(pending + sorted(tails, key=lambda b: b.stream), True)
            except BaseException as exc:  # noqa: BLE001
                self.error = exc
                self.failed.set()
        self.outbox.put(_STOP)


class _Writer(threading.Thread):
    def __init__(self, sink, inbox: queue.Queue, failed: threading.Event,
                 metrics: PipelineMetrics):
        super().__init__(name="archive-writer", daemon=True)
        self.sink = sink
        self.inbox = inbox
        self.failed = failed
        self.metrics = metrics
        self.error: BaseException | None = None
        self.durable: list[WindowUnit] = []

    def run(self):
        while True:
            unit = self.inbox.get()
            if unit is _STOP:
                break
            if self.failed.is_set():
                continue
            try:
                self.sink.write(unit)
            except BaseException as exc:  # noqa: BLE001
                self.error = exc
                self.failed.set()
                continue
            self.durable.append(unit)
            self.metrics.add_window(unit.packets, unit.build_seconds)


class _Sampler(threading.Thread):
    def __init__(self, metrics: PipelineMetrics, interval: float):
        super().__init__(name="metrics", daemon=True)
        self.metrics = metrics
        self.interval = interval
        self.stop = threading.Event()

    def run(self):
        nxt = time.monotonic() + self.interval
        while not self.stop.wait(max(0.0, nxt - time.monotonic())):
            self.metrics.sample()
            nxt += self.interval


def run_pipeline(source: PacketSource, cfg: WindowConfig | None = None, sink=None,
                 anonymizer: Anonymizer | None = None, metrics: PipelineMetrics | None = None,
                 metrics_interval: float | None = None, dims: int = ADDRESS_SPACE) -> RunReport:
    """Stream ``source`` through split, block, window, anonymize and build stages.

    ``anonymizer=None`` builds matrices on raw addresses. ``metrics_interval``
    (seconds) enables the periodic sampler; a final sample is always taken.

    Raises
    ------
    PipelineError
        On a source, anonymization or sink failure. Whatever was already
        durable stays on disk; ``exc.report`` carries the counts.
    """
    cfg = cfg or WindowConfig()
    sink = MemorySink() if sink is None else sink
    if anonymizer is not None and anonymizer.mode != cfg.mode:
        raise ValueError(f"anonymizer mode {anonymizer.mode!r} does not match config {cfg.mode!r}")
    metrics = metrics or PipelineMetrics(cfg.streams)
    if len(metrics.blocks_per_stream) != cfg.streams:
        metrics.blocks_per_stream = [0] * cfg.streams
    failed = threading.Event()
    worker_qs = [queue.Queue(cfg.worker_queue) for _ in range(cfg.streams)]
    reporter_q: queue.Queue = queue.Queue(cfg.reporter_queue)
    writer_q: queue.Queue = queue.Queue(cfg.writer_queue)
    metrics._reporter_q = reporter_q
    workers = [_Worker(s, cfg, worker_qs[s], reporter_q, metrics) for s in range(cfg.streams)]
    reporter = _Reporter(cfg, anonymizer, reporter_q, writer_q, failed, dims)
    writer = _Writer(sink, writer_q, failed, metrics)
    sampler = _Sampler(metrics, metrics_interval) if metrics_interval else None
    threads = workers + [reporter, writer] + ([sampler] if sampler else [])
    metrics.start()
    t0 = time.monotonic()
    for t in threads:
        t.start()

    S = cfg.streams
    offset = 0
    source_error = None
    try:
        for chunk in source:
            if failed.is_set():
                break
            n = len(chunk)
            metrics.add_in(n)
            for s in range(S):
                first = (s - offset) % S
                if first < n:
                    worker_qs[s].put(PacketChunk(chunk.src[first::S], chunk.dst[first::S],
                                                 chunk.ts[first::S]))
            offset = (offset + n) % S
    except Exception as exc:  # noqa: BLE001 - flush what we have, then report
        source_error = exc
        log.error("source failed: %s", exc)
    finally:
        for q in worker_qs:
            q.put(_STOP)
        for w in workers:
            w.join()
        reporter.join()
        writer.join()
        if sampler:
            sampler.stop.set()
            sampler.join()
    metrics.sample()

    durable = writer.durable
    report = RunReport(
        packets_in=metrics.packets_in,
        packets_out=sum(sum(sum_all(A) for A in u.matrices) for u in durable),
        skipped=dict(getattr(source, "skipped", {})),
        blocks=reporter.blocks,
        windows=sum(1 for u in durable if not u.partial),
        partial_units=sum(1 for u in durable if u.partial),
        units=[(u.window_seq, u.packets, u.partial) for u in durable],
        elapsed_s=time.monotonic() - t0,
        last_durable_window=durable[-1].window_seq if durable else None,
        metrics=list(metrics.rows),
    )
    err = source_error or reporter.error or writer.error
    if err is not None:
        stage = "source" if source_error else "anonymize/build" if reporter.error else "sink"
        report.error = f"{stage}: {err}"
        raise PipelineError(f"pipeline aborted in {stage}: {err}", report) from err
    return report
