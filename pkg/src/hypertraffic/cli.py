"""``hypertraffic`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .analytics import hierarchical_quantities, quantities_report
from .anonymize import KEY_ENV_VAR, AnonKey, Anonymizer, KeyMaterialError, LookupTable, TableError
from .archive import (
    ArchiveError,
    BlobMeta,
    DirectorySink,
    compress,
    open_archive,
    serialize,
    write_archive,
)
from .assoc import LogFormatError, LogParser, daily_report
from .matrix import RangeSet, exclude, subrange, sum_all
from .sources import MODELS, SourceError, SyntheticSource, TimedSource, read_records, write_csv
from .stream import PipelineError, PipelineMetrics, WindowConfig, metrics_tsv, run_pipeline

log = logging.getLogger("hypertraffic")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

# Published deployment rates, printed next to local measurements for comparison.
REFERENCE_PACKET_RATE = (7e5, 2.1e6)
REFERENCE_PARSE_RATE = 2.5e4
REFERENCE_ANALYZE_RATE = 4e4


class ConfigError(Exception):
    pass


def _load_key(path: str | None) -> AnonKey:
    try:
        if path:
            return AnonKey.from_file(path)
        return AnonKey.from_env()
    except KeyMaterialError as exc:
        raise ConfigError(f"{exc} (use --key-file or set {KEY_ENV_VAR})") from None


def _window_args(p: argparse.ArgumentParser, block_size: int = 1 << 17, blocks: int = 64) -> None:
    p.add_argument("--streams", type=int, default=8, help="round-robin stream count (default 8)")
    p.add_argument("--block-size", type=int, default=block_size, help="packets per block")
    p.add_argument("--blocks", type=int, default=blocks, help="blocks per window/archive")
    p.add_argument("--mode", choices=Anonymizer.MODES, default="direct")
    p.add_argument("--key-file", help=f"anonymization key file (else ${KEY_ENV_VAR})")
    p.add_argument("--table", help="prebuilt lookup table (table mode)")
    p.add_argument("--table-bits", type=int, default=32,
                   help="address width when building a table on the fly")
    p.add_argument("--worker-queue", type=int, default=16)
    p.add_argument("--reporter-queue", type=int, default=256)


def _window_config(args) -> WindowConfig:
    try:
        return WindowConfig(args.block_size, args.blocks, args.streams, args.mode,
                            args.worker_queue, args.reporter_queue)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _anonymizer(args, key: AnonKey | None = None) -> Anonymizer:
    key = key or _load_key(args.key_file)
    if args.mode == "direct":
        return Anonymizer(key, "direct")
    try:
        if args.table:
            table = LookupTable.load(args.table, key)
            return Anonymizer(key, "table", table.bits, table)
        log.info("building %d-bit lookup table (%d bytes)", args.table_bits,
                 LookupTable.required_bytes(args.table_bits))
        return Anonymizer(key, "table", args.table_bits)
    except (TableError, OSError, ValueError) as exc:
        raise ConfigError(f"lookup table: {exc}") from None


# -- build --------------------------------------------------------------------


def cmd_build(args) -> int:
    cfg = _window_config(args)
    if args.input is None and args.synthetic is None:
        raise ConfigError("give --input PATH or --synthetic N")
    if args.input is not None and not Path(args.input).is_file():
        raise ConfigError(f"input file not found: {args.input}")
    anonymizer = _anonymizer(args)
    if args.input is not None:
        source = read_records(args.input, args.format, args.error_budget)
    else:
        source = SyntheticSource(args.synthetic, args.model, args.seed, addr_bits=args.addr_bits)
    outdir = Path(args.output)
    sink = DirectorySink(outdir, extra_manifest={
        "block_size": cfg.block_size, "blocks_per_window": cfg.blocks_per_window,
        "streams": cfg.streams, "mode": cfg.mode,
        "key_fingerprint": anonymizer.key.fingerprint.hex()})
    status = EXIT_OK
    try:
        report = run_pipeline(source, cfg, sink, anonymizer, metrics_interval=args.metrics_interval)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        report = exc.report
        status = EXIT_FAIL
    (outdir / "metrics.tsv").write_text(metrics_tsv(report.metrics))
    summary = {k: v for k, v in vars(report).items() if k != "metrics"}
    summary["packets_per_s"] = report.packets_per_s
    summary["archives"] = [str(p) for p in sink.paths]
    (outdir / "run.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(f"packets={report.packets_in} archived={report.packets_out} "
          f"skipped={sum(report.skipped.values())} windows={report.windows} "
          f"partial={report.partial_units} rate={report.packets_per_s:.0f} pkt/s")
    return status


# -- stats --------------------------------------------------------------------


def cmd_stats(args) -> int:
    status = EXIT_OK

    def blocks():
        nonlocal status
        for path in args.archives:
            try:
                contents = open_archive(path, strict=not args.skip_bad_members)
            except ArchiveError as exc:
                print(f"error: {exc}", file=sys.stderr)
                status = EXIT_FAIL
                continue
            for name, err in contents.errors.items():
                print(f"error: {path}: {name}: {err}", file=sys.stderr)
                status = EXIT_FAIL
            yield from contents.matrices

    rows = list(hierarchical_quantities(blocks(), args.levels))
    rows.sort(key=lambda r: (r[0], r[1]))
    text = quantities_report(rows, args.format)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return status


# -- filter -------------------------------------------------------------------


def cmd_filter(args) -> int:
    try:
        rng = RangeSet.parse(args.range)
    except ValueError as exc:
        raise ConfigError(f"--range: {exc}") from None
    try:
        contents = open_archive(args.archive)
    except ArchiveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    op = exclude if args.exclude else subrange
    blobs = []
    for A, meta in zip(contents.matrices, contents.metas):
        B = op(A, rng)
        blobs.append(serialize(B, BlobMeta(sum_all(B), meta.ts_first, meta.ts_last, meta.partial)))
    manifest = dict(contents.manifest)
    manifest["blocks"] = [{k: v for k, v in b.items() if k in ("block_seq", "stream", "stream_seq")}
                          for b in manifest["blocks"]]
    manifest["filter"] = {"op": "exclude" if args.exclude else "include", "range": args.range,
                          "source_packets": contents.manifest.get("total_packets")}
    manifest.pop("total_packets", None)
    unit = write_archive(blobs, args.output, manifest, manifest.get("window_seq", 0))
    print(f"wrote {unit.path}: {len(unit.members)} members, {unit.manifest['total_packets']} packets")
    return EXIT_OK


# -- d4m-report ---------------------------------------------------------------


def cmd_d4m_report(args) -> int:
    path = Path(args.log)
    if not path.is_file():
        raise ConfigError(f"log file not found: {path}")
    date = args.date or path.stem
    parser = LogParser(args.error_budget, date)
    t0 = time.perf_counter()
    try:
        with open(path, encoding="utf-8") as fh:
            records = parser.parse(fh)
    except LogFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    t1 = time.perf_counter()
    report = daily_report(records, args.top_k, date, args.user_field, args.dst_field)
    t2 = time.perf_counter()
    report.parse_seconds, report.analyze_seconds = t1 - t0, t2 - t1
    txt, tsv = report.write(args.output_dir)
    n = len(records)
    parse_rate = n / report.parse_seconds if report.parse_seconds > 0 else 0.0
    analyze_rate = n / report.analyze_seconds if report.analyze_seconds > 0 else 0.0
    print(f"records={n} skipped={parser.skipped}")
    print(f"parse rate:    {parse_rate:.3g} records/s (reference {REFERENCE_PARSE_RATE:.2g})")
    print(f"analysis rate: {analyze_rate:.3g} records/s (reference {REFERENCE_ANALYZE_RATE:.2g})")
    print(f"wrote {txt} and {tsv}")
    return EXIT_OK


# -- bench --------------------------------------------------------------------


class _CompressingSink:
    """Serializes and compresses every window but keeps only the byte counts."""

    def __init__(self):
        self.compressed_bytes = 0
        self.packets = 0

    def write(self, unit):
        for blob in unit.blobs():
            self.compressed_bytes += len(compress(blob))
        self.packets += unit.packets


def cmd_bench(args) -> int:
    cfg = _window_config(args)
    if args.key_file or KEY_ENV_VAR in os.environ:
        key = _load_key(args.key_file)
    else:
        key = AnonKey.generate()
        log.info("no key configured; using an ephemeral random key")
    anonymizer = _anonymizer(args, key)
    addr_bits = anonymizer.bits if cfg.mode == "table" else 32
    inner = SyntheticSource(None, args.model, args.seed, addr_bits=addr_bits)
    source = TimedSource(inner, args.duration)
    sink = DirectorySink(args.archive_dir) if args.archive_dir else _CompressingSink()
    metrics = PipelineMetrics(cfg.streams)
    report = run_pipeline(source, cfg, sink, anonymizer, metrics, metrics_interval=1.0)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "bench_metrics.tsv").write_text(metrics_tsv(report.metrics))
    rates = [r["packets_per_s"] for r in report.metrics[:-1] if r["packets_per_s"] > 0]
    summary = {
        "duration_s": report.elapsed_s,
        "packets_generated": inner.emitted,
        "packets_in": report.packets_in,
        "packets_archived": report.packets_out,
        "packets_per_s": report.packets_per_s,
        "min_bucket_rate": min(rates, default=0.0),
        "max_bucket_rate": max(rates, default=0.0),
        "peak_rss_bytes": max((r["rss_bytes"] for r in report.metrics), default=0.0),
        "metric_rows": len(report.metrics),
        "config": {"streams": cfg.streams, "block_size": cfg.block_size,
                   "blocks_per_window": cfg.blocks_per_window, "mode": cfg.mode,
                   "table_bits": anonymizer.bits, "model": args.model},
        "reference_packets_per_s": list(REFERENCE_PACKET_RATE),
    }
    if isinstance(sink, _CompressingSink) and sink.packets:
        summary["compressed_bytes_per_packet"] = sink.compressed_bytes / sink.packets
    (outdir / "bench_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(f"{report.packets_in} packets in {report.elapsed_s:.1f}s: "
          f"{report.packets_per_s:.3g} pkt/s (reference {REFERENCE_PACKET_RATE[0]:.1g}"
          f"-{REFERENCE_PACKET_RATE[1]:.2g} pkt/s); {len(report.metrics)} metric rows")
    return EXIT_OK


# -- gen / mktable ------------------------------------------------------------


def cmd_gen(args) -> int:
    source = SyntheticSource(args.count, args.model, args.seed, addr_bits=args.addr_bits)
    if args.output == "-":
        from .sources import format_csv
        for chunk in source:
            sys.stdout.write(format_csv(chunk))
        return EXIT_OK
    n = write_csv(source, args.output)
    print(f"wrote {n} records to {args.output}")
    return EXIT_OK


def cmd_mktable(args) -> int:
    key = _load_key(args.key_file)
    t0 = time.perf_counter()
    try:
        table = LookupTable.build(key, args.bits)
    except TableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    table.save(args.output)
    print(f"wrote {args.bits}-bit table ({LookupTable.required_bytes(args.bits)} bytes) to "
          f"{args.output} in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hypertraffic",
                                 description="Anonymized hypersparse traffic matrices.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="packets -> anonymized matrices -> TAR archives")
    p.add_argument("--input", help="packet file")
    p.add_argument("--format", choices=("csv", "pcap"), default="csv")
    p.add_argument("--synthetic", type=int, help="generate N synthetic packets instead")
    p.add_argument("--model", choices=MODELS, default="heavy-tail")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--addr-bits", type=int, default=32)
    p.add_argument("--output", "-o", required=True, help="output directory")
    p.add_argument("--error-budget", type=int, default=100)
    p.add_argument("--metrics-interval", type=float, default=1.0)
    _window_args(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("stats", help="network quantities of archived windows")
    p.add_argument("archives", nargs="+")
    p.add_argument("--levels", type=int, default=0, help="hierarchical aggregation levels")
    p.add_argument("--format", choices=("tsv", "json"), default="tsv")
    p.add_argument("--output", "-o")
    p.add_argument("--skip-bad-members", action="store_true",
                   help="decode intact members of a damaged archive")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("filter", help="keep or drop traffic inside an address range")
    p.add_argument("archive")
    p.add_argument("--range", required=True, help="e.g. 10.0.0.0/8,167772160-167772200")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--include", action="store_true")
    g.add_argument("--exclude", action="store_true")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("d4m-report", help="daily connection-log report")
    p.add_argument("log")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--output-dir", "-o", default=".")
    p.add_argument("--date", help="report date (default: log file stem)")
    p.add_argument("--error-budget", type=int, default=100)
    p.add_argument("--user-field", default="userID")
    p.add_argument("--dst-field", default="DstIP")
    p.set_defaults(func=cmd_d4m_report)

    p = sub.add_parser("bench", help="synthetic throughput run with 1-second metrics")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--model", choices=MODELS, default="heavy-tail")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", default="bench")
    p.add_argument("--archive-dir", help="also write archives here")
    _window_args(p)
    p.set_defaults(func=cmd_bench, mode="table", table_bits=20)

    p = sub.add_parser("gen", help="write synthetic packets as canonical CSV")
    p.add_argument("--count", "-n", type=int, required=True)
    p.add_argument("--model", choices=MODELS, default="heavy-tail")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--addr-bits", type=int, default=32)
    p.add_argument("--output", "-o", default="-")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("mktable", help="precompute an anonymization lookup table")
    p.add_argument("--key-file")
    p.add_argument("--bits", type=int, default=32)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_mktable)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "top_k", 1) < 1:
        ap.error("--top-k must be at least 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SourceError, PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
