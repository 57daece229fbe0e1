"""Anonymized hypersparse traffic matrices and associative-array log analytics."""

__version__ = "0.1.0"

from .analytics import (
    HierarchicalAggregator,
    NetworkQuantities,
    compute_quantities,
    compute_vectors,
    hierarchical_aggregate,
    quantities_report,
)
from .anonymize import AnonKey, Anonymizer, LookupTable, anonymize, anonymize_array
from .archive import decode_matrix, encode_matrix, open_archive, read_archive, write_archive
from .assoc import AssocArray, array_quantities, daily_report, explode, parse_log, transpose_multiply
from .matrix import RangeSet, TrafficMatrix, add, exclude, subrange, sum_all, zero_norm
from .sources import generate_synthetic, read_records
from .stream import PacketBlock, WindowConfig, run_pipeline

__all__ = [
    "AnonKey", "Anonymizer", "AssocArray", "HierarchicalAggregator", "LookupTable",
    "NetworkQuantities", "PacketBlock", "RangeSet", "TrafficMatrix", "WindowConfig",
    "add", "anonymize", "anonymize_array", "array_quantities", "compute_quantities",
    "compute_vectors", "daily_report", "decode_matrix", "encode_matrix", "exclude",
    "explode", "generate_synthetic", "hierarchical_aggregate", "open_archive", "parse_log",
    "quantities_report", "read_archive", "read_records", "run_pipeline", "subrange",
    "sum_all", "transpose_multiply", "write_archive", "zero_norm",
]
