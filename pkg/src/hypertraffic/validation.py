"""Input checks shared by the estimator wrappers and the CLI."""

from __future__ import annotations

import numpy as np

from .matrix import TrafficMatrix
from .sources import PacketChunk


def check_addresses(X, bits: int = 32) -> np.ndarray:
    """Return ``X`` as a uint32 array, rejecting non-integers and out-of-range ids."""
    arr = np.asarray(X)
    if arr.dtype == object or not (np.issubdtype(arr.dtype, np.integer) or arr.size == 0):
        raise TypeError(f"addresses must be integers, got dtype {arr.dtype}")
    if arr.size:
        lo, hi = int(arr.min()), int(arr.max())
        if lo < 0 or hi >= 1 << bits:
            raise ValueError(f"addresses must lie in [0, 2**{bits}); found [{lo}, {hi}]")
    return arr.astype(np.uint32)


def check_pairs(X, bits: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Split ``X`` into source and destination columns.

    Accepts an ``(n, 2)`` array-like or a :class:`PacketChunk`.
    """
    if isinstance(X, PacketChunk):
        return check_addresses(X.src, bits), check_addresses(X.dst, bits)
    arr = check_addresses(X, bits)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of (src, dst) pairs, got shape {arr.shape}")
    return arr[:, 0], arr[:, 1]


def check_matrices(X) -> list[TrafficMatrix]:
    if isinstance(X, TrafficMatrix):
        return [X]
    mats = list(X)
    bad = [type(m).__name__ for m in mats if not isinstance(m, TrafficMatrix)]
    if bad:
        raise TypeError(f"expected TrafficMatrix windows, got {sorted(set(bad))}")
    return mats
