"""scikit-learn compatible wrappers.

These let the anonymize -> window -> quantities path run inside a
``sklearn.pipeline.Pipeline``::

    pipe = make_pipeline(PrefixPreservingAnonymizer(key=hexkey),
                         WindowMatrixBuilder(window_size=1 << 17),
                         NetworkQuantityExtractor())
    features = pipe.fit_transform(pairs)   # (n_windows, 9)
"""

from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .analytics import NetworkQuantities, compute_quantities
from .anonymize import AnonKey, Anonymizer, LookupTable
from .matrix import ADDRESS_SPACE, TrafficMatrix
from .validation import check_addresses, check_matrices, check_pairs


class PrefixPreservingAnonymizer(TransformerMixin, BaseEstimator):
    """Maps address arrays through a keyed prefix-preserving bijection.

    Parameters
    ----------
    key : str, optional
        Hex key material. When omitted, ``key_file`` is read, then the
        ``HYPERTRAFFIC_KEY`` environment variable.
    key_file : str, optional
    mode : {"direct", "table"}
        ``"table"`` precomputes all ``2**bits`` outputs during ``fit``.
    bits : int
        Address width.
    """

    def __init__(self, key=None, key_file=None, mode="direct", bits=32):
        self.key = key
        self.key_file = key_file
        self.mode = mode
        self.bits = bits

    def _load_key(self) -> AnonKey:
        if self.key is not None:
            return AnonKey.from_hex(self.key)
        if self.key_file is not None:
            return AnonKey.from_file(self.key_file)
        return AnonKey.from_env()

    def fit(self, X=None, y=None):
        key = self._load_key()
        table = LookupTable.build(key, self.bits) if self.mode == "table" else None
        self.anonymizer_ = Anonymizer(key, self.mode, self.bits, table)
        self.key_fingerprint_ = key.fingerprint.hex()
        return self

    def transform(self, X):
        check_is_fitted(self, "anonymizer_")
        return self.anonymizer_(check_addresses(X, self.bits))


class WindowMatrixBuilder(TransformerMixin, BaseEstimator):
    """Cuts ``(src, dst)`` pairs into consecutive constant-packet windows.

    ``transform`` returns one :class:`TrafficMatrix` per ``window_size``
    packets; a short final window is kept unless ``drop_partial``.
    """

    def __init__(self, window_size=1 << 17, dims=ADDRESS_SPACE, drop_partial=False):
        self.window_size = window_size
        self.dims = dims
        self.drop_partial = drop_partial

    def fit(self, X=None, y=None):
        if self.window_size < 1:
            raise ValueError("window_size must be positive")
        self.n_windows_seen_ = 0
        return self

    def transform(self, X) -> list[TrafficMatrix]:
        check_is_fitted(self, "n_windows_seen_")
        src, dst = check_pairs(X)
        n = len(src)
        stop = n - n % self.window_size if self.drop_partial else n
        out = [TrafficMatrix.from_pairs(src[lo:lo + self.window_size], dst[lo:lo + self.window_size],
                                        self.dims, self.dims)
               for lo in range(0, stop, self.window_size)]
        self.n_windows_seen_ += len(out)
        return out


class NetworkQuantityExtractor(TransformerMixin, BaseEstimator):
    """Turns a list of window matrices into an ``(n_windows, 9)`` count array."""

    def fit(self, X=None, y=None):
        self.n_features_out_ = len(fields(NetworkQuantities))
        return self

    def transform(self, X) -> np.ndarray:
        mats = check_matrices(X)
        out = np.zeros((len(mats), len(fields(NetworkQuantities))), dtype=np.uint64)
        for k, A in enumerate(mats):
            out[k] = compute_quantities(A).as_tuple()
        return out

    def get_feature_names_out(self, input_features=None):
        return np.array([f.name for f in fields(NetworkQuantities)], dtype=object)
