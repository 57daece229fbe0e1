import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from hypertraffic.analytics import compute_quantities
from hypertraffic.anonymize import anonymize_array
from hypertraffic.estimators import (
    NetworkQuantityExtractor,
    PrefixPreservingAnonymizer,
    WindowMatrixBuilder,
)
from hypertraffic.matrix import TrafficMatrix
from conftest import REFERENCE_KEY

HEX = REFERENCE_KEY.hex()


def pairs(rng, n, bits=16):
    return rng.integers(0, 1 << bits, (n, 2))


def test_pipeline_features(rng, key):
    X = pairs(rng, 1000)
    pipe = make_pipeline(PrefixPreservingAnonymizer(key=HEX, mode="table", bits=16),
                         WindowMatrixBuilder(window_size=256, dims=1 << 16),
                         NetworkQuantityExtractor())
    F = pipe.fit_transform(X)
    assert F.shape == (4, 9) and F.dtype == np.uint64
    assert F[:, 0].tolist() == [256, 256, 256, 232]
    anon = anonymize_array(key, X.ravel(), 16).reshape(X.shape)
    W = TrafficMatrix.from_pairs(anon[:256, 0], anon[:256, 1], 1 << 16, 1 << 16)
    assert tuple(F[0]) == compute_quantities(W).as_tuple()
    names = pipe[-1].get_feature_names_out()
    assert names[0] == "valid_packets" and len(names) == 9


def test_direct_and_table_agree(rng):
    X = pairs(rng, 500)
    a = PrefixPreservingAnonymizer(key=HEX, bits=16).fit_transform(X)
    b = PrefixPreservingAnonymizer(key=HEX, mode="table", bits=16).fit_transform(X)
    np.testing.assert_array_equal(a, b)


def test_params_and_clone():
    est = WindowMatrixBuilder(window_size=64, drop_partial=True)
    assert est.get_params() == {"window_size": 64, "dims": 1 << 32, "drop_partial": True}
    c = clone(est)
    assert c is not est and c.get_params() == est.get_params()
    anon = PrefixPreservingAnonymizer(key=HEX).set_params(bits=24)
    assert anon.bits == 24


def test_drop_partial(rng):
    out = WindowMatrixBuilder(window_size=300, drop_partial=True).fit_transform(pairs(rng, 1000))
    assert len(out) == 3


def test_validation_errors(rng):
    with pytest.raises(NotFittedError):
        PrefixPreservingAnonymizer(key=HEX).transform([1, 2])
    anon = PrefixPreservingAnonymizer(key=HEX, bits=16).fit()
    with pytest.raises(ValueError, match="2\\*\\*16"):
        anon.transform([1, 70000])
    with pytest.raises(TypeError):
        anon.transform([1.5, 2.0])
    with pytest.raises(ValueError, match="shape"):
        WindowMatrixBuilder().fit_transform(np.arange(6))
    with pytest.raises(TypeError):
        NetworkQuantityExtractor().fit_transform([1, 2])
    with pytest.raises(ValueError):
        WindowMatrixBuilder(window_size=0).fit([])


def test_key_from_env(monkeypatch):
    monkeypatch.setenv("HYPERTRAFFIC_KEY", HEX)
    est = PrefixPreservingAnonymizer().fit()
    assert est.key_fingerprint_ == PrefixPreservingAnonymizer(key=HEX).fit().key_fingerprint_
