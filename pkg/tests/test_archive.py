import json
import tarfile

import numpy as np
import pytest

from hypertraffic.archive import (
    ArchiveError,
    BlobError,
    BlobMeta,
    DecodeError,
    compress,
    decode_matrix,
    decompress,
    deserialize,
    encode_matrix,
    open_archive,
    read_archive,
    serialize,
    write_archive,
)
from hypertraffic.matrix import TrafficMatrix, from_triples, sum_all


def random_matrix(rng, nnz):
    if nnz == 0:
        return TrafficMatrix.empty()
    keys = np.unique(rng.integers(0, 2**64, nnz * 2, dtype=np.uint64))[:nnz]
    return TrafficMatrix(keys >> np.uint64(32), keys & np.uint64(0xFFFFFFFF),
                         rng.integers(1, 1000, len(keys)).astype(np.uint64))


def test_empty_blob_layout():
    blob = serialize(TrafficMatrix.empty())
    assert len(blob) == 56 and blob[:4] == b"HSTM"
    assert int.from_bytes(blob[8:16], "little") == 2**32
    assert int.from_bytes(blob[24:32], "little") == 0


def test_blob_field_layout():
    A = from_triples([(3, 4, 5)], 16, 32)
    blob = serialize(A, BlobMeta(5, 10, 20, partial=True))
    assert blob[4:6] == (1).to_bytes(2, "little") and blob[6:8] == (1).to_bytes(2, "little")
    assert [int.from_bytes(blob[k:k + 8], "little") for k in range(8, 56, 8)] == [16, 32, 1, 5, 10, 20]
    assert blob[56:] == (3).to_bytes(4, "little") + (4).to_bytes(4, "little") + (5).to_bytes(8, "little")


def test_canonical_bytes():
    a = from_triples([(5, 1, 2), (1, 9, 3), (5, 1, 1)])
    b = from_triples([(1, 9, 3), (5, 1, 3)])
    assert serialize(a) == serialize(b)


@pytest.mark.parametrize("nnz", [0, 1, 1000, 100_000])
def test_roundtrip(rng, nnz):
    A = random_matrix(rng, nnz)
    B, meta = decode_matrix(encode_matrix(A, BlobMeta(sum_all(A), 1, 2)))
    assert B == A and meta == BlobMeta(sum_all(A), 1, 2)


def test_compress_is_zstd_frame():
    frame = compress(b"")
    assert frame[:4] == b"\x28\xb5\x2f\xfd"
    assert decompress(frame) == b""


def test_corrupt_frame_offset(rng):
    frame = bytearray(encode_matrix(random_matrix(rng, 50_000)))
    frame[:4] = b"XXXX"
    with pytest.raises(DecodeError) as ei:
        decompress(bytes(frame))
    assert ei.value.offset == 0
    good = encode_matrix(random_matrix(rng, 10))
    with pytest.raises(DecodeError, match="truncated") as ei:
        decompress(good[:-3])
    assert ei.value.offset == len(good) - 3


def test_blob_validation():
    blob = serialize(from_triples([(1, 1, 1), (2, 2, 2)]))
    with pytest.raises(BlobError):
        deserialize(blob[:-1])
    with pytest.raises(BlobError):
        deserialize(b"NOPE" + blob[4:])
    swapped = blob[:56] + blob[72:] + blob[56:72]
    with pytest.raises(BlobError, match="sorted"):
        deserialize(swapped)


def _blobs(rng, k):
    return [serialize(random_matrix(rng, 200), BlobMeta(0, 0, 0)) for _ in range(k)]


def _good_blobs(rng, k):
    mats = [random_matrix(rng, 200) for _ in range(k)]
    return mats, [serialize(A) for A in mats]


def test_archive_64_members(tmp_path, rng):
    mats, blobs = _good_blobs(rng, 64)
    unit = write_archive(blobs, tmp_path / "a.tar", {"created": 1.0}, window_seq=3)
    with tarfile.open(unit.path) as tar:
        names = tar.getnames()
        assert tar.getmembers()[0].mtime == 1
    assert len(names) == 65 and names[0] == "manifest.json"
    assert names[1] == "w00000003_b00.gbz" and names[-1] == "w00000003_b63.gbz"
    manifest, back = read_archive(unit.path)
    assert back == mats
    assert manifest["total_packets"] == sum(sum_all(A) for A in mats)


def test_empty_archive_forbidden(tmp_path):
    with pytest.raises(ArchiveError):
        write_archive([], tmp_path / "a.tar", {})


def test_truncated_archive(tmp_path, rng):
    _, blobs = _good_blobs(rng, 4)
    unit = write_archive(blobs, tmp_path / "a.tar", {})
    data = unit.path.read_bytes()
    (tmp_path / "t.tar").write_bytes(data[:len(data) // 2])
    with pytest.raises(ArchiveError):
        read_archive(tmp_path / "t.tar")


def _rewrite(src, dst, mutate):
    with tarfile.open(src) as tin, tarfile.open(dst, "w", format=tarfile.USTAR_FORMAT) as tout:
        for info in tin.getmembers():
            data = tin.extractfile(info).read()
            for info2, data2 in mutate(info, data):
                import io
                info2.size = len(data2)
                tout.addfile(info2, io.BytesIO(data2))


def test_missing_and_duplicate_members(tmp_path, rng):
    _, blobs = _good_blobs(rng, 3)
    unit = write_archive(blobs, tmp_path / "a.tar", {})
    _rewrite(unit.path, tmp_path / "missing.tar",
             lambda i, d: [] if i.name.endswith("b01.gbz") else [(i, d)])
    with pytest.raises(ArchiveError, match="missing"):
        read_archive(tmp_path / "missing.tar")
    _rewrite(unit.path, tmp_path / "dup.tar",
             lambda i, d: [(i, d), (i, d)] if i.name.endswith("b01.gbz") else [(i, d)])
    with pytest.raises(ArchiveError, match="duplicate"):
        read_archive(tmp_path / "dup.tar")


def test_member_corruption_is_isolated(tmp_path, rng):
    mats, blobs = _good_blobs(rng, 4)
    unit = write_archive(blobs, tmp_path / "a.tar", {})

    def damage(info, data):
        if info.name.endswith("b02.gbz"):
            data = data[:10] + bytes(len(data) - 10)
        return [(info, data)]

    _rewrite(unit.path, tmp_path / "bad.tar", damage)
    with pytest.raises(ArchiveError):
        read_archive(tmp_path / "bad.tar")
    contents = open_archive(tmp_path / "bad.tar", strict=False)
    assert list(contents.errors) == ["w00000000_b02.gbz"]
    assert contents.matrices == [mats[0], mats[1], mats[3]]


def test_manifest_is_json(tmp_path, rng):
    _, blobs = _good_blobs(rng, 2)
    unit = write_archive(blobs, tmp_path / "a.tar", {"note": "x", "created": 5})
    with tarfile.open(unit.path) as tar:
        m = json.loads(tar.extractfile("manifest.json").read())
    assert m["note"] == "x" and [b["name"] for b in m["blocks"]] == unit.members
