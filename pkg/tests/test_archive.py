import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fevgan.archive import ArchiveError, read_archive, read_manifest, tensor_checksum, write_archive


def test_roundtrip(tmp_path):
    blocks = {
        "w": np.random.default_rng(0).standard_normal((3, 4)).astype(np.float32),
        "steps": np.array([1, 2, 3], dtype=np.int64),
        "mask": np.array([0, 255], dtype=np.uint8),
        "empty": np.zeros((0, 5), np.float32),
    }
    path = write_archive(tmp_path / "a", blocks, {"note": "x"})
    got, manifest = read_archive(path)
    assert manifest["note"] == "x"
    for k, v in blocks.items():
        assert got[k].dtype == v.dtype and np.array_equal(got[k], v)
    assert read_manifest(path)["note"] == "x"


def test_float64_stored_as_float32(tmp_path):
    path = write_archive(tmp_path / "a", {"x": np.array([0.1, 0.2])})
    got, manifest = read_archive(path)
    assert got["x"].dtype == np.float32
    assert manifest["blocks"][0]["dtype"] == "<f4"


def test_corruption_detected(tmp_path):
    path = write_archive(tmp_path / "a", {"x": np.arange(100, dtype=np.float32)})
    data = bytearray(path.read_bytes())
    data[-3] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(ArchiveError, match="checksum"):
        read_archive(path)


@pytest.mark.parametrize("payload", [b"", b"NOTMAGIC" + b"\0" * 8, b"FEVARCH1" + b"\xff" * 8])
def test_malformed_files(tmp_path, payload):
    path = tmp_path / "bad"
    path.write_bytes(payload)
    with pytest.raises(ArchiveError):
        read_archive(path)


def test_truncated_file(tmp_path):
    path = write_archive(tmp_path / "a", {"x": np.arange(50, dtype=np.float32)})
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(ArchiveError):
        read_archive(path)


def test_missing_file(tmp_path):
    with pytest.raises(ArchiveError):
        read_archive(tmp_path / "nope")


def test_no_partial_file_left_on_failure(tmp_path):
    with pytest.raises(ArchiveError):
        write_archive(tmp_path / "a", {"x": np.array(["text"])})
    assert list(tmp_path.iterdir()) == []


def test_checksum_depends_on_names_and_values():
    a = {"x": np.ones(3, np.float32)}
    assert tensor_checksum(a) == tensor_checksum({"x": np.ones(3, np.float32)})
    assert tensor_checksum(a) != tensor_checksum({"y": np.ones(3, np.float32)})
    assert tensor_checksum(a) != tensor_checksum({"x": np.array([1, 1, 2], np.float32)})


@settings(max_examples=25, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(0, 4), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_roundtrip_property(tmp_path_factory, arr):
    path = write_archive(tmp_path_factory.mktemp("p") / "a", {"a": arr})
    got, _ = read_archive(path)
    assert got["a"].shape == arr.shape and np.array_equal(got["a"], arr)
