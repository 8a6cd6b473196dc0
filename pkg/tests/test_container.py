"""Bit-exact container round trips and format-violation handling."""

import json
import struct

import numpy as np
import pytest

from anyview.container import MAGIC, read_container, write_container
from anyview.errors import BadMagic, BadVersion, BoundsViolation, CorruptHeader, InvalidConfig

DTYPES = [np.float32, np.float64, np.uint8]


def random_entries(rng, max_tensors=6):
    entries = {}
    for k in range(rng.integers(0, max_tensors + 1)):
        ndim = int(rng.integers(0, 4))
        shape = tuple(int(d) for d in rng.integers(1, 5, size=ndim))
        dtype = DTYPES[rng.integers(0, 3)]
        if dtype == np.uint8:
            arr = rng.integers(0, 256, size=shape).astype(np.uint8)
        else:
            arr = rng.normal(size=shape).astype(dtype)
        entries[f"tensor_{k}"] = arr
    return entries


class TestRoundTrip:
    def test_empty(self):
        blob = write_container({})
        assert read_container(blob) == {}

    def test_scalar_f64(self):
        blob = write_container({"x": np.array(3.5)})
        out = read_container(blob)
        assert out["x"].dtype == np.float64
        assert out["x"].shape == ()
        assert float(out["x"]) == 3.5

    def test_fuzz_100_files(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            entries = random_entries(rng)
            blob = write_container(entries)
            again = write_container(read_container(blob))
            assert blob == again
            out = read_container(blob)
            assert list(out) == list(entries)
            for k in entries:
                assert out[k].dtype == entries[k].dtype
                assert out[k].shape == entries[k].shape
                np.testing.assert_array_equal(out[k], entries[k])

    def test_order_preserved(self):
        entries = {"b": np.zeros(2, np.float32), "a": np.ones(3, np.uint8)}
        assert list(read_container(write_container(entries))) == ["b", "a"]


class TestFormatErrors:
    def test_bad_magic(self):
        blob = bytearray(write_container({"x": np.zeros(2, np.float32)}))
        blob[:8] = b"NOTMAGIC"
        with pytest.raises(BadMagic):
            read_container(bytes(blob))

    def test_truncated(self):
        with pytest.raises(BadMagic):
            read_container(MAGIC[:4])

    def test_bad_version(self):
        blob = bytearray(write_container({}))
        struct.pack_into("<I", blob, 8, 99)
        with pytest.raises(BadVersion):
            read_container(bytes(blob))

    def test_corrupt_header_json(self):
        header = b"not json at all"
        blob = MAGIC + struct.pack("<I", 1) + struct.pack("<I", len(header)) + header
        with pytest.raises(CorruptHeader):
            read_container(blob)

    def test_header_longer_than_file(self):
        blob = MAGIC + struct.pack("<I", 1) + struct.pack("<I", 10_000) + b"{}"
        with pytest.raises(CorruptHeader):
            read_container(blob)

    def test_unknown_dtype(self):
        header = json.dumps(
            [{"name": "x", "dtype": "i64", "shape": [1], "byte_offset": 0}]
        ).encode()
        blob = MAGIC + struct.pack("<I", 1) + struct.pack("<I", len(header)) + header + b"\0" * 8
        with pytest.raises(CorruptHeader):
            read_container(blob)

    def test_bounds_violation(self):
        header = json.dumps(
            [{"name": "x", "dtype": "f64", "shape": [4], "byte_offset": 0}]
        ).encode()
        blob = MAGIC + struct.pack("<I", 1) + struct.pack("<I", len(header)) + header + b"\0" * 16
        with pytest.raises(BoundsViolation):
            read_container(blob)

    def test_overlapping_tensors(self):
        header = json.dumps(
            [
                {"name": "a", "dtype": "f32", "shape": [2], "byte_offset": 0},
                {"name": "b", "dtype": "f32", "shape": [2], "byte_offset": 4},
            ]
        ).encode()
        blob = MAGIC + struct.pack("<I", 1) + struct.pack("<I", len(header)) + header + b"\0" * 12
        with pytest.raises(BoundsViolation):
            read_container(blob)

    def test_descending_offsets(self):
        header = json.dumps(
            [
                {"name": "a", "dtype": "f32", "shape": [1], "byte_offset": 4},
                {"name": "b", "dtype": "f32", "shape": [1], "byte_offset": 0},
            ]
        ).encode()
        blob = MAGIC + struct.pack("<I", 1) + struct.pack("<I", len(header)) + header + b"\0" * 8
        with pytest.raises(BoundsViolation):
            read_container(blob)

    def test_duplicate_names(self):
        header = json.dumps(
            [
                {"name": "a", "dtype": "f32", "shape": [1], "byte_offset": 0},
                {"name": "a", "dtype": "f32", "shape": [1], "byte_offset": 4},
            ]
        ).encode()
        blob = MAGIC + struct.pack("<I", 1) + struct.pack("<I", len(header)) + header + b"\0" * 8
        with pytest.raises(CorruptHeader):
            read_container(blob)

    def test_unsupported_write_dtype(self):
        with pytest.raises(InvalidConfig):
            write_container({"x": np.zeros(2, dtype=np.int64)})
