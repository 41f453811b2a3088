import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaesim.data_io import (
    crop_center,
    load_dataset,
    make_batches,
    pad_images,
    parse_idx,
    parse_npz,
    write_idx,
)
from vaesim.errors import (
    InvalidArgument,
    IoError,
    MissingArray,
    ParseError,
    UnsupportedFormat,
)


def idx_bytes(dims, data):
    header = struct.pack(">HBB", 0, 0x08, len(dims)) + struct.pack(f">{len(dims)}I", *dims)
    return header + bytes(data)


class TestParseIdx:
    def test_three_dim_images(self):
        payload = bytes(range(24)) * 5
        dims, data = parse_idx(idx_bytes((5, 4, 6), payload))
        assert dims == (5, 4, 6)
        assert data.tobytes() == payload

    def test_one_dim_labels(self):
        dims, data = parse_idx(idx_bytes((7,), b"\x01\x02\x03\x04\x05\x06\x07"))
        assert dims == (7,)
        assert list(data) == [1, 2, 3, 4, 5, 6, 7]

    def test_magic_values_match_convention(self):
        # images magic 2051 = 0x00000803, labels magic 2049 = 0x00000801
        assert idx_bytes((1, 1, 1), b"\x00")[:4] == struct.pack(">I", 2051)
        assert idx_bytes((1,), b"\x00")[:4] == struct.pack(">I", 2049)

    def test_truncated_payload(self):
        buf = idx_bytes((2, 28, 28), b"")[:16]
        with pytest.raises(ParseError):
            parse_idx(buf)

    def test_truncated_header(self):
        with pytest.raises(ParseError):
            parse_idx(b"\x00\x00\x08\x03\x00\x00")

    def test_trailing_bytes_rejected(self):
        with pytest.raises(ParseError):
            parse_idx(idx_bytes((2,), b"abc"))

    def test_unsupported_type_code(self):
        buf = struct.pack(">HBB", 0, 0x0D, 1) + struct.pack(">I", 1) + b"\x00\x00\x00\x00"
        with pytest.raises(UnsupportedFormat):
            parse_idx(buf)

    def test_bad_leading_bytes(self):
        with pytest.raises(ParseError):
            parse_idx(b"\xff\xff\x08\x01" + struct.pack(">I", 1) + b"\x00")

    @given(
        dims=st.lists(st.integers(min_value=1, max_value=6), min_size=1, max_size=3),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    @settings(max_examples=40, deadline=None)
    def test_round_trip_reproduces_bytes(self, dims, seed):
        rng = np.random.default_rng(seed)
        data = rng.integers(0, 256, size=int(np.prod(dims)), dtype=np.uint8)
        buf = write_idx(dims, data)
        parsed_dims, parsed_data = parse_idx(buf)
        assert write_idx(parsed_dims, parsed_data) == buf


class TestParseNpz:
    def make_archive(self, tmp_path, **arrays):
        path = tmp_path / "a.npz"
        np.savez(path, **arrays)
        return path.read_bytes()

    def test_required_keys_present(self, tmp_path):
        buf = self.make_archive(
            tmp_path,
            train_images=np.zeros((3, 28, 28), np.uint8),
            train_labels=np.zeros((3, 1), np.uint8),
            test_images=np.zeros((2, 28, 28), np.uint8),
            test_labels=np.ones((2, 1), np.uint8),
        )
        arrays = parse_npz(buf)
        assert arrays["train_images"].shape == (3, 28, 28)
        assert set(np.unique(arrays["test_labels"])) <= {0, 1}

    def test_missing_array(self, tmp_path):
        buf = self.make_archive(tmp_path, train_labels=np.zeros(3, np.uint8))
        with pytest.raises(MissingArray):
            parse_npz(buf)

    def test_not_a_zip(self):
        with pytest.raises(ParseError):
            parse_npz(b"definitely not a zip archive")

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        arrays = {
            "train_images": rng.integers(0, 256, (4, 28, 28), dtype=np.uint8),
            "train_labels": rng.integers(0, 2, (4, 1), dtype=np.uint8),
            "test_images": rng.integers(0, 256, (2, 28, 28), dtype=np.uint8),
            "test_labels": rng.integers(0, 2, (2, 1), dtype=np.uint8),
        }
        first = parse_npz(self.make_archive(tmp_path, **arrays))
        second = parse_npz(self.make_archive(tmp_path, **first))
        for key, arr in arrays.items():
            assert second[key].dtype == arr.dtype
            assert np.array_equal(second[key], arr)


class TestLoadDataset:
    def test_mnist_fixture(self, mnist_fixture_dir):
        ds = load_dataset("mnist", mnist_fixture_dir)
        assert ds.train.images.shape == (96, 1, 32, 32)
        assert ds.test.images.shape == (32, 1, 32, 32)
        assert ds.train.labels.shape == (96,)
        assert ds.train.images.min() >= 0.0 and ds.train.images.max() <= 1.0
        assert ds.num_classes == 10

    def test_pneumonia_fixture_merges_val_into_test(self, pneumonia_fixture_dir):
        ds = load_dataset("pneumonia", pneumonia_fixture_dir)
        assert ds.train.images.shape[0] == 60
        assert ds.test.images.shape[0] == 30  # 10 val + 20 test
        assert ds.test.labels.ndim == 1
        assert ds.num_classes == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            load_dataset("mnist", tmp_path)

    def test_unknown_name(self, tmp_path):
        with pytest.raises(InvalidArgument):
            load_dataset("cifar", tmp_path)

    def test_padding_preserves_content(self, mnist_fixture_dir):
        ds = load_dataset("mnist", mnist_fixture_dir)
        padded = ds.train.images[:, 0]
        assert padded.shape[1:] == (32, 32)
        # border introduced by padding is zero, center crop inverts the pad
        assert np.all(padded[:, :2, :] == 0) and np.all(padded[:, :, -2:] == 0)
        inner = crop_center(padded, 28)
        assert np.array_equal(pad_images(inner, 32), padded)


class TestMakeBatches:
    def test_slice_lengths(self):
        batches = make_batches(10, 4, seed=0)
        assert [len(b) for b in batches] == [4, 4, 2]

    def test_single_full_slice(self):
        batches = make_batches(2048, 2048, seed=0)
        assert len(batches) == 1 and len(batches[0]) == 2048

    def test_determinism(self):
        a = make_batches(100, 7, seed=42)
        b = make_batches(100, 7, seed=42)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_zero_batch_size(self):
        with pytest.raises(InvalidArgument):
            make_batches(10, 0, seed=0)

    @given(
        n=st.integers(min_value=1, max_value=500),
        batch_size=st.integers(min_value=1, max_value=64),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    @settings(max_examples=60, deadline=None)
    def test_batches_partition_the_index_range(self, n, batch_size, seed):
        batches = make_batches(n, batch_size, seed)
        joined = np.concatenate(batches)
        assert np.array_equal(np.sort(joined), np.arange(n))
