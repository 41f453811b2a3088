"""Dataset parsing and batching.

Two on-disk containers are supported:

* IDX, the classic handwritten-digit container: a big-endian header
  (two zero bytes, a type code, a dimension count, then one u32 per
  dimension) followed by raw data bytes.
* NPZ, a ZIP archive of ``.npy`` members as produced by ``numpy.savez``,
  used by the medical benchmark collection.

Images are returned as float arrays in [0, 1], zero-padded from 28x28 to
32x32 so that three stride-2 layers divide the spatial dims exactly.
"""

from __future__ import annotations

import io
import math
import struct
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    InvalidArgument,
    IoError,
    MissingArray,
    ParseError,
    UnsupportedFormat,
)

IDX_UBYTE = 0x08
IMAGE_SIZE = 32

REQUIRED_NPZ_KEYS = ("train_images", "train_labels", "test_images", "test_labels")

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
PNEUMONIA_FILE = "pneumoniamnist.npz"

DATASET_NAMES = ("mnist", "pneumonia")


@dataclass(frozen=True)
class SplitPart:
    """One split: images (N, C, H, W) float32 in [0, 1] and labels (N,) int64."""

    images: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.images.shape[0]


@dataclass(frozen=True)
class Dataset:
    name: str
    train: SplitPart
    test: SplitPart

    @property
    def num_classes(self) -> int:
        return int(self.train.labels.max()) + 1


def parse_idx(buf) -> tuple[tuple[int, ...], np.ndarray]:
    """Parse an IDX buffer into (dims, flat uint8 data).

    Raises ParseError on truncation or trailing bytes, UnsupportedFormat
    for any type code other than unsigned byte.
    """
    buf = bytes(buf)
    if len(buf) < 4:
        raise ParseError(f"IDX buffer of {len(buf)} bytes is shorter than its magic")
    zeros, type_code, ndim = struct.unpack(">HBB", buf[:4])
    if zeros != 0:
        raise ParseError(f"bad IDX magic: first two bytes are 0x{zeros:04x}, expected zero")
    if type_code != IDX_UBYTE:
        raise UnsupportedFormat(f"IDX type code 0x{type_code:02x} not supported (only 0x08, unsigned byte)")
    header_end = 4 + 4 * ndim
    if len(buf) < header_end:
        raise ParseError("IDX buffer truncated inside the dimension list")
    dims = struct.unpack(f">{ndim}I", buf[4:header_end])
    count = math.prod(dims)
    payload = len(buf) - header_end
    if payload < count:
        raise ParseError(f"IDX buffer truncated: header promises {count} bytes, found {payload}")
    if payload > count:
        raise ParseError(f"IDX buffer has {payload - count} trailing bytes")
    data = np.frombuffer(buf, dtype=np.uint8, offset=header_end)
    return dims, data


def write_idx(dims, data) -> bytes:
    """Inverse of parse_idx; serializes uint8 data under the IDX grammar."""
    dims = tuple(int(d) for d in dims)
    data = np.ascontiguousarray(data, dtype=np.uint8)
    if data.size != math.prod(dims):
        raise InvalidArgument(f"data size {data.size} does not match dims {dims}")
    header = struct.pack(">HBB", 0, IDX_UBYTE, len(dims))
    header += struct.pack(f">{len(dims)}I", *dims)
    return header + data.tobytes()


def parse_npz(buf) -> dict[str, np.ndarray]:
    """Read an in-memory NPZ archive holding the four split arrays.

    The returned map always contains train_images, train_labels,
    test_images and test_labels; extra members (such as a validation
    split) pass through untouched.
    """
    buf = bytes(buf)
    if not buf.startswith(b"PK"):
        raise ParseError("not a ZIP archive (missing PK signature)")
    try:
        with np.load(io.BytesIO(buf), allow_pickle=False) as npz:
            arrays = {name: npz[name] for name in npz.files}
    except zipfile.BadZipFile as exc:
        raise ParseError(f"not a ZIP archive: {exc}") from exc
    except ValueError as exc:
        raise UnsupportedFormat(f"unreadable array member: {exc}") from exc
    for key in REQUIRED_NPZ_KEYS:
        if key not in arrays:
            raise MissingArray(key)
    for name, arr in arrays.items():
        if arr.dtype.kind not in "uif":
            raise UnsupportedFormat(f"array {name!r} has unsupported dtype {arr.dtype}")
    return arrays


def pad_images(images, target=IMAGE_SIZE):
    """Zero-pad (N, H, W) images symmetrically up to (N, target, target)."""
    n, h, w = images.shape
    if h > target or w > target or (target - h) % 2 or (target - w) % 2:
        raise InvalidArgument(f"cannot pad {h}x{w} images symmetrically to {target}x{target}")
    py, px = (target - h) // 2, (target - w) // 2
    return np.pad(images, ((0, 0), (py, py), (px, px)))


def crop_center(images, size=28):
    """Crop (N, H, W) images back to the central size x size window."""
    n, h, w = images.shape
    oy, ox = (h - size) // 2, (w - size) // 2
    return images[:, oy : oy + size, ox : ox + size]


def _finalize_split(images_u8, labels) -> SplitPart:
    images_u8 = np.asarray(images_u8)
    if images_u8.ndim == 4 and images_u8.shape[-1] == 1:
        images_u8 = images_u8[..., 0]
    if images_u8.ndim != 3:
        raise ParseError(f"expected (N, H, W) image array, got shape {images_u8.shape}")
    x = images_u8.astype(np.float32) / 255.0
    x = pad_images(x)[:, None, :, :]
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if y.shape[0] != x.shape[0]:
        raise ParseError(f"{x.shape[0]} images but {y.shape[0]} labels")
    return SplitPart(images=x, labels=y)


def _read_file(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def load_dataset(name: str, data_dir) -> Dataset:
    """Load one of the two supported datasets from conventional file names.

    Pixels are scaled by 1/255 and padded to 32x32; labels are flattened
    to shape (N,). No downloading happens here; see scripts/fetch_data.py.
    """
    if name not in DATASET_NAMES:
        raise InvalidArgument(f"unknown dataset {name!r}, expected one of {DATASET_NAMES}")
    data_dir = Path(data_dir)
    if name == "mnist":
        raw = {}
        for key, fname in MNIST_FILES.items():
            dims, data = parse_idx(_read_file(data_dir / fname))
            raw[key] = data.reshape(dims)
        train = _finalize_split(raw["train_images"], raw["train_labels"])
        test = _finalize_split(raw["test_images"], raw["test_labels"])
    else:
        arrays = parse_npz(_read_file(data_dir / PNEUMONIA_FILE))
        test_images = arrays["test_images"]
        test_labels = arrays["test_labels"]
        # the published archive carries a separate validation split; the
        # 4708/1148 train/test convention folds it into the test side
        if "val_images" in arrays and "val_labels" in arrays:
            test_images = np.concatenate([arrays["val_images"], test_images])
            test_labels = np.concatenate(
                [arrays["val_labels"].reshape(-1), np.asarray(test_labels).reshape(-1)]
            )
        train = _finalize_split(arrays["train_images"], arrays["train_labels"])
        test = _finalize_split(test_images, test_labels)
    return Dataset(name=name, train=train, test=test)


def make_batches(n_samples: int, batch_size: int, seed: int) -> list[np.ndarray]:
    """Cut a seeded permutation of [0, n_samples) into consecutive index slices.

    The final short slice is kept. Identical (n_samples, batch_size, seed)
    always yields identical slices.
    """
    if batch_size < 1:
        raise InvalidArgument(f"batch_size must be >= 1, got {batch_size}")
    if n_samples < 0:
        raise InvalidArgument(f"n_samples must be >= 0, got {n_samples}")
    perm = np.random.default_rng(seed).permutation(n_samples)
    return [perm[i : i + batch_size] for i in range(0, n_samples, batch_size)]
