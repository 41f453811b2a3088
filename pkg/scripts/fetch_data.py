#!/usr/bin/env python3
"""Download the two benchmark datasets into a data directory.

This script is a convenience, not part of the library: the loaders only
ever read local files. Usage:

    python scripts/fetch_data.py [--data-dir data]

Files fetched:
  train-images-idx3-ubyte, train-labels-idx1-ubyte,
  t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte   (handwritten digits)
  pneumoniamnist.npz                               (chest X-ray benchmark)
"""

import argparse
import gzip
import sys
import urllib.request
from pathlib import Path

MNIST_BASE = "https://ossci-datasets.s3.amazonaws.com/mnist"
MNIST_FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]
PNEUMONIA_URL = "https://zenodo.org/record/6496656/files/pneumoniamnist.npz?download=1"


def fetch(url: str, dest: Path, decompress: bool = False) -> None:
    if dest.exists():
        print(f"already present: {dest}")
        return
    print(f"fetching {url}")
    with urllib.request.urlopen(url) as response:
        payload = response.read()
    if decompress:
        payload = gzip.decompress(payload)
    dest.write_bytes(payload)
    print(f"wrote {dest} ({len(payload):,} bytes)")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", default="data")
    args = parser.parse_args()
    data_dir = Path(args.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    try:
        for name in MNIST_FILES:
            fetch(f"{MNIST_BASE}/{name}.gz", data_dir / name, decompress=True)
        fetch(PNEUMONIA_URL, data_dir / "pneumoniamnist.npz")
    except OSError as exc:
        print(f"download failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
