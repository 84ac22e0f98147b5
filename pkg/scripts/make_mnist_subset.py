#!/usr/bin/env python3
"""Convert mlxtend's bundled 5000-digit MNIST subset into IDX files.

The public MNIST mirrors are not always reachable; mlxtend ships 500 real
digits per class as a CSV (784 pixel columns then the label).  This script
rewrites them in the standard big-endian IDX layout so the rest of the
pipeline reads them exactly like the official files.

Usage::

    pip download --no-deps mlxtend -d /tmp/mlx
    python scripts/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/mnist5k
"""

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from mothnet.dataset import write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def load_csv(source: Path) -> np.ndarray:
    if source.suffix == ".whl":
        with zipfile.ZipFile(source) as whl:
            raw = gzip.decompress(whl.read(MEMBER))
    else:
        raw = gzip.decompress(source.read_bytes())
    return np.loadtxt(io.BytesIO(raw), delimiter=",")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", type=Path, help="mlxtend wheel or mnist_5k.csv.gz")
    parser.add_argument("out_dir", type=Path)
    args = parser.parse_args()

    table = load_csv(args.source)
    images = table[:, :-1].reshape(-1, 28, 28).astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(args.out_dir / "train-images-idx3-ubyte.gz", images)
    write_idx(args.out_dir / "train-labels-idx1-ubyte.gz", labels)
    print(f"wrote {len(labels)} digits to {args.out_dir}")


if __name__ == "__main__":
    main()
