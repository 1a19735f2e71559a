"""Rebuild the bundled MNIST subset (4,000 train / 1,000 test IDX files).

The source is the 5,000-image MNIST sample that ships inside the ``mlxtend``
wheel (500 images per digit).  Run once with mlxtend installed:

    pip install mlxtend
    python scripts/build_mnist_subset.py
"""
import argparse
import gzip
from importlib import resources
from pathlib import Path

import numpy as np

from aflsim.data import write_idx

TEST_PER_CLASS = 100


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path,
                        default=Path(__file__).resolve().parents[1] / "src" / "aflsim" / "data" / "mnist")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    raw = (resources.files("mlxtend") / "data" / "data" / "mnist_5k.csv.gz").read_bytes()
    table = np.loadtxt(gzip.decompress(raw).decode().splitlines(), delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1].astype(np.uint8), table[:, -1].astype(np.uint8)

    rng = np.random.default_rng(args.seed)
    test_idx, train_idx = [], []
    for digit in range(10):
        idx = rng.permutation(np.flatnonzero(labels == digit))
        test_idx.append(idx[:TEST_PER_CLASS])
        train_idx.append(idx[TEST_PER_CLASS:])
    test_idx = rng.permutation(np.concatenate(test_idx))
    train_idx = rng.permutation(np.concatenate(train_idx))

    args.out.mkdir(parents=True, exist_ok=True)
    for name, idx in (("train", train_idx), ("t10k", test_idx)):
        write_idx(pixels[idx].reshape(-1, 28, 28), args.out / f"{name}-images-idx3-ubyte.gz")
        write_idx(labels[idx], args.out / f"{name}-labels-idx1-ubyte.gz")
        print(f"{name}: {idx.size} images")


if __name__ == "__main__":
    main()
