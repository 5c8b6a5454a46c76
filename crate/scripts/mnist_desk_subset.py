#!/usr/bin/env python3
"""Build the desk-scale MNIST subset shipped in data/mnist-desk.

Source: the `mnist` npm package (MIT, 10,000 MNIST digits stored as
per-class JSON arrays of [0,1] floats rounded to 3 decimals). Pixels are
re-quantized with round(v * 255), the digits are shuffled with a fixed
seed, and the first 2000 / next 1000 are written as gzipped IDX files.

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_desk_subset.py package/src/digits data/mnist-desk
"""
import gzip
import json
import os
import struct
import sys

import numpy as np

TRAIN, VAL = 2000, 1000


def write_idx(path, arr, labels=False):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        if labels:
            f.write(struct.pack(">II", 0x00000801, arr.shape[0]))
        else:
            f.write(struct.pack(">IIII", 0x00000803, *arr.shape))
        f.write(arr.astype(np.uint8).tobytes())


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            data = np.asarray(json.load(f)["data"], dtype=np.float64)
        data = data.reshape(-1, 28, 28)
        images.append(np.rint(data * 255.0).clip(0, 255))
        labels.append(np.full(data.shape[0], digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.RandomState(0).permutation(images.shape[0])
    images, labels = images[order], labels[order]
    os.makedirs(dst, exist_ok=True)
    splits = {"train": slice(0, TRAIN), "val": slice(TRAIN, TRAIN + VAL)}
    for name, sl in splits.items():
        write_idx(os.path.join(dst, f"{name}-images-idx3-ubyte.gz"), images[sl])
        write_idx(os.path.join(dst, f"{name}-labels-idx1-ubyte.gz"), labels[sl], labels=True)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
