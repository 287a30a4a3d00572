#!/usr/bin/env python3
"""Convert the digits bundled with the `mnist` npm package into IDX files.

Usage: mnist_from_npm.py <node_modules/mnist/src/digits> <out_dir> [n_test]

Writes train-images-idx3-ubyte / train-labels-idx1-ubyte and the matching
t10k-* pair. The last `n_test` digits of every class go to the test split.
"""
import json
import os
import struct
import sys


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, out = sys.argv[1], sys.argv[2]
    n_test = int(sys.argv[3]) if len(sys.argv) > 3 else 200
    train, test = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            raw = json.load(f)["data"]
        count = len(raw) // 784
        for i in range(count):
            px = [min(255, max(0, round(v * 255))) for v in raw[i * 784:(i + 1) * 784]]
            (test if i >= count - n_test else train).append((px, digit))
    # interleave classes deterministically
    train.sort(key=lambda t: hash(bytes(t[0])) & 0xFFFFFFFF)
    os.makedirs(out, exist_ok=True)
    for name, rows in (("train", train), ("t10k", test)):
        write_images(os.path.join(out, f"{name}-images-idx3-ubyte"), [r[0] for r in rows])
        write_labels(os.path.join(out, f"{name}-labels-idx1-ubyte"), [r[1] for r in rows])
        print(name, len(rows))


if __name__ == "__main__":
    main()
