#!/usr/bin/env python3
"""Convert the digits bundled with the `mnist` npm package (MIT, 10k MNIST
samples stored as 3-decimal floats) into gzipped IDX files.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_subset_from_npm.py package/src/digits data/mnist-subset
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28
TEST_PER_CLASS = 200


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload)


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        count = len(raw) // (SIDE * SIDE)
        samples = []
        for i in range(count):
            px = raw[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            samples.append((bytes(min(255, max(0, round(v * 255))) for v in px), digit))
        test.extend(samples[:TEST_PER_CLASS])
        train.extend(samples[TEST_PER_CLASS:])
    rng = random.Random(20230101)
    rng.shuffle(train)
    rng.shuffle(test)
    for name, split in (("train", train), ("t10k", test)):
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 0x00000803, (len(split), SIDE, SIDE),
                  b"".join(s for s, _ in split))
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 0x00000801, (len(split),),
                  bytes(l for _, l in split))
        print(name, len(split))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
