"""Write a small MNIST-format fixture from the digit arrays of the `mnist` npm package.

Usage: python3 scripts/make_mnist_fixture.py PACKAGE_DIR OUT_DIR [--test-per-class N]

PACKAGE_DIR is the unpacked npm package (it contains src/digits/0.json ... 9.json,
each a flat list of 28x28 grey levels in [0, 1]). Images are interleaved by class
with a fixed seed, the last N per class go to the test split, and both splits are
written as gzipped IDX files.
"""

import argparse
import gzip
import json
import random
import struct
from pathlib import Path


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + bytes(payload))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("package_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--test-per-class", type=int, default=200)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    train, test = [], []
    for digit in range(10):
        flat = json.loads((args.package_dir / "src" / "digits" / f"{digit}.json").read_text())["data"]
        images = [flat[i : i + 784] for i in range(0, len(flat) - 783, 784)]
        pixels = [[int(round(v * 255)) for v in img] for img in images]
        cut = len(pixels) - args.test_per_class
        train += [(p, digit) for p in pixels[:cut]]
        test += [(p, digit) for p in pixels[cut:]]

    rng = random.Random(args.seed)
    rng.shuffle(train)
    rng.shuffle(test)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, rows in (("train", train), ("t10k", test)):
        images = [v for p, _ in rows for v in p]
        labels = [d for _, d in rows]
        write_idx(args.out_dir / f"{name}-images-idx3-ubyte.gz", 0x803, [len(rows), 28, 28], images)
        write_idx(args.out_dir / f"{name}-labels-idx1-ubyte.gz", 0x801, [len(rows)], labels)
        print(f"{name}: {len(rows)} images")


if __name__ == "__main__":
    main()
