#!/usr/bin/env python3
"""Convert the digit JSON files of the `mnist` npm package to IDX files.

Each digits/<d>.json holds {"data": [...]}: flattened 28x28 images with
values in [0, 1]. Output: images.idx (uint8, N x 28 x 28) and labels.idx.

usage: mnist_npm_to_idx.py <package>/src/digits <out_dir>
"""
import json
import struct
import sys
from pathlib import Path


def idx(shape, payload):
    head = bytes([0, 0, 8, len(shape)]) + b"".join(struct.pack(">I", d) for d in shape)
    return head + bytes(payload)


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    pixels, labels = [], []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0, f"{digit}.json is not a whole number of images"
        pixels.extend(min(255, max(0, round(v * 255))) for v in data)
        labels.extend([digit] * (len(data) // 784))
    n = len(labels)
    (out / "images.idx").write_bytes(idx([n, 28, 28], pixels))
    (out / "labels.idx").write_bytes(idx([n], labels))
    print(f"wrote {n} digits to {out}")


if __name__ == "__main__":
    main()
