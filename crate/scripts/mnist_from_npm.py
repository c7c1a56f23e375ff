#!/usr/bin/env python3
"""Build MNIST IDX files from the digits bundled in the npm `mnist` package.

The package ships 10,000 labelled 28x28 digits as JSON (pixels already
scaled to [0, 1] with three decimals). They are shuffled with a fixed seed
and split into 8,000 training and 2,000 test images.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""
import json
import random
import struct
import sys
from pathlib import Path

TRAIN = 8000


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
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    samples = []
    for digit in range(10):
        rows = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(rows) % 784 == 0
        for i in range(0, len(rows), 784):
            pixels = [min(255, max(0, round(v * 255))) for v in rows[i : i + 784]]
            samples.append((pixels, digit))
    random.Random(20220701).shuffle(samples)
    dst.mkdir(parents=True, exist_ok=True)
    train, test = samples[:TRAIN], samples[TRAIN:]
    write_images(dst / "train-images-idx3-ubyte", [s[0] for s in train])
    write_labels(dst / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_images(dst / "t10k-images-idx3-ubyte", [s[0] for s in test])
    write_labels(dst / "t10k-labels-idx1-ubyte", [s[1] for s in test])
    print(f"wrote {len(train)} train / {len(test)} test images to {dst}")


if __name__ == "__main__":
    main()
