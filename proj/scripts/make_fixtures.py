#!/usr/bin/env python3
"""Regenerate the data fixtures shipped with this repository.

Outputs:
  data/fixtures/iris.data   UCI Iris CSV (150 rows, 4 features + species name)
  data/fixtures/wdbc.data   UCI WDBC CSV (569 rows: id, M/B diagnosis, 30 features)
  data/mnist/*-ubyte        IDX image/label files holding a 10k-example MNIST
                            subset (8000 train / 2000 test, stratified)

Iris and WDBC come from the copies bundled with scikit-learn, re-serialized in
the original UCI column layouts. The MNIST subset is converted from the JSON
digit corpus shipped inside the `mnist` npm package (pass its src/digits
directory as --mnist-json). Pixel values there are x/255 rounded to 3 decimals,
which round-trips exactly back to the original byte values.
"""

import argparse
import json
import os
import random
import struct

from sklearn.datasets import load_breast_cancer, load_iris


def fmt(v):
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def write_iris(path):
    iris = load_iris()
    with open(path, "w") as f:
        for row, t in zip(iris.data, iris.target):
            name = "Iris-" + iris.target_names[t]
            f.write(",".join(fmt(v) for v in row) + "," + name + "\n")
    print("wrote", path)


def write_wdbc(path):
    wdbc = load_breast_cancer()
    # sklearn keeps the original row order but drops the patient ids; the ids
    # are only a skip column for our loader, so synthesize stable ones.
    with open(path, "w") as f:
        for i, (row, t) in enumerate(zip(wdbc.data, wdbc.target)):
            diag = "M" if t == 0 else "B"
            f.write(str(1000001 + i) + "," + diag + ",")
            f.write(",".join(fmt(v) for v in row) + "\n")
    print("wrote", path)


def write_idx(prefix, images, labels):
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">iiii", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">ii", 2049, len(labels)))
        f.write(bytes(labels))
    print("wrote", prefix + "-{images,labels}")


def write_mnist(json_dir, out_dir, test_per_class=200, seed=7):
    examples = []
    for digit in range(10):
        with open(os.path.join(json_dir, "%d.json" % digit)) as f:
            flat = json.load(f)["data"]
        assert len(flat) % 784 == 0
        for i in range(0, len(flat), 784):
            pixels = [round(v * 255) for v in flat[i : i + 784]]
            examples.append((digit, pixels))
    rng = random.Random(seed)
    rng.shuffle(examples)
    test, train = [], []
    taken = [0] * 10
    for digit, pixels in examples:
        if taken[digit] < test_per_class:
            taken[digit] += 1
            test.append((digit, pixels))
        else:
            train.append((digit, pixels))
    os.makedirs(out_dir, exist_ok=True)
    write_idx(os.path.join(out_dir, "train"), [p for _, p in train], [d for d, _ in train])
    write_idx(os.path.join(out_dir, "t10k"), [p for _, p in test], [d for d, _ in test])
    print("train=%d test=%d" % (len(train), len(test)))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), ".."))
    ap.add_argument("--mnist-json", default=None, help="src/digits dir of the mnist npm package")
    args = ap.parse_args()
    fixtures = os.path.join(args.out, "data", "fixtures")
    os.makedirs(fixtures, exist_ok=True)
    write_iris(os.path.join(fixtures, "iris.data"))
    write_wdbc(os.path.join(fixtures, "wdbc.data"))
    if args.mnist_json:
        write_mnist(args.mnist_json, os.path.join(args.out, "data", "mnist"))


if __name__ == "__main__":
    main()
