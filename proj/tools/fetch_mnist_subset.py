#!/usr/bin/env python3
"""Write the 5000-sample MNIST subset shipped with mlxtend as IDX files.

The subset (500 images per digit, drawn from the MNIST training set) lives in
the mlxtend wheel as mlxtend/data/data/mnist_5k.csv.gz: 784 pixel columns
followed by the label. Usage:

    python3 tools/fetch_mnist_subset.py [--wheel PATH] [--out data/mnist5k]

Without --wheel the wheel is fetched with `pip download`.
"""

import argparse
import gzip
import io
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def find_wheel(tmp):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:",
         "-d", tmp, "mlxtend==0.24.0"],
        check=True,
    )
    wheels = sorted(pathlib.Path(tmp).glob("mlxtend-*.whl"))
    if not wheels:
        sys.exit("pip download produced no mlxtend wheel")
    return wheels[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist5k"))
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or find_wheel(tmp)
        with zipfile.ZipFile(wheel) as zf:
            raw = gzip.decompress(zf.read(MEMBER)).decode()

    pixels = bytearray()
    labels = bytearray()
    for line in io.StringIO(raw):
        line = line.strip()
        if not line:
            continue
        vals = [int(float(v)) for v in line.split(",")]
        if len(vals) != 785:
            sys.exit(f"unexpected row width {len(vals)}")
        pixels.extend(vals[:784])
        labels.append(vals[784])
    n = len(labels)

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(pixels)
    with open(args.out / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels)
    print(f"wrote {n} samples to {args.out}")


if __name__ == "__main__":
    main()
