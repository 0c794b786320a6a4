"""Rebuild the bundled MNIST 0/1/2 subset as gzipped IDX files.

Source: the ``mnist`` npm package (src/digits/<d>.json), which stores ~1000
MNIST digits per class as 784-float vectors equal to byte/255 rounded to three
decimals.  round(v * 255) recovers the original bytes exactly.

Usage: python scripts/build_mnist012.py PATH_TO_EXTRACTED_NPM_PACKAGE
"""

import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np

DIGITS = (0, 1, 2)
OUT = Path(__file__).resolve().parents[1] / "src" / "xae" / "datasets"


def main(pkg_dir):
    images, labels = [], []
    for d in DIGITS:
        flat = np.asarray(json.loads((Path(pkg_dir) / "src" / "digits" / f"{d}.json").read_text())["data"])
        pix = np.rint(flat * 255.0)
        assert np.abs(pix - flat * 255.0).max() < 0.2
        pix = pix.astype(np.uint8).reshape(-1, 28, 28)
        images.append(pix)
        labels.append(np.full(len(pix), d, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    n = len(labels)
    with gzip.GzipFile(OUT / "mnist012-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, n, 28, 28) + images.tobytes())
    with gzip.GzipFile(OUT / "mnist012-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, n) + labels.tobytes())
    print(f"wrote {n} records to {OUT}")


if __name__ == "__main__":
    main(sys.argv[1])
