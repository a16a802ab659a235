"""Rebuild the MNIST IDX files from the pickled copy shipped in a PyPI wheel.

The ``mnist-hub`` wheel carries ``mnist/data/mnist.pkl.gz``: the standard
50k/10k/10k float32 split where each pixel is ``byte / 256``.  The original
bytes are recovered exactly and written back as gzipped IDX files in the
original MNIST order (training = train + validation, 60,000 images).

Usage::

    pip download --no-deps -d /tmp/wheels mnist-hub
    python scripts/mnist_from_wheel.py /tmp/wheels/mnist_hub-0.1.4-py3-none-any.whl data/mnist
"""

import gzip
import io
import pickle
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np


def _write_idx_images(path, images):
    count = images.shape[0]
    header = struct.pack(">IIII", 0x00000803, count, 28, 28)
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(header + images.astype(np.uint8).tobytes())


def _write_idx_labels(path, labels):
    header = struct.pack(">II", 0x00000801, labels.shape[0])
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(header + labels.astype(np.uint8).tobytes())


def _to_bytes(x):
    scaled = x.astype(np.float64) * 256.0
    raw = np.rint(scaled)
    if np.abs(scaled - raw).max() != 0.0 or raw.max() > 255:
        raise ValueError("pickle pixels are not exact multiples of 1/256")
    return raw.astype(np.uint8)


def main(wheel, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(wheel) as zf:
        blob = zf.read("mnist/data/mnist.pkl.gz")
    with gzip.open(io.BytesIO(blob)) as fh:
        train, valid, test = pickle.load(fh, encoding="latin1")

    train_x = np.concatenate([_to_bytes(train[0]), _to_bytes(valid[0])])
    train_y = np.concatenate([train[1], valid[1]])
    _write_idx_images(out / "train-images-idx3-ubyte.gz", train_x)
    _write_idx_labels(out / "train-labels-idx1-ubyte.gz", train_y)
    _write_idx_images(out / "t10k-images-idx3-ubyte.gz", _to_bytes(test[0]))
    _write_idx_labels(out / "t10k-labels-idx1-ubyte.gz", test[1])
    print(f"wrote {len(train_y)} training and {len(test[1])} test images to {out}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
