"""Image set ingestion: MNIST IDX files, delimited text, padding and subsetting."""

from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConsistencyError, FormatError, KDIOError, RangeError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

_RANGE_TOL = 1e-9


@dataclass(frozen=True)
class LabeledImageSet:
    """Flattened row-major images with integer labels.

    ``images`` has shape ``(n, width * height)`` with values in [0, 1];
    ``labels`` has shape ``(n,)`` with values in ``[0, class_count)``.
    Both arrays are made read-only on construction.
    """

    images: np.ndarray
    labels: np.ndarray
    width: int
    height: int
    class_count: int

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if images.ndim != 2:
            images = images.reshape(len(labels), self.width * self.height)
        if images.shape != (labels.shape[0], self.width * self.height):
            raise ConsistencyError(
                f"images shape {images.shape} does not match {labels.shape[0]} labels "
                f"of {self.width}x{self.height}"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise RangeError(f"labels must lie in [0, {self.class_count})")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise RangeError("pixel values must lie in [0, 1]")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dimension(self):
        return self.width * self.height

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.class_count)

    def of_class(self, m):
        """Images of class ``m`` and their indices into this set."""
        idx = np.flatnonzero(self.labels == m)
        return self.images[idx], idx

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledImageSet(
            self.images[indices], self.labels[indices], self.width, self.height, self.class_count
        )

    def fingerprint(self):
        """Short content hash used to tie saved models to their training data."""
        h = hashlib.sha256()
        h.update(struct.pack("<qqq", self.width, self.height, self.class_count))
        h.update(self.images.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()[:16]


def _read_bytes(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise KDIOError(f"cannot read {path}: {exc}") from exc
    if data[:2] == b"\x1f\x8b":
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as exc:
            raise KDIOError(f"{path}: corrupt gzip stream: {exc}") from exc
    return data


def _idx_header(data, path, magic, n_dims):
    size = 4 * (1 + n_dims)
    if len(data) < 4:
        raise KDIOError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise FormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(data) < size:
        raise KDIOError(f"{path}: truncated header")
    return struct.unpack(">" + "I" * n_dims, data[4:size]), size


def load_idx(image_path, label_path, class_count=None):
    """Read an MNIST-style IDX image/label pair (optionally gzipped).

    Pixels are scaled by 1/255 so that byte 255 maps exactly to 1.0.
    """
    raw = _read_bytes(image_path)
    (count, rows, cols), offset = _idx_header(raw, image_path, IDX_IMAGE_MAGIC, 3)
    need = count * rows * cols
    if len(raw) - offset < need:
        raise KDIOError(f"{image_path}: truncated pixel data ({len(raw) - offset} of {need} bytes)")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=need, offset=offset)

    raw_labels = _read_bytes(label_path)
    (n_labels,), loff = _idx_header(raw_labels, label_path, IDX_LABEL_MAGIC, 1)
    if n_labels != count:
        raise ConsistencyError(f"{count} images but {n_labels} labels")
    if len(raw_labels) - loff < n_labels:
        raise KDIOError(f"{label_path}: truncated label data")
    labels = np.frombuffer(raw_labels, dtype=np.uint8, count=n_labels, offset=loff)

    images = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    if class_count is None:
        class_count = int(labels.max()) + 1 if count else 0
    return LabeledImageSet(images, labels.astype(np.int64), cols, rows, class_count)


def load_delimited(path, width, height, class_count=None):
    """Read ``label p1 ... pD`` lines (whitespace or comma separated).

    Lines starting with ``#`` and blank lines are skipped.  Pixels slightly
    outside [0, 1] (by at most 1e-9) are clipped; anything further out is an
    error.
    """
    dim = width * height
    labels, rows = [], []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise KDIOError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = text.replace(",", " ").split()
            if len(fields) != dim + 1:
                raise FormatError(
                    f"{path}:{lineno}: expected {dim + 1} fields (label + {dim} pixels), "
                    f"got {len(fields)}"
                )
            try:
                label = float(fields[0])
                values = np.array(fields[1:], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if label != int(label) or label < 0:
                raise FormatError(f"{path}:{lineno}: label {fields[0]!r} is not a class index")
            if values.min() < -_RANGE_TOL or values.max() > 1.0 + _RANGE_TOL:
                raise RangeError(f"{path}:{lineno}: pixel outside [0, 1]")
            labels.append(int(label))
            rows.append(np.clip(values, 0.0, 1.0))

    labels = np.array(labels, dtype=np.int64)
    images = np.array(rows, dtype=np.float64).reshape(len(labels), dim)
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 0
    return LabeledImageSet(images, labels, width, height, class_count)


def pad_margin(images, margin):
    """Embed every image in a zero frame ``margin`` pixels wide on each side."""
    if margin < 0:
        raise RangeError("margin must be non-negative")
    if margin == 0:
        return images
    n = len(images)
    cube = images.images.reshape(n, images.height, images.width)
    padded = np.pad(cube, ((0, 0), (margin, margin), (margin, margin)))
    return LabeledImageSet(
        padded.reshape(n, -1),
        images.labels,
        images.width + 2 * margin,
        images.height + 2 * margin,
        images.class_count,
    )


def stratified_indices(labels, class_count, per_class, seed):
    """Pick ``per_class`` indices of each class without replacement.

    Returns ``(chosen, rest)``, both sorted ascending.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    chosen = []
    for m in range(class_count):
        idx = np.flatnonzero(labels == m)
        if idx.size < per_class:
            raise CapacityError(f"class {m} has {idx.size} samples, {per_class} requested")
        chosen.append(rng.choice(idx, size=per_class, replace=False))
    chosen = np.sort(np.concatenate(chosen)) if chosen else np.empty(0, dtype=np.int64)
    mask = np.ones(labels.shape[0], dtype=bool)
    mask[chosen] = False
    return chosen.astype(np.int64), np.flatnonzero(mask)


def stratified_sample(images, per_class, seed):
    """Split a set into ``per_class`` samples of every class and the remainder."""
    chosen, rest = stratified_indices(images.labels, images.class_count, per_class, seed)
    return images.subset(chosen), images.subset(rest)
