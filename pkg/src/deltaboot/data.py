"""Dataset sources: IDX image/label files and synthetic Gaussian blobs."""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import IdxFormatError
from .netcore import Dataset, one_hot
from .seeding import TAG_DATA, make_rng

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DIRECTION_SEED = 20200101


def _read_bytes(path):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _header(buf, path, magic, ndims):
    need = 4 * (1 + ndims)
    if len(buf) >= 4:
        (found,) = struct.unpack_from(">I", buf, 0)
        if found != magic:
            raise IdxFormatError(f"bad magic 0x{found:08x}, expected 0x{magic:08x}", path, 0)
    if len(buf) < need:
        raise IdxFormatError(f"truncated header ({len(buf)} of {need} bytes)", path, len(buf))
    return struct.unpack_from(f">{ndims}I", buf, 4), need


def read_idx_images(path):
    """Return ``(count, rows, cols)`` uint8 images from an IDX3 file."""
    buf = _read_bytes(path)
    (count, rows, cols), off = _header(buf, path, IMAGE_MAGIC, 3)
    need = off + count * rows * cols
    if len(buf) < need:
        raise IdxFormatError(f"truncated pixel data: {len(buf)} of {need} bytes", path, len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols, offset=off).reshape(count, rows, cols)


def read_idx_labels(path):
    buf = _read_bytes(path)
    (count,), off = _header(buf, path, LABEL_MAGIC, 1)
    if len(buf) < off + count:
        raise IdxFormatError(f"truncated label data: {len(buf)} of {off + count} bytes", path, len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=off)


def load_idx(images_path, labels_path, limit=None, num_classes=10):
    """Parse an IDX image/label pair into a :class:`Dataset`.

    Pixels are scaled to [0, 1] and images get a leading channel axis, so
    MNIST yields inputs of shape ``(N, 1, 28, 28)``.  ``limit`` keeps only the
    first ``limit`` examples.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}", labels_path, 4
        )
    if labels.size and labels.max() >= num_classes:
        bad = int(np.argmax(labels >= num_classes))
        raise IdxFormatError(f"label {labels[bad]} out of range", labels_path, 8 + bad)
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    inputs = images.astype(np.float64)[:, None] / 255.0
    return Dataset(inputs, one_hot(labels, num_classes))


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images ``(N, rows, cols)`` and labels ``(N,)`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def class_directions(classes, dim):
    """Fixed unit vectors: the standard basis when ``classes <= dim``."""
    if classes <= dim:
        return np.eye(dim)[:classes]
    u = make_rng(DIRECTION_SEED, TAG_DATA).normal(size=(classes, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def gen_synthetic(classes, per_class, dim, separation, seed, stream=0):
    """Gaussian blobs with unit isotropic noise around ``separation * u_c``.

    Examples are ordered class-interleaved (0, 1, ..., C-1, 0, 1, ...) so
    that every fixed-order minibatch sees all classes.  ``stream`` selects an
    independent sample for the same seed (train and test splits).
    """
    if min(classes, per_class, dim) < 1 or separation < 0:
        raise ValueError("classes, per_class and dim must be positive")
    rng = make_rng(seed, TAG_DATA, stream)
    centers = separation * class_directions(classes, dim)
    y = np.tile(np.arange(classes), per_class)
    x = centers[y] + rng.standard_normal((y.size, dim))
    return Dataset(x, one_hot(y, classes))
