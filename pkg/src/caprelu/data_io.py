"""
MNIST IDX loading and deterministic mini-batching.

IDX files are read exactly as published: big-endian u32 magic, big-endian
u32 dimension sizes, then a u8 payload. Pixels are scaled by 1/255 and
flattened row-major.
"""

import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .fileio import atomic_write_bytes

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
NUM_CLASSES = 10

DATA_DIR_ENV = "CAPRELU_DATA_DIR"

# Published MNIST file names; both spellings are common in the wild.
_MNIST_FILES = {
    "train": [
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        ("train-images.idx3-ubyte", "train-labels.idx1-ubyte"),
    ],
    "test": [
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        ("t10k-images.idx3-ubyte", "t10k-labels.idx1-ubyte"),
    ],
}


@dataclass
class ImageDataset:
    """Flattened images in [0, 1] with integer labels"""

    images: np.ndarray
    labels: np.ndarray
    split: str = "test"
    image_shape: tuple = (28, 28)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.images.ndim != 2:
            raise DatasetError(f"Images must be a [n x d] matrix, got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise DatasetError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DatasetError("Pixels must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise DatasetError(f"Labels must lie in [0, {NUM_CLASSES - 1}]")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def input_dim(self):
        return self.images.shape[1]

    def take(self, indices, split=None):
        indices = np.asarray(indices, dtype=np.int64)
        return ImageDataset(self.images[indices], self.labels[indices],
                            split or self.split, self.image_shape)

    def subset(self, n, seed=0):
        """First n samples after a seeded shuffle; n <= 0 or n >= len keeps everything"""
        if n is None or n <= 0 or n >= len(self):
            return self
        order = np.random.default_rng(seed).permutation(len(self))
        return self.take(np.sort(order[:n]))


def _read_u32s(blob, count, path):
    need = 4 * count
    if len(blob) < need:
        raise DatasetError(f"{path} is truncated inside its header")
    return struct.unpack(f">{count}I", blob[:need])


def _read_file(path):
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"IDX file not found: {path}")
    return path.read_bytes()


def load_idx_pair(images_path, labels_path, split="test"):
    """
    Load an IDX images/labels pair.

    Args:
        images_path: IDX3 images file (magic 0x00000803)
        labels_path: IDX1 labels file (magic 0x00000801)
        split: "train" or "test"

    Returns:
        ImageDataset with pixels scaled to [0, 1]

    Raises:
        DatasetError: missing file, bad magic, count mismatch or truncated payload
    """
    img_blob = _read_file(images_path)
    lbl_blob = _read_file(labels_path)

    (magic,) = _read_u32s(img_blob, 1, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetError(
            f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    _, n_images, rows, cols = _read_u32s(img_blob, 4, images_path)

    (magic,) = _read_u32s(lbl_blob, 1, labels_path)
    if magic != IDX_LABELS_MAGIC:
        raise DatasetError(
            f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    _, n_labels = _read_u32s(lbl_blob, 2, labels_path)

    if n_images != n_labels:
        raise DatasetError(f"{n_images} images in {images_path} but {n_labels} labels in {labels_path}")

    pixels = img_blob[16:]
    if len(pixels) < n_images * rows * cols:
        raise DatasetError(f"{images_path} is truncated: payload shorter than {n_images} images")
    labels = lbl_blob[8:]
    if len(labels) < n_labels:
        raise DatasetError(f"{labels_path} is truncated: payload shorter than {n_labels} labels")

    images = np.frombuffer(pixels, dtype=np.uint8, count=n_images * rows * cols)
    images = images.reshape(n_images, rows * cols).astype(np.float64) / 255.0
    label_arr = np.frombuffer(labels, dtype=np.uint8, count=n_labels).astype(np.int64)
    logger.info("loaded %d %s images from %s", n_images, split, images_path)
    return ImageDataset(images, label_arr, split, (rows, cols))


def write_idx_pair(images, labels, images_path, labels_path, image_shape=(28, 28)):
    """
    Write images in [0, 1] and labels as an IDX pair (pixels quantized to 1/255).
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
    rows, cols = image_shape
    n = images.shape[0]
    if images.shape[1:] not in ((rows * cols,), (rows, cols)):
        raise DatasetError(f"Images of shape {images.shape} do not match {image_shape}")
    pixels = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    atomic_write_bytes(
        images_path,
        struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes(),
    )
    atomic_write_bytes(
        labels_path,
        struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes(),
    )


def resolve_data_dir(data_dir=None):
    """Explicit directory first, then $CAPRELU_DATA_DIR"""
    candidate = data_dir or os.environ.get(DATA_DIR_ENV)
    if not candidate:
        raise DatasetError(
            f"No MNIST directory given; pass --data-dir or set {DATA_DIR_ENV}"
        )
    path = Path(candidate).expanduser()
    if not path.is_dir():
        raise DatasetError(f"MNIST directory not found: {path}")
    return path


def load_mnist(data_dir=None, split="test"):
    """Load the train or test split from a directory holding the IDX files"""
    if split not in _MNIST_FILES:
        raise DatasetError(f"Unknown split '{split}'")
    root = resolve_data_dir(data_dir)
    for images_name, labels_name in _MNIST_FILES[split]:
        if (root / images_name).is_file() and (root / labels_name).is_file():
            return load_idx_pair(root / images_name, root / labels_name, split)
    expected = root / _MNIST_FILES[split][0][0]
    raise DatasetError(f"MNIST {split} files not found: {expected}")


def batches(dataset, batch_size, seed=0):
    """
    Yield (x, labels) batches over a seeded permutation of the dataset.

    The last batch may be short; the same seed always yields the same order.
    `seed` may be an int or a sequence of ints (e.g. [seed, epoch]).
    """
    batch_size = int(batch_size)
    if batch_size < 1:
        raise DatasetError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]
