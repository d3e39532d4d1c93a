"""
Dataset ingestion and batching.

Readers for the CIFAR-10 binary layout and the IDX layout, a deterministic
synthetic generator, and the seeded batch stream with crop/flip augmentation.
Images are held as 8-bit QuantImage batches; batches are handed out as
continuous arrays in [0, 1].
"""
import os
import struct
from dataclasses import dataclass
from typing import Iterator, Sequence, Tuple, Union

import numpy as np

from src.core.bitplane import QuantImage, dequantize, quantize
from src.core.errors import DomainError, FormatError, ShapeError
from src.schemas.configs import DataConfig
from src.utils import log

CIFAR_SIDE = 32
CIFAR_CLASSES = 10
CIFAR_RECORD = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"

IDX_LABEL_MAGIC = 0x00000801
IDX_IMAGE_MAGIC = 0x00000803
IDX_MAX_ITEMS = 2 ** 31 - 1
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

SYNTH_NOISE = 16.0 / 255.0
CROP_PAD = 4


@dataclass(frozen=True)
class Dataset:
    """
    Labelled 8-bit images.

    Args:
        images (QuantImage): Batch of shape N x C x H x W
        labels (np.ndarray): Class ids, shape (N,)
        class_count (int): Number of classes
    """

    images: QuantImage
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.data.ndim != 4:
            raise ShapeError(f"dataset images must be N x C x H x W, got {self.images.shape}")
        if labels.shape != (self.images.shape[0],):
            raise ShapeError(f"{self.images.shape[0]} images but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise DomainError(f"labels must lie in [0, {self.class_count})")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def geometry(self) -> Tuple[int, int, int]:
        """(channels, height, width) of one image."""
        return tuple(self.images.shape[1:])

    def continuous(self) -> np.ndarray:
        """All images dequantized to [0, 1]."""
        return dequantize(self.images)

    def take(self, count: int) -> "Dataset":
        """The first ``count`` examples."""
        return Dataset(self.images[:count], self.labels[:count], self.class_count)

    def label_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


def _concat(parts, class_count: int) -> Dataset:
    images = np.concatenate([p.images.data for p in parts])
    labels = np.concatenate([p.labels for p in parts])
    return Dataset(QuantImage(images, 8), labels, class_count)


# ---------------------------------------------------------------------------
# CIFAR-10 binary
# ---------------------------------------------------------------------------

def load_cifar10_binary(path: str) -> Dataset:
    """
    Read a CIFAR-10 binary batch file.

    Each record is one label byte followed by 3072 pixel bytes, channel-major
    (R, G, B), each channel 32 x 32 row-major.

    Args:
        path (str): Path to the batch file

    Returns:
        Dataset: 3 x 32 x 32 images with labels in [0, 9]
    """
    with open(path, "rb") as f:
        blob = f.read()
    complete = len(blob) - len(blob) % CIFAR_RECORD
    if complete != len(blob):
        raise FormatError(f"{path}: truncated record, {len(blob) % CIFAR_RECORD} of {CIFAR_RECORD} bytes", complete)
    records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if bad.size:
        raise FormatError(f"{path}: label {labels[bad[0]]} is not a CIFAR-10 class", int(bad[0]) * CIFAR_RECORD)
    images = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).astype(np.int64)
    log.info(f"Loaded {len(labels)} CIFAR-10 records from {path}")
    return Dataset(QuantImage(images, 8), labels, CIFAR_CLASSES)


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

def load_idx(path: str) -> Union[np.ndarray, QuantImage]:
    """
    Read an IDX label (0x00000801) or image (0x00000803) file.

    Args:
        path (str): Path to the file

    Returns:
        np.ndarray or QuantImage: Labels of shape (N,), or 8-bit images of
        shape N x 1 x rows x cols
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4:
        raise FormatError(f"{path}: missing IDX magic", 0)
    (magic,) = struct.unpack_from(">I", blob, 0)
    if magic not in (IDX_LABEL_MAGIC, IDX_IMAGE_MAGIC):
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}", 0)

    rank = magic & 0xFF
    header = 4 + 4 * rank
    if len(blob) < header:
        raise FormatError(f"{path}: truncated IDX header", len(blob))
    dims = struct.unpack_from(f">{rank}I", blob, 4)
    count = 1
    for dim in dims:
        count *= dim
        if count > IDX_MAX_ITEMS:
            raise FormatError(f"{path}: IDX dimensions {list(dims)} overflow", 4)
    if len(blob) - header < count:
        raise FormatError(f"{path}: truncated IDX payload, {len(blob) - header} of {count} bytes", len(blob))
    if len(blob) - header > count:
        raise FormatError(f"{path}: {len(blob) - header - count} trailing bytes", header + count)

    payload = np.frombuffer(blob, dtype=np.uint8, count=count, offset=header).astype(np.int64)
    if magic == IDX_LABEL_MAGIC:
        return payload
    return QuantImage(payload.reshape(dims[0], 1, dims[1], dims[2]), 8)


def load_idx_dataset(images_path: str, labels_path: str, class_count: int = 10) -> Dataset:
    """Pair an IDX image file with its label file."""
    images, labels = load_idx(images_path), load_idx(labels_path)
    if not isinstance(images, QuantImage) or isinstance(labels, QuantImage):
        raise FormatError(f"{images_path}/{labels_path}: expected an image file and a label file")
    return Dataset(images, labels, class_count)


# ---------------------------------------------------------------------------
# Synthetic
# ---------------------------------------------------------------------------

def synth_dataset(
    seed: int, n: int, class_count: int, side: int, channels: int = 3, contrast: float = 0.1
) -> Dataset:
    """
    Template-plus-noise classification set.

    Each class gets a fixed random template drawn uniformly from
    [0.5 - contrast, 0.5 + contrast]; example i has label ``i % class_count``
    and is its template plus uniform noise of +-16/255, quantized to 8 bits.

    Args:
        seed (int): Generator seed
        n (int): Number of examples, at least ``class_count``
        class_count (int): Number of classes
        side (int): Image side, at least 8
        channels (int): Image channels
        contrast (float): Half-width of the template range

    Returns:
        Dataset: Synthetic examples
    """
    if side < 8:
        raise DomainError(f"synth_dataset: side must be at least 8, got {side}")
    if class_count < 2 or n < class_count:
        raise DomainError(f"synth_dataset: need n >= class_count >= 2, got n={n}, class_count={class_count}")
    rng = np.random.default_rng(seed)
    templates = rng.uniform(0.5 - contrast, 0.5 + contrast, size=(class_count, channels, side, side))
    labels = np.arange(n) % class_count
    noise = rng.uniform(-SYNTH_NOISE, SYNTH_NOISE, size=(n, channels, side, side))
    images = quantize(np.clip(templates[labels] + noise, 0.0, 1.0), 8)
    return Dataset(images, labels, class_count)


def load_dataset(cfg: DataConfig) -> Tuple[Dataset, Dataset]:
    """
    Build the (train, eval) pair described by a DataConfig.

    The synthetic split shares templates: one set of ``n_train + n_test``
    examples is drawn and cut. Real datasets are read from ``data_path`` (a
    directory with the standard file names) and truncated to the configured
    sizes.
    """
    if cfg.dataset == "synth":
        full = synth_dataset(cfg.seed, cfg.n_train + cfg.n_test, cfg.class_count, cfg.side, cfg.channels, cfg.contrast)
        train = Dataset(full.images[: cfg.n_train], full.labels[: cfg.n_train], full.class_count)
        test = Dataset(full.images[cfg.n_train:], full.labels[cfg.n_train:], full.class_count)
        return train, test

    if not os.path.isdir(cfg.data_path):
        raise FormatError(f"data path is not a directory: {cfg.data_path}")
    if cfg.dataset == "cifar10":
        paths = [os.path.join(cfg.data_path, name) for name in CIFAR_TRAIN_FILES]
        paths = [p for p in paths if os.path.exists(p)]
        if not paths:
            raise FormatError(f"no CIFAR-10 training batches in {cfg.data_path}")
        train = _concat([load_cifar10_binary(p) for p in paths], CIFAR_CLASSES)
        test = load_cifar10_binary(os.path.join(cfg.data_path, CIFAR_TEST_FILE))
    else:
        train = load_idx_dataset(*(os.path.join(cfg.data_path, name) for name in MNIST_FILES["train"]))
        test = load_idx_dataset(*(os.path.join(cfg.data_path, name) for name in MNIST_FILES["test"]))
    return train.take(cfg.n_train), test.take(cfg.n_test)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def augment_batch(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Random crop after 4-pixel zero padding, then horizontal flip with probability 0.5.

    Args:
        x (np.ndarray): Continuous batch N x C x H x W
        rng (np.random.Generator): Source of offsets and flips

    Returns:
        np.ndarray: Augmented batch of the same shape and range
    """
    n, _, height, width = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (CROP_PAD, CROP_PAD), (CROP_PAD, CROP_PAD)))
    offsets = rng.integers(0, 2 * CROP_PAD + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    out = np.empty_like(x)
    for i, (top, left) in enumerate(offsets):
        crop = padded[i, :, top:top + height, left:left + width]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


def batches(
    dataset: Dataset, batch_size: int, seed: Union[int, Sequence[int]], shuffle: bool = True, augment: bool = False
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """
    Stream (continuous batch, labels) pairs.

    Args:
        dataset (Dataset): Source examples
        batch_size (int): Examples per batch; the last batch may be short
        seed (int or list): Seed of the permutation and the augmentation draws
        shuffle (bool): Visit examples in a seeded random order
        augment (bool): Apply crop and flip augmentation

    Yields:
        tuple: (np.ndarray batch in [0, 1], np.ndarray labels)
    """
    if batch_size < 1:
        raise DomainError(f"batch_size must be positive, got {batch_size}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset)) if shuffle else np.arange(len(dataset))
    for start in range(0, len(order), batch_size):
        index = order[start:start + batch_size]
        x = dequantize(dataset.images[index])
        if augment:
            x = augment_batch(x, rng)
        yield x, dataset.labels[index]
