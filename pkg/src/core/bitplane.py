"""
Bit-plane disentanglement of quantized images.

An R-bit image splits exactly into a natural pattern (the top K bit-planes)
and a perturbed pattern (the bottom R-K bit-planes); the two use disjoint bit
masks so their sum reconstructs the image with no carries.
"""
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from src.core.errors import DomainError, ShapeError

DEFAULT_DEPTH = 8
DEFAULT_K = 2
QUANTIZE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class QuantImage:
    """
    Integer image (C x H x W, or a stacked N x C x H x W batch) at bit depth R.
    """

    data: np.ndarray
    depth: int = DEFAULT_DEPTH

    def __post_init__(self):
        if not isinstance(self.depth, (int, np.integer)) or not 1 <= self.depth <= 16:
            raise DomainError(f"bit depth must be in [1, 16], got {self.depth}")
        array = np.asarray(self.data)
        if array.size and not np.issubdtype(array.dtype, np.integer):
            raise DomainError(f"quantized data must be integer, got dtype {array.dtype}")
        array = array.astype(np.int64)
        if array.size and (array.min() < 0 or array.max() >= (1 << self.depth)):
            raise DomainError(f"entries must lie in [0, {(1 << self.depth) - 1}] at depth {self.depth}")
        array.setflags(write=False)
        object.__setattr__(self, "data", array)
        object.__setattr__(self, "depth", int(self.depth))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def levels(self) -> int:
        """Largest representable value, 2^R - 1."""
        return (1 << self.depth) - 1

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, index) -> "QuantImage":
        return QuantImage(self.data[index], self.depth)


@dataclass(frozen=True)
class PatternPair:
    """Natural and perturbed patterns of one image at split level k."""

    natural: QuantImage
    perturbed: QuantImage
    k: int

    def reconstruct(self) -> QuantImage:
        return QuantImage(self.natural.data + self.perturbed.data, self.natural.depth)


def quantize(x, bits: int = DEFAULT_DEPTH) -> QuantImage:
    """
    Map a continuous image in [0, 1] to R-bit integers with round-half-up.

    Args:
        x (array-like): Continuous values in [0, 1]
        bits (int): Bit depth R in [1, 16]

    Returns:
        QuantImage: Quantized image
    """
    if not 1 <= bits <= 16:
        raise DomainError(f"quantize: bits must be in [1, 16], got {bits}")
    x = np.asarray(x, dtype=np.float64)
    if x.size:
        low, high = float(np.min(x)), float(np.max(x))
        if not (np.isfinite(low) and np.isfinite(high)):
            raise DomainError("quantize: non-finite entry")
        if low < -QUANTIZE_TOLERANCE or high > 1.0 + QUANTIZE_TOLERANCE:
            raise DomainError(f"quantize: entries must lie in [0, 1], got range [{low}, {high}]")
    levels = (1 << bits) - 1
    q = np.floor(x * levels + 0.5)
    return QuantImage(np.clip(q, 0, levels).astype(np.int64), bits)


def dequantize(q: QuantImage) -> np.ndarray:
    """Map a quantized image back to [0, 1] by dividing by 2^R - 1."""
    return q.data.astype(np.float64) / q.levels


def natural_mask(depth: int, k: int) -> int:
    """Bit mask keeping the high ``k`` bits of a ``depth``-bit value."""
    return ((1 << depth) - 1) ^ ((1 << (depth - k)) - 1)


def slice_patterns(q: QuantImage, k: int) -> PatternPair:
    """
    Split ``q`` into its natural (high k planes) and perturbed (low R-k planes) patterns.

    Args:
        q (QuantImage): Image to split
        k (int): Split level in [0, R]

    Returns:
        PatternPair: The two patterns; ``natural + perturbed == q`` entrywise
    """
    if not 0 <= k <= q.depth:
        raise DomainError(f"slice: K must be in [0, {q.depth}], got {k}")
    mask = natural_mask(q.depth, k)
    low = (1 << (q.depth - k)) - 1
    return PatternPair(
        natural=QuantImage(q.data & mask, q.depth),
        perturbed=QuantImage(q.data & low, q.depth),
        k=k,
    )


def bit_planes(q: QuantImage) -> np.ndarray:
    """
    Unweighted binary planes of ``q``; index b holds bit b (plane R-1 is most significant).

    Returns:
        np.ndarray: Array of shape (R,) + q.shape with entries 0/1
    """
    shifts = np.arange(q.depth).reshape((-1,) + (1,) * q.data.ndim)
    return (q.data[None, ...] >> shifts) & 1


def slice_batch(x, k: int, bits: int = DEFAULT_DEPTH) -> Tuple[np.ndarray, np.ndarray]:
    """
    Quantize a continuous batch, slice it, and dequantize both patterns.

    Args:
        x (array-like): Continuous batch in [0, 1]
        k (int): Split level
        bits (int): Bit depth used for slicing

    Returns:
        tuple: (natural, perturbed) continuous arrays in [0, 1]
    """
    pair = slice_patterns(quantize(x, bits), k)
    return dequantize(pair.natural), dequantize(pair.perturbed)


ImageSet = Union[QuantImage, Sequence[QuantImage]]


def _stack(images: ImageSet) -> Tuple[np.ndarray, int]:
    if isinstance(images, QuantImage):
        return images.data, images.depth
    images = list(images)
    if not images:
        return np.zeros((0,), dtype=np.int64), DEFAULT_DEPTH
    depths = {image.depth for image in images}
    if len(depths) != 1:
        raise ShapeError(f"image set mixes bit depths {sorted(depths)}")
    shapes = {image.shape for image in images}
    if len(shapes) != 1:
        raise ShapeError(f"image set mixes shapes {sorted(shapes)}")
    return np.stack([image.data for image in images]), depths.pop()


def discrepancy_ratio(clean: ImageSet, adv: ImageSet, k: int) -> float:
    """
    Fraction of entries where the natural pattern of ``adv`` differs from that of ``clean``.

    Args:
        clean (QuantImage or list): Clean images
        adv (QuantImage or list): Adversarial counterparts, aligned with ``clean``
        k (int): Split level

    Returns:
        float: Ratio in [0, 1]
    """
    clean_data, clean_depth = _stack(clean)
    adv_data, adv_depth = _stack(adv)
    if clean_data.shape != adv_data.shape or clean_depth != adv_depth:
        raise ShapeError(
            f"discrepancy_ratio: misaligned sets {clean_data.shape}@{clean_depth} "
            f"and {adv_data.shape}@{adv_depth}"
        )
    if clean_data.size == 0:
        return 0.0
    if not 0 <= k <= clean_depth:
        raise DomainError(f"discrepancy_ratio: K must be in [0, {clean_depth}], got {k}")
    mask = natural_mask(clean_depth, k)
    return float(np.mean((clean_data & mask) != (adv_data & mask)))
