"""
Dataset readers, the synthetic generator and batch streams.
"""
from .datasets import (
    Dataset,
    augment_batch,
    batches,
    load_cifar10_binary,
    load_dataset,
    load_idx,
    load_idx_dataset,
    synth_dataset,
)
from .prefetch import BatchProducer, prefetched

__all__ = [
    "Dataset",
    "augment_batch",
    "batches",
    "load_cifar10_binary",
    "load_dataset",
    "load_idx",
    "load_idx_dataset",
    "synth_dataset",
    "BatchProducer",
    "prefetched",
]
