"""
Finite-difference verification of the reverse-mode tape.
"""
import math
from typing import Callable

import numpy as np

from src.core.errors import DomainError
from src.core.tensor import Tensor, ValueGraph, no_record
from src.utils import log

GraphBuilder = Callable[[Tensor], Tensor]


def central_difference(function: GraphBuilder, point: np.ndarray, step: float) -> np.ndarray:
    """
    Estimate the gradient of a scalar function by central differences.

    Args:
        function (callable): Maps a Tensor to a scalar Tensor
        point (np.ndarray): Evaluation point
        step (float): Difference step h

    Returns:
        np.ndarray: Estimated gradient, same shape as ``point``
    """
    point = np.array(point, dtype=np.float64)
    estimate = np.zeros_like(point)
    with no_record():
        for index in np.ndindex(point.shape):
            original = point[index]
            point[index] = original + step
            upper = function(Tensor(point)).item()
            point[index] = original - step
            lower = function(Tensor(point)).item()
            point[index] = original
            estimate[index] = (upper - lower) / (2.0 * step)
    return estimate


def grad_check(function: GraphBuilder, point, step: float = 1e-5) -> float:
    """
    Compare the analytic gradient of ``function`` with central differences.

    The error is ``max |analytic - numeric| / max(1, |numeric|)`` over all
    coordinates. Non-finite values fail the check: they are logged and the
    error is reported as infinity.

    Args:
        function (callable): Builds a scalar graph from its Tensor argument
        point (array-like): Evaluation point
        step (float): Difference step, must be positive

    Returns:
        float: Maximum relative error
    """
    if not step > 0:
        raise DomainError(f"grad_check: step must be positive, got {step}")
    point = np.array(point, dtype=np.float64)

    with ValueGraph() as graph:
        x = graph.leaf(point)
        root = function(x)
        analytic = graph.backward(root)[x]

    numeric = central_difference(function, point, step)
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        log.error("grad_check: non-finite gradient encountered")
        return math.inf
    error = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(np.max(error)) if error.size else 0.0
