"""
L-infinity gradient attacks and robustness evaluation.

Attacks work on continuous inputs in [0, 1] and maximize the summed
cross-entropy of the attacked model. Every iterate is projected onto the
epsilon-ball around the clean input and then onto [0, 1].
"""
from typing import Iterator, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd

from src.core import tensor as T
from src.core.errors import DomainError, NonFiniteError, ShapeError
from src.core.tensor import Tensor, ValueGraph
from src.schemas.configs import AttackConfig
from src.utils import log

METHODS = ("fgsm", "pgd", "mifgsm")
BALL_TOLERANCE = 1e-9
EVAL_BATCH = 250


class AttackTarget(Protocol):
    """A model exposing logits and label predictions."""

    def logits(self, x) -> Tensor: ...

    def predict(self, x) -> np.ndarray: ...


class LabelledSet(Protocol):
    labels: np.ndarray

    def continuous(self) -> np.ndarray: ...

    def __len__(self) -> int: ...


def input_gradient(model: AttackTarget, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Gradient of the summed cross-entropy with respect to the input batch.

    Raises:
        NonFiniteError: The gradient holds NaN or infinity
    """
    with ValueGraph() as graph:
        leaf = graph.leaf(x)
        loss = T.total(T.softmax_cross_entropy(model.logits(leaf), y))
        grad = graph.backward(loss)[leaf]
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError(f"attack aborted: non-finite input gradient (loss {loss.item()})")
    return grad


def _project(x_adv: np.ndarray, x: np.ndarray, epsilon: float) -> np.ndarray:
    return np.clip(np.clip(x_adv, x - epsilon, x + epsilon), 0.0, 1.0)


def check_ball(x_adv, x, epsilon: float) -> None:
    """
    Assert that an adversarial batch lies in the epsilon-ball and in [0, 1].

    Raises:
        DomainError: Either constraint is violated
    """
    x_adv, x = np.asarray(x_adv), np.asarray(x)
    if x_adv.shape != x.shape:
        raise ShapeError(f"adversarial batch {x_adv.shape} does not match clean batch {x.shape}")
    if x.size == 0:
        return
    distance = float(np.max(np.abs(x_adv - x)))
    if distance > epsilon + BALL_TOLERANCE:
        raise DomainError(f"adversarial batch leaves the ball: distance {distance} > epsilon {epsilon}")
    if x_adv.min() < 0.0 or x_adv.max() > 1.0:
        raise DomainError("adversarial batch leaves [0, 1]")


def fgsm(model: AttackTarget, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """One signed-gradient step of size epsilon."""
    grad = input_gradient(model, x, y)
    return _project(x + cfg.epsilon * np.sign(grad), x, cfg.epsilon)


def pgd(model: AttackTarget, x: np.ndarray, y: np.ndarray, cfg: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    """Projected signed-gradient ascent with an optional uniform random start."""
    x_adv = x
    if cfg.random_start and cfg.epsilon > 0:
        x_adv = _project(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), x, cfg.epsilon)
    for _ in range(cfg.steps):
        grad = input_gradient(model, x_adv, y)
        x_adv = _project(x_adv + cfg.step_size * np.sign(grad), x, cfg.epsilon)
    return x_adv


def mifgsm(model: AttackTarget, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """
    Momentum iterative FGSM.

    The gradient of every example is divided by its mean absolute value before
    it is accumulated with decay ``cfg.momentum_decay``; the sign of the
    accumulator drives a step of ``cfg.step_size``.
    """
    x_adv = x
    accumulated = np.zeros_like(x)
    axes = tuple(range(1, x.ndim))
    for _ in range(cfg.steps):
        grad = input_gradient(model, x_adv, y)
        scale = np.mean(np.abs(grad), axis=axes, keepdims=True)
        accumulated = cfg.momentum_decay * accumulated + grad / np.where(scale > 0, scale, 1.0)
        x_adv = _project(x_adv + cfg.step_size * np.sign(accumulated), x, cfg.epsilon)
    return x_adv


def generate_adversarial(
    method: str,
    model: AttackTarget,
    x,
    y,
    cfg: AttackConfig,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Generate adversarial examples for a batch.

    Args:
        method (str): One of ``fgsm``, ``pgd``, ``mifgsm``
        model (AttackTarget): Attacked model (read-only)
        x (array-like): Clean batch in [0, 1]
        y (array-like): True labels
        cfg (AttackConfig): Budget and schedule
        rng (np.random.Generator, optional): Source of the PGD random start;
            defaults to a generator seeded with ``cfg.seed``

    Returns:
        np.ndarray: Adversarial batch within the epsilon-ball and [0, 1]
    """
    if method not in METHODS:
        raise DomainError(f"unknown attack method '{method}', expected one of {', '.join(METHODS)}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise DomainError("attack input must lie in [0, 1]")
    if x.shape[:1] != y.shape:
        raise ShapeError(f"attack: {x.shape[0]} inputs but {y.shape} labels")

    if method == "fgsm":
        x_adv = fgsm(model, x, y, cfg)
    elif method == "pgd":
        x_adv = pgd(model, x, y, cfg, rng if rng is not None else np.random.default_rng(cfg.seed))
    else:
        x_adv = mifgsm(model, x, y, cfg)
    check_ball(x_adv, x, cfg.epsilon)
    log.debug(f"{method}: {len(y)} examples, eps={cfg.epsilon:.5f}, steps={cfg.steps}")
    return x_adv


def _chunks(dataset: LabelledSet, batch_size: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    if len(dataset) == 0:
        raise DomainError("robustness evaluation needs a non-empty dataset")
    x_all = dataset.continuous()
    for start in range(0, len(dataset), batch_size):
        yield x_all[start:start + batch_size], np.asarray(dataset.labels[start:start + batch_size])


def adversarial_predictions(
    surrogate: AttackTarget,
    target: AttackTarget,
    dataset: LabelledSet,
    method: str,
    cfg: AttackConfig,
    batch_size: int = EVAL_BATCH,
) -> pd.DataFrame:
    """
    Per-example outcome of attacking ``target`` with examples crafted on ``surrogate``.

    The random-start generator is re-seeded with ``cfg.seed`` on every call so
    that identical models give identical outcomes.

    Returns:
        pd.DataFrame: Columns index, true_label, clean_prediction,
        adversarial_prediction, linf_distance
    """
    rng = np.random.default_rng(cfg.seed)
    frames = []
    offset = 0
    for x, y in _chunks(dataset, batch_size):
        x_adv = generate_adversarial(method, surrogate, x, y, cfg, rng)
        frames.append(
            pd.DataFrame(
                {
                    "index": np.arange(offset, offset + len(y)),
                    "true_label": y,
                    "clean_prediction": target.predict(x),
                    "adversarial_prediction": target.predict(x_adv),
                    "linf_distance": np.max(np.abs(x_adv - x).reshape(len(y), -1), axis=1),
                }
            )
        )
        offset += len(y)
    return pd.concat(frames, ignore_index=True)


def evaluate_robustness(model: AttackTarget, dataset: LabelledSet, method: str, cfg: AttackConfig) -> float:
    """
    Accuracy of ``model`` on white-box adversarial versions of ``dataset``.

    Returns:
        float: Fraction still classified as the true label
    """
    table = adversarial_predictions(model, model, dataset, method, cfg)
    accuracy = float(np.mean(table["adversarial_prediction"] == table["true_label"]))
    log.info(f"{method} (eps={cfg.epsilon:.5f}, steps={cfg.steps}) accuracy: {accuracy:.4f}")
    return accuracy


def _input_geometry(model) -> Optional[Tuple[int, int, int]]:
    config = getattr(model, "config", None)
    if config is None:
        return None
    return (config.channels, config.height, config.width)


def transfer_attack(
    surrogate: AttackTarget, target: AttackTarget, dataset: LabelledSet, method: str, cfg: AttackConfig
) -> float:
    """
    Black-box accuracy of ``target`` on examples generated against ``surrogate``.

    Raises:
        ShapeError: The two models accept different input shapes
    """
    surrogate_shape, target_shape = _input_geometry(surrogate), _input_geometry(target)
    if surrogate_shape != target_shape:
        raise ShapeError(f"transfer: surrogate input {surrogate_shape} differs from target input {target_shape}")
    table = adversarial_predictions(surrogate, target, dataset, method, cfg)
    return float(np.mean(table["adversarial_prediction"] == table["true_label"]))


def budget_sweep(
    model: AttackTarget,
    dataset: LabelledSet,
    method: str,
    cfg: AttackConfig,
    epsilons: Optional[Sequence[float]] = None,
    steps: Optional[Sequence[int]] = None,
) -> pd.DataFrame:
    """
    Robust accuracy over a grid of budgets and iteration counts.

    Args:
        model (AttackTarget): Attacked model
        dataset (LabelledSet): Evaluation set
        method (str): Attack method
        cfg (AttackConfig): Base configuration; swept fields are overridden
        epsilons (list, optional): Budgets; defaults to ``[cfg.epsilon]``
        steps (list, optional): Iteration counts; defaults to ``[cfg.steps]``

    Returns:
        pd.DataFrame: Columns epsilon, steps, accuracy, success_rate
    """
    rows = []
    for epsilon in epsilons if epsilons is not None else [cfg.epsilon]:
        for count in steps if steps is not None else [cfg.steps]:
            point = AttackConfig(**{**cfg.model_dump(), "epsilon": float(epsilon), "steps": int(count)})
            accuracy = evaluate_robustness(model, dataset, method, point)
            rows.append({"epsilon": float(epsilon), "steps": int(count), "accuracy": accuracy})
    table = pd.DataFrame(rows, columns=["epsilon", "steps", "accuracy"])
    table["success_rate"] = 1.0 - table["accuracy"]
    return table
