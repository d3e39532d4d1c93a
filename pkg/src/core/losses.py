"""
Loss family of feature-focused adversarial training.

Cross-entropy on adversarial examples, a hard and a soft (smooth-max) margin
loss, and a temperature-scaled contrastive loss that pulls adversarial features
toward the features of their natural patterns and away from the perturbed
patterns of the batch. All logarithms are natural.
"""
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from src.core import tensor as T
from src.core.bitplane import slice_batch
from src.core.errors import DomainError, ShapeError
from src.core.tensor import Tensor, no_record
from src.schemas.configs import LossConfig, LossRecord


class Classifier(Protocol):
    """Anything with an extractor and a head, such as ``model.Network``."""

    def features(self, x) -> Tensor: ...

    def head(self, features) -> Tensor: ...


def margin(logits, y: int) -> float:
    """
    True-class logit minus the largest other logit for one example.

    Args:
        logits (array-like): Logit vector
        y (int): True label

    Returns:
        float: Positive iff the example is classified correctly (tie-free)
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ShapeError(f"margin: expected a logit vector, got shape {logits.shape}")
    if logits.shape[0] < 2:
        raise DomainError("margin: needs at least two classes")
    if not 0 <= y < logits.shape[0]:
        raise DomainError(f"margin: label {y} outside [0, {logits.shape[0]})")
    return float(logits[y] - np.max(np.delete(logits, y)))


def margins(logits, labels) -> Tensor:
    """Per-example margins of a batch, shape (N,)."""
    return T.sub(T.pick(logits, labels), T.reduce_max(logits, exclude=labels))


def margin_loss(logits, labels) -> Tensor:
    """
    Hard margin loss: mean of ``max_k logits_k - logits_y`` (max includes y).

    Always non-negative; zero iff every true-class logit is maximal.
    """
    return T.mean(T.sub(T.reduce_max(logits), T.pick(logits, labels)))


def soft_margin_loss(logits, labels, upsilon: float) -> Tensor:
    """
    Smooth-max margin loss ``-mean(logits_y - (1/u) ln sum_{k != y} exp(u logits_k))``.

    Converges to the negated mean margin as ``upsilon`` grows and bounds it
    from above for every ``upsilon > 0``.

    Args:
        logits (array-like): Logits, shape (N, classes), classes >= 2
        labels (array-like): True labels
        upsilon (float): Sharpness, positive

    Returns:
        Tensor: Scalar loss
    """
    if not upsilon > 0:
        raise DomainError(f"soft_margin_loss: upsilon must be positive, got {upsilon}")
    smooth_max = T.scale(T.logsumexp(T.scale(logits, upsilon), exclude=labels), 1.0 / upsilon)
    return T.mean(T.sub(smooth_max, T.pick(logits, labels)))


def pattern_dependent_from_scores(s_nat, s_pert, tau: float) -> Tensor:
    """
    Contrastive loss on precomputed similarity scores.

    Args:
        s_nat (array-like): Positive scores, shape (N,)
        s_pert (array-like): Negative scores, shape (N, M); row j holds the
            scores of adversarial example j against every perturbed pattern
        tau (float): Temperature, positive

    Returns:
        Tensor: ``mean_j [ln sum_i exp(s_pert[j, i] / tau) - s_nat[j] / tau]``
    """
    if not tau > 0:
        raise DomainError(f"pattern_dependent_loss: tau must be positive, got {tau}")
    s_nat, s_pert = T.as_tensor(s_nat), T.as_tensor(s_pert)
    if s_pert.ndim != 2 or s_nat.shape != (s_pert.shape[0],) or s_pert.shape[0] < 1:
        raise ShapeError(f"pattern_dependent_loss: scores {s_nat.shape} and {s_pert.shape} are not aligned")
    negatives = T.logsumexp(T.scale(s_pert, 1.0 / tau))
    return T.mean(T.sub(negatives, T.scale(s_nat, 1.0 / tau)))


def pattern_dependent_from_features(f_nat, f_pert, f_adv, tau: float) -> Tensor:
    """Contrastive loss on extractor features; scores are cosine similarities."""
    f_nat, f_pert, f_adv = (T.as_tensor(f) for f in (f_nat, f_pert, f_adv))
    if not f_nat.shape == f_pert.shape == f_adv.shape:
        raise ShapeError(
            f"pattern_dependent_loss: feature batches {f_nat.shape}, {f_pert.shape}, {f_adv.shape} are not aligned"
        )
    s_nat = T.cosine_similarity(f_nat, f_adv)
    s_pert = T.cosine_similarity(f_adv, f_pert, pairwise=True)
    return pattern_dependent_from_scores(s_nat, s_pert, tau)


def pattern_dependent_loss(model: Classifier, x_nat, x_pert, x_adv, tau: float) -> Tensor:
    """
    Pattern-dependent loss of a model on aligned natural, perturbed and adversarial batches.

    Negatives are all perturbed patterns of the batch, own index included. A
    zero-norm feature vector has cosine 0 with zero gradient.
    """
    return pattern_dependent_from_features(model.features(x_nat), model.features(x_pert), model.features(x_adv), tau)


@dataclass(frozen=True)
class LossBreakdown:
    """
    Values of one objective evaluation.

    ``objective`` is the recorded scalar to differentiate; the floats are its
    components and ``total == ce + alpha * pd + gamma * mg_soft``.
    """

    ce: float
    pd: float
    mg_soft: float
    total: float
    objective: Tensor

    def record(self) -> LossRecord:
        return LossRecord(ce=self.ce, pd=self.pd, mg_soft=self.mg_soft, total=self.total)


def total_loss(model: Classifier, clean_batch, adv_batch, labels, cfg: LossConfig, k: int) -> LossBreakdown:
    """
    Full objective on one adversarial batch.

    The adversarial batch is quantized at ``cfg.depth`` bits and sliced at
    ``k``; cross-entropy uses the adversarial logits, the contrastive term uses
    (natural, perturbed, adversarial) features and the margin term uses the
    logits of the natural patterns. A term whose weight is zero is evaluated
    without recording, so it contributes nothing to the gradient.

    Args:
        model (Classifier): Network (bound to the active graph when training)
        clean_batch (array-like): Clean inputs, replaces the natural patterns when
            ``cfg.use_patterns`` is false
        adv_batch (array-like): Adversarial inputs in [0, 1]
        labels (array-like): True labels
        cfg (LossConfig): Weights and shape parameters
        k (int): Split level

    Returns:
        LossBreakdown: Components and the recorded objective
    """
    adv = T.as_tensor(adv_batch)
    x_nat, x_pert = slice_batch(adv.data, k, cfg.depth)
    alpha = cfg.alpha
    if not cfg.use_patterns:
        x_nat = T.as_tensor(clean_batch).data
        alpha = 0.0

    f_adv = model.features(adv)
    ce = T.mean(T.softmax_cross_entropy(model.head(f_adv), labels))

    def contrastive():
        return pattern_dependent_from_features(model.features(x_nat), model.features(x_pert), f_adv, cfg.tau)

    def margin_term():
        logits_nat = model.head(model.features(x_nat))
        if cfg.margin_mode == "hard":
            return margin_loss(logits_nat, labels)
        return soft_margin_loss(logits_nat, labels, cfg.upsilon)

    objective = ce
    if alpha != 0:
        pd = contrastive()
        objective = T.add(objective, T.scale(pd, alpha))
    elif cfg.use_patterns:
        with no_record():
            pd = contrastive()
    else:
        # no patterns, no contrastive term
        pd = T.as_tensor(0.0)
    if cfg.gamma != 0:
        mg = margin_term()
        objective = T.add(objective, T.scale(mg, cfg.gamma))
    else:
        with no_record():
            mg = margin_term()

    return LossBreakdown(
        ce=ce.item(),
        pd=pd.item(),
        mg_soft=mg.item(),
        total=objective.item(),
        objective=objective,
    )
