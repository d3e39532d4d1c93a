"""
Adversarial training pipeline.

Each batch flows through three stages: generate PGD adversarial examples,
compute the objective on the sliced adversarial batch, apply one SGD step.
Standard adversarial training is the same pipeline with the contrastive and
margin weights set to zero.
"""
import time
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, NamedTuple, Optional

import numpy as np

from src.core.attacks import evaluate_robustness, generate_adversarial
from src.core.errors import DomainError, TrainingAborted
from src.core.losses import LossBreakdown, total_loss
from src.core.model import Network, NetworkParams, OptimizerState, init_params, sgd_step
from src.core.tensor import ValueGraph
from src.data.datasets import Dataset, batches
from src.data.prefetch import prefetched
from src.schemas.configs import EpochRecord, LossRecord, NetworkConfig, RunMetrics, TrainConfig
from src.utils import log

DATA_STREAM = 1
ATTACK_STREAM = 2


def network_config_for(dataset: Dataset) -> NetworkConfig:
    """Network geometry matching a dataset's images and classes."""
    channels, height, width = dataset.geometry
    return NetworkConfig(channels=channels, height=height, width=width, num_classes=dataset.class_count)


class TrainResult(NamedTuple):
    params: NetworkParams
    metrics: RunMetrics


@dataclass
class RunState:
    """Mutable state owned by one training run."""

    cfg: TrainConfig
    params: NetworkParams
    optimizer: OptimizerState
    attack_rng: np.random.Generator
    epoch: int = 0
    losses: List[LossBreakdown] = field(default_factory=list)


class GenerateAdversarial:
    """Replace each clean batch by its PGD adversarial counterpart."""

    def __init__(self, run: RunState):
        self.run = run

    def process(self, element: Dict) -> Iterator[Dict]:
        """
        Attack one batch with the current parameters.

        Args:
            element (dict): Carries ``clean`` and ``labels``

        Yields:
            dict: The element with ``adversarial`` added
        """
        model = Network(self.run.params)
        element["adversarial"] = generate_adversarial(
            "pgd", model, element["clean"], element["labels"], self.run.cfg.attack, self.run.attack_rng
        )
        yield element


class ComputeLoss:
    """Evaluate the objective and its parameter gradients."""

    def __init__(self, run: RunState):
        self.run = run

    def process(self, element: Dict) -> Iterator[Dict]:
        cfg = self.run.cfg
        with ValueGraph() as graph:
            model = Network(self.run.params).bind(graph)
            breakdown = total_loss(
                model, element["clean"], element["adversarial"], element["labels"], cfg.loss, cfg.k
            )
            if not np.isfinite(breakdown.total):
                raise TrainingAborted(self.run.epoch, element["batch"], f"loss is {breakdown.total}")
            grads = model.gradients(graph.backward(breakdown.objective))
        for name, grad in grads.items():
            if not np.all(np.isfinite(grad)):
                raise TrainingAborted(self.run.epoch, element["batch"], f"non-finite gradient for {name}")
        log.debug(
            f"epoch {self.run.epoch} batch {element['batch']}: ce={breakdown.ce:.4f} "
            f"pd={breakdown.pd:.4f} mg={breakdown.mg_soft:.4f} total={breakdown.total:.4f}"
        )
        element["loss"] = breakdown
        element["grads"] = grads
        yield element


class ApplyUpdate:
    """Take one SGD step with the batch gradients."""

    def __init__(self, run: RunState):
        self.run = run

    def process(self, element: Dict) -> Iterator[Dict]:
        self.run.params, self.run.optimizer = sgd_step(self.run.params, element["grads"], self.run.optimizer)
        self.run.losses.append(element["loss"])
        yield element


def clean_accuracy(params: NetworkParams, dataset: Dataset, batch_size: int = 250) -> float:
    """Fraction of ``dataset`` classified correctly."""
    if len(dataset) == 0:
        raise DomainError("clean accuracy needs a non-empty dataset")
    model = Network(params)
    x = dataset.continuous()
    correct = 0
    for start in range(0, len(dataset), batch_size):
        correct += int(np.sum(model.predict(x[start:start + batch_size]) == dataset.labels[start:start + batch_size]))
    return correct / len(dataset)


def _mean_loss(losses: List[LossBreakdown]) -> LossRecord:
    return LossRecord(
        ce=float(np.mean([b.ce for b in losses])),
        pd=float(np.mean([b.pd for b in losses])),
        mg_soft=float(np.mean([b.mg_soft for b in losses])),
        total=float(np.mean([b.total for b in losses])),
    )


def _run(cfg: TrainConfig, train_set: Dataset, eval_set: Dataset, params: Optional[NetworkParams]) -> TrainResult:
    if len(train_set) == 0 or len(eval_set) == 0:
        raise DomainError("training needs non-empty train and eval sets")
    if params is None:
        params = init_params(network_config_for(train_set), cfg.seed)
    run = RunState(
        cfg=cfg,
        params=params,
        optimizer=OptimizerState(
            base_lr=cfg.base_lr,
            total_epochs=cfg.epochs,
            momentum=cfg.momentum,
            weight_decay=cfg.weight_decay,
            milestones=cfg.milestones,
        ),
        attack_rng=np.random.default_rng([cfg.seed, ATTACK_STREAM]),
    )
    stages = [GenerateAdversarial(run), ComputeLoss(run), ApplyUpdate(run)]
    probe = eval_set.take(cfg.probe_size)
    probe_attack = cfg.eval_attack.model_copy(update={"steps": 10})
    metrics = RunMetrics()

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        run.epoch = epoch
        run.optimizer.epoch = epoch
        run.losses = []
        stream = batches(
            train_set, cfg.batch_size, seed=[cfg.seed, DATA_STREAM, epoch], shuffle=True, augment=cfg.augment
        )
        for index, (x, y) in enumerate(prefetched(stream)):
            elements = [{"batch": index, "clean": x, "labels": y}]
            for stage in stages:
                elements = [out for element in elements for out in stage.process(element)]

        elapsed = time.perf_counter() - started
        record = EpochRecord(
            epoch=epoch,
            lr=run.optimizer.learning_rate(epoch),
            loss=_mean_loss(run.losses),
            clean_accuracy=clean_accuracy(run.params, eval_set),
            robust_accuracy=evaluate_robustness(Network(run.params), probe, "pgd", probe_attack),
            wall_time=elapsed if cfg.record_wall_time else None,
        )
        metrics.append(record)
        log.info(
            f"epoch {epoch + 1}/{cfg.epochs} lr={record.lr:g} loss={record.loss.total:.4f} "
            f"clean={record.clean_accuracy:.4f} robust={record.robust_accuracy:.4f} ({elapsed:.1f}s)"
        )
    return TrainResult(run.params, metrics)


def train_f2at(
    cfg: TrainConfig, train_set: Dataset, eval_set: Dataset, params: Optional[NetworkParams] = None
) -> TrainResult:
    """
    Feature-focused adversarial training.

    Per batch: PGD-generate adversarial examples, slice them at ``cfg.k``,
    evaluate ``ce + alpha * pd + gamma * mg_soft`` and take one SGD step. One
    metrics record is appended per epoch.

    Args:
        cfg (TrainConfig): Run configuration
        train_set (Dataset): Training examples
        eval_set (Dataset): Examples for the per-epoch metrics
        params (NetworkParams, optional): Starting point (defaults to a seeded init)

    Returns:
        TrainResult: Final parameters and per-epoch metrics
    """
    log.info(
        f"Training with alpha={cfg.loss.alpha} gamma={cfg.loss.gamma} k={cfg.k} "
        f"eps={cfg.attack.epsilon:.5f} for {cfg.epochs} epochs"
    )
    return _run(cfg, train_set, eval_set, params)


def sat_config(cfg: TrainConfig) -> TrainConfig:
    """The configuration with contrastive and margin weights set to zero."""
    loss = cfg.loss.model_copy(update={"alpha": 0.0, "gamma": 0.0})
    return cfg.model_copy(update={"loss": loss})


def train_sat(
    cfg: TrainConfig, train_set: Dataset, eval_set: Dataset, params: Optional[NetworkParams] = None
) -> TrainResult:
    """
    Standard adversarial training: cross-entropy on PGD examples only.

    Identical, bit for bit, to ``train_f2at`` with ``alpha = gamma = 0``.
    """
    log.info(f"Training SAT with eps={cfg.attack.epsilon:.5f} for {cfg.epochs} epochs")
    return _run(sat_config(cfg), train_set, eval_set, params)


def train_standard(cfg: TrainConfig, train_set: Dataset, eval_set: Dataset) -> TrainResult:
    """Undefended baseline: SAT with a zero budget, i.e. plain cross-entropy training."""
    attack = cfg.attack.model_copy(update={"epsilon": 0.0})
    return train_sat(cfg.model_copy(update={"attack": attack}), train_set, eval_set)


TRAINERS = {"f2at": train_f2at, "sat": train_sat, "standard": train_standard}
