"""
Evaluation campaigns.

Defense-versus-attack grids, the split-level sweep, the ablation over loss
terms, natural-pattern accuracy and the per-class and per-example
diagnostics. Every table is a pandas DataFrame.
"""
import re
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import softmax

from src.core.attacks import (
    METHODS,
    adversarial_predictions,
    budget_sweep,
    evaluate_robustness,
    generate_adversarial,
    transfer_attack,
)
from src.core.bitplane import slice_batch
from src.core.errors import DomainError
from src.core.losses import margins
from src.core.model import Network, NetworkParams
from src.core.tensor import no_record
from src.data.datasets import Dataset
from src.pipelines.train import TRAINERS, clean_accuracy, train_f2at
from src.schemas.configs import AttackConfig, TrainConfig
from src.utils import log

DEFAULT_ATTACKS = ("fgsm", "pgd20", "mifgsm10")

_ATTACK_NAME = re.compile(r"^(fgsm|pgd|mifgsm)(\d*)$")


def parse_attack_name(name: str) -> Tuple[str, Optional[int]]:
    """
    Split an attack name such as ``pgd20`` into (method, steps).

    ``fgsm`` always has one step; a bare ``pgd`` or ``mifgsm`` keeps the
    configured step count (returned as None).
    """
    match = _ATTACK_NAME.match(name.strip().lower())
    if not match:
        raise DomainError(f"unknown attack '{name}', expected one of {', '.join(METHODS)} optionally followed by steps")
    method, digits = match.groups()
    if method == "fgsm":
        if digits and int(digits) != 1:
            raise DomainError(f"fgsm is a single-step attack, got '{name}'")
        return method, 1
    steps = int(digits) if digits else None
    if steps == 0:
        raise DomainError(f"attack '{name}' needs at least one step")
    return method, steps


def attack_config(name: str, base: AttackConfig) -> Tuple[str, AttackConfig]:
    """Method and configuration for a named attack on top of ``base``."""
    method, steps = parse_attack_name(name)
    if steps is None:
        return method, base
    return method, base.model_copy(update={"steps": steps})


def evaluation_grid(
    defenses: Mapping[str, NetworkParams],
    dataset: Dataset,
    attacks: Sequence[str],
    cfg: AttackConfig,
) -> pd.DataFrame:
    """
    Clean and adversarial accuracy of each defense under each attack.

    Args:
        defenses (dict): Row name -> parameters
        dataset (Dataset): Evaluation set
        attacks (list): Attack names such as ``pgd20``
        cfg (AttackConfig): Budget shared by all attacks

    Returns:
        pd.DataFrame: One row per defense; columns defense, clean, then one per attack
    """
    rows = []
    for name, params in defenses.items():
        row = {"defense": name, "clean": clean_accuracy(params, dataset)}
        for attack in attacks:
            method, point = attack_config(attack, cfg)
            row[attack] = evaluate_robustness(Network(params), dataset, method, point)
        rows.append(row)
    return pd.DataFrame(rows, columns=["defense", "clean", *attacks])


def transfer_grid(
    surrogates: Mapping[str, NetworkParams],
    target: NetworkParams,
    dataset: Dataset,
    attacks: Sequence[str],
    cfg: AttackConfig,
) -> pd.DataFrame:
    """Black-box accuracy of ``target`` under attacks crafted on each surrogate."""
    rows = []
    for name, params in surrogates.items():
        row = {"surrogate": name}
        for attack in attacks:
            method, point = attack_config(attack, cfg)
            row[attack] = transfer_attack(Network(params), Network(target), dataset, method, point)
        rows.append(row)
    return pd.DataFrame(rows, columns=["surrogate", *attacks])


def budget_grid(
    defenses: Mapping[str, NetworkParams],
    dataset: Dataset,
    attacks: Sequence[str],
    cfg: AttackConfig,
    epsilons: Optional[Sequence[float]] = None,
    steps: Optional[Sequence[int]] = None,
) -> pd.DataFrame:
    """
    Robust accuracy of each defense over a grid of budgets and step counts.

    The step grid only applies to iterative attacks; FGSM rows always have one step.

    Returns:
        pd.DataFrame: Columns defense, attack, epsilon, steps, accuracy, success_rate
    """
    frames = []
    for name, params in defenses.items():
        for attack in attacks:
            method, point = attack_config(attack, cfg)
            grid = [1] if method == "fgsm" else steps
            table = budget_sweep(Network(params), dataset, method, point, epsilons, grid)
            table.insert(0, "attack", attack)
            table.insert(0, "defense", name)
            frames.append(table)
    return pd.concat(frames, ignore_index=True)


def pattern_accuracy(params: NetworkParams, dataset: Dataset, cfg: AttackConfig, k: int, depth: int = 8) -> float:
    """
    Accuracy on the natural patterns of the model's own PGD adversarial examples.

    Args:
        params (NetworkParams): Model under test
        dataset (Dataset): Evaluation set
        cfg (AttackConfig): PGD configuration
        k (int): Split level
        depth (int): Bit depth used for slicing

    Returns:
        float: Fraction of natural patterns classified as the true label
    """
    if len(dataset) == 0:
        raise DomainError("pattern accuracy needs a non-empty dataset")
    model = Network(params)
    rng = np.random.default_rng(cfg.seed)
    x_all = dataset.continuous()
    correct = 0
    for start in range(0, len(dataset), 250):
        x, y = x_all[start:start + 250], dataset.labels[start:start + 250]
        x_adv = generate_adversarial("pgd", model, x, y, cfg, rng)
        natural, _ = slice_batch(x_adv, k, depth)
        correct += int(np.sum(model.predict(natural) == y))
    return correct / len(dataset)


def k_sweep(
    cfg: TrainConfig,
    k_values: Sequence[int],
    train_set: Dataset,
    eval_set: Dataset,
    attacks: Sequence[str] = ("pgd20",),
) -> pd.DataFrame:
    """
    Train one model per split level and tabulate its accuracy.

    Args:
        cfg (TrainConfig): Base configuration; ``k`` is overridden per row
        k_values (list): Split levels in [0, R], rows kept in this order
        train_set (Dataset): Training examples
        eval_set (Dataset): Evaluation examples
        attacks (list): Attack names evaluated per row

    Returns:
        pd.DataFrame: Columns k, clean, then one per attack
    """
    bad = [k for k in k_values if not 0 <= k <= cfg.loss.depth]
    if bad:
        raise DomainError(f"k_sweep: K values {bad} outside [0, {cfg.loss.depth}]")
    rows = []
    for k in k_values:
        log.info(f"K sweep: training with K={k}")
        params, _ = train_f2at(cfg.model_copy(update={"k": int(k)}), train_set, eval_set)
        row = {"k": int(k), "clean": clean_accuracy(params, eval_set)}
        for attack in attacks:
            method, point = attack_config(attack, cfg.eval_attack)
            row[attack] = evaluate_robustness(Network(params), eval_set, method, point)
        rows.append(row)
    return pd.DataFrame(rows, columns=["k", "clean", *attacks])


def ablation_configs(cfg: TrainConfig) -> Dict[str, TrainConfig]:
    """Variants of ``cfg`` with one part of the objective removed."""

    def with_loss(**update):
        return cfg.model_copy(update={"loss": cfg.loss.model_copy(update=update)})

    return {
        "full": cfg,
        "no_patterns": with_loss(use_patterns=False),
        "gamma0": with_loss(gamma=0.0),
        "alpha0": with_loss(alpha=0.0),
    }


def ablation(cfg: TrainConfig, train_set: Dataset, eval_set: Dataset, attack: str = "pgd20") -> pd.DataFrame:
    """
    Clean and robust accuracy of each ablated objective.

    Returns:
        pd.DataFrame: Columns variant, alpha, gamma, use_patterns, clean, and the attack
    """
    rows = []
    for variant, variant_cfg in ablation_configs(cfg).items():
        log.info(f"Ablation: training variant {variant}")
        params, _ = train_f2at(variant_cfg, train_set, eval_set)
        method, point = attack_config(attack, cfg.eval_attack)
        rows.append(
            {
                "variant": variant,
                "alpha": variant_cfg.loss.alpha,
                "gamma": variant_cfg.loss.gamma,
                "use_patterns": variant_cfg.loss.use_patterns,
                "clean": clean_accuracy(params, eval_set),
                attack: evaluate_robustness(Network(params), eval_set, method, point),
            }
        )
    return pd.DataFrame(rows, columns=["variant", "alpha", "gamma", "use_patterns", "clean", attack])


class Diagnostics(NamedTuple):
    class_frequency: pd.DataFrame
    confidence: pd.DataFrame
    margins: pd.DataFrame


def _scores(model: Network, x: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    with no_record():
        logits = model.logits(x)
        margin = margins(logits, labels).data
    probs = softmax(logits.data, axis=1)
    return np.argmax(logits.data, axis=1), np.max(probs, axis=1), margin


def diagnostics(
    params: NetworkParams, dataset: Dataset, attacks: Sequence[str], cfg: AttackConfig
) -> Diagnostics:
    """
    Per-class prediction counts, per-example confidences and margins.

    Clean inputs are always included; each named attack adds its own columns.

    Returns:
        Diagnostics: class_frequency (class, support, then predicted/correct
        counts per input kind), confidence (max softmax per example) and
        margins (true logit minus best other logit per example)
    """
    if len(dataset) == 0:
        raise DomainError("diagnostics need a non-empty dataset")
    model = Network(params)
    labels = dataset.labels
    classes = np.arange(dataset.class_count)
    frequency = pd.DataFrame({"class": classes, "support": np.bincount(labels, minlength=dataset.class_count)})
    confidence = pd.DataFrame({"index": np.arange(len(dataset)), "label": labels})
    margin_table = confidence.copy()

    inputs: List[Tuple[str, np.ndarray]] = [("clean", dataset.continuous())]
    x_all = inputs[0][1]
    for attack in attacks:
        method, point = attack_config(attack, cfg)
        rng = np.random.default_rng(point.seed)
        adversarial = np.concatenate(
            [
                generate_adversarial(method, model, x_all[s:s + 250], labels[s:s + 250], point, rng)
                for s in range(0, len(dataset), 250)
            ]
        )
        inputs.append((attack, adversarial))

    for name, x in inputs:
        predicted, confident, margin = _scores(model, x, labels)
        frequency[f"{name}_predicted"] = np.bincount(predicted, minlength=dataset.class_count)
        frequency[f"{name}_correct"] = np.bincount(predicted[predicted == labels], minlength=dataset.class_count)
        confidence[name] = confident
        margin_table[name] = margin
    return Diagnostics(frequency, confidence, margin_table)


def confidence_histogram(confidence: pd.DataFrame, bins: int = 10) -> pd.DataFrame:
    """Histogram of the confidence columns over ``bins`` equal bins of [0, 1]."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    table = pd.DataFrame({"lower": edges[:-1], "upper": edges[1:]})
    for column in confidence.columns:
        if column in ("index", "label"):
            continue
        table[column] = np.histogram(confidence[column].to_numpy(), bins=edges)[0]
    return table


def attack_table(params: NetworkParams, dataset: Dataset, attack: str, cfg: AttackConfig) -> pd.DataFrame:
    """Per-example white-box outcome of one named attack."""
    method, point = attack_config(attack, cfg)
    model = Network(params)
    return adversarial_predictions(model, model, dataset, method, point)


def train_named(method: str, cfg: TrainConfig, train_set: Dataset, eval_set: Dataset):
    """Dispatch to the trainer registered under ``method``."""
    if method not in TRAINERS:
        raise DomainError(f"unknown training method '{method}', expected one of {', '.join(TRAINERS)}")
    return TRAINERS[method](cfg, train_set, eval_set)
