"""
Command-line entry point.

Usage:
    python -m src.cli.main <subcommand> [options]
    python -m src.cli.main --manifest runs/demo/manifest.json

Every run resolves its options (defaults < config file < flags), validates
them, writes ``manifest.json`` into the output directory and only then starts
computing. Outputs are CSV and JSON-lines files next to the manifest.
"""
import argparse
import json
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from src import __version__
from src.core import infotheory
from src.core.attacks import check_ball, generate_adversarial
from src.core.bitplane import QuantImage, discrepancy_ratio, quantize, slice_patterns
from src.core.errors import ConfigError, F2ATError, FormatError
from src.core.model import Network, load_checkpoint, save_checkpoint
from src.data.datasets import Dataset, load_dataset
from src.pipelines import evaluate
from src.pipelines.train import TRAINERS, clean_accuracy
from src.schemas import schema_registry
from src.schemas.configs import AttackConfig, DataConfig, LossConfig, RunManifest, TrainConfig
from src.utils import log, settings

PROG = "f2at"
SUBCOMMANDS = ("slice", "mi-verify", "attack", "train", "eval", "ksweep", "report", "ablation")
FLOAT_FORMAT = "%.10g"
IDENTITY_TOLERANCE = 1e-12

# Every resolvable option with its default. Config files and flags may only
# set these keys.
OPTION_DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "out_dir": None,
    # data
    "dataset": "synth",
    "data_path": None,
    "n_train": 2000,
    "n_test": 500,
    "classes": 2,
    "side": 16,
    "channels": 3,
    "contrast": 0.1,
    # attack
    "epsilon": 8.0 / 255.0,
    "steps": 10,
    "step_size": 0.007,
    "momentum_decay": 1.0,
    "random_start": True,
    "eval_steps": 20,
    # loss
    "alpha": 0.1,
    "gamma": 1.0,
    "tau": 0.07,
    "upsilon": 0.995,
    "margin_mode": "soft",
    "use_patterns": True,
    "depth": 8,
    # training
    "epochs": 10,
    "batch_size": 128,
    "k": 2,
    "lr": 0.1,
    "momentum": 0.9,
    "weight_decay": 2e-4,
    "milestones": [0.5, 0.75],
    "augment": True,
    "probe_size": 500,
    "record_wall_time": False,
    "method": None,
    # subcommand inputs
    "checkpoint": None,
    "surrogate": None,
    "input": None,
    "count": 16,
    "trials": 100,
    "k_values": [2, 8],
    "attacks": list(evaluate.DEFAULT_ATTACKS),
    "budgets": None,
    "steps_grid": None,
}

LIST_OPTIONS = {"k_values": int, "attacks": str, "milestones": float, "budgets": float, "steps_grid": int}
# Path options may hold spaces and commas, so they are wrapped, never split.
PATH_LIST_OPTIONS = ("checkpoint",)


# ---------------------------------------------------------------------------
# Option resolution
# ---------------------------------------------------------------------------

def _split_list(value, cast):
    if isinstance(value, str):
        value = [item for item in value.replace(",", " ").split() if item]
    elif not isinstance(value, (list, tuple)):
        value = [value]
    try:
        return [cast(item) for item in value]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid list value {value!r}: {e}") from e


def read_config_file(path: str) -> Dict[str, Any]:
    """
    Read run options from a flat ``key = value`` file or a YAML mapping.

    Values of the flat form are parsed as YAML scalars, so ``true``, ``0.1``
    and ``[2, 8]`` keep their types. ``#`` starts a comment.

    Args:
        path (str): Path to the file

    Returns:
        dict: Option name -> value
    """
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from e

    if path.endswith((".yaml", ".yml")):
        values = yaml.safe_load(text) or {}
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a mapping at the top level")
    else:
        values = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{number}: expected 'key = value', got '{line}'")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                values[key] = yaml.safe_load(value) if value else None
            except yaml.YAMLError as e:
                raise ConfigError(f"{path}:{number}: cannot parse value of '{key}'") from e

    options = {}
    for key, value in values.items():
        name = str(key).replace("-", "_")
        if name not in OPTION_DEFAULTS:
            raise ConfigError(f"{path}: unknown config key '{key}'")
        options[name] = value
    return options


def resolve_options(file_values: Dict[str, Any], flag_values: Dict[str, Any]) -> Dict[str, Any]:
    """Merge defaults, config-file values and flags, in increasing precedence."""
    options = dict(OPTION_DEFAULTS)
    options.update(file_values)
    options.update(flag_values)
    for key, cast in LIST_OPTIONS.items():
        if options[key] is not None:
            options[key] = _split_list(options[key], cast)
    for key in PATH_LIST_OPTIONS:
        if isinstance(options[key], str):
            options[key] = [options[key]]
        elif options[key] is not None:
            options[key] = [str(item) for item in options[key]]
    if options["out_dir"] is None:
        options["out_dir"] = settings.out
    return options


def _validated(factory, **kwargs):
    try:
        return factory(**kwargs)
    except ValidationError as e:
        error = e.errors()[0]
        field = ".".join(str(part) for part in error["loc"]) or factory.__name__
        raise ConfigError(f"invalid value for '{field}': {error['msg']}") from e


def build_configs(options: Dict[str, Any]) -> Tuple[TrainConfig, DataConfig]:
    """
    Turn resolved options into validated configuration records.

    Raises:
        ConfigError: A value violates a record's constraints; the message names the field
    """
    attack = _validated(
        AttackConfig,
        epsilon=options["epsilon"],
        steps=options["steps"],
        step_size=options["step_size"],
        momentum_decay=options["momentum_decay"],
        random_start=options["random_start"],
        seed=options["seed"],
    )
    eval_attack = _validated(AttackConfig, **{**attack.model_dump(), "steps": options["eval_steps"]})
    loss = _validated(
        LossConfig,
        alpha=options["alpha"],
        gamma=options["gamma"],
        tau=options["tau"],
        upsilon=options["upsilon"],
        margin_mode=options["margin_mode"],
        use_patterns=options["use_patterns"],
        depth=options["depth"],
    )
    train = _validated(
        TrainConfig,
        epochs=options["epochs"],
        batch_size=options["batch_size"],
        seed=options["seed"],
        k=options["k"],
        attack=attack,
        eval_attack=eval_attack,
        loss=loss,
        base_lr=options["lr"],
        momentum=options["momentum"],
        weight_decay=options["weight_decay"],
        milestones=tuple(options["milestones"]),
        augment=options["augment"],
        probe_size=options["probe_size"],
        record_wall_time=options["record_wall_time"],
    )
    data = _validated(
        DataConfig,
        dataset=options["dataset"],
        data_path=options["data_path"],
        n_train=options["n_train"],
        n_test=options["n_test"],
        class_count=options["classes"],
        side=options["side"],
        channels=options["channels"],
        contrast=options["contrast"],
        seed=options["seed"],
    )
    for key in ("trials", "count"):
        if not isinstance(options[key], int) or options[key] < 1:
            raise ConfigError(f"invalid value for '{key}': must be a positive integer, got {options[key]!r}")
    bad = [k for k in options["k_values"] if not 0 <= k <= loss.depth]
    if bad:
        raise ConfigError(f"invalid value for 'k_values': {bad} outside [0, {loss.depth}]")
    for name in options["attacks"]:
        try:
            evaluate.parse_attack_name(name)
        except F2ATError as e:
            raise ConfigError(f"invalid value for 'attacks': {e}") from e
    bad = [e for e in options["budgets"] or [] if not 0.0 <= e <= 1.0]
    if bad:
        raise ConfigError(f"invalid value for 'budgets': {bad} outside [0, 1]")
    bad = [s for s in options["steps_grid"] or [] if s < 1]
    if bad:
        raise ConfigError(f"invalid value for 'steps_grid': {bad} must be at least 1")
    return train, data


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    group = parent.add_argument_group("run")
    group.add_argument("--config", help="Flat 'key = value' or YAML options file")
    group.add_argument("--seed", type=int, help="Seed of every random stream")
    group.add_argument("--out-dir", dest="out_dir", help="Output directory (default: $F2AT_OUT or 'runs')")

    group = parent.add_argument_group("data")
    group.add_argument("--dataset", choices=["synth", "cifar10", "idx"])
    group.add_argument("--data-path", dest="data_path", help="Directory holding the dataset files")
    group.add_argument("--n-train", dest="n_train", type=int)
    group.add_argument("--n-test", dest="n_test", type=int)
    group.add_argument("--classes", type=int, help="Synthetic class count")
    group.add_argument("--side", type=int, help="Synthetic image side")

    group = parent.add_argument_group("attack")
    group.add_argument("--epsilon", type=float, help="L-infinity budget in [0, 1] units")
    group.add_argument("--steps", type=int, help="Training attack iterations")
    group.add_argument("--eval-steps", dest="eval_steps", type=int, help="Evaluation PGD iterations")
    group.add_argument("--step-size", dest="step_size", type=float)

    group = parent.add_argument_group("training")
    group.add_argument("--epochs", type=int)
    group.add_argument("--batch-size", dest="batch_size", type=int)
    group.add_argument("--k", type=int, help="Bit-plane split level K")
    group.add_argument("--alpha", type=float)
    group.add_argument("--gamma", type=float)
    group.add_argument("--tau", type=float)
    group.add_argument("--upsilon", type=float)
    group.add_argument("--margin-mode", dest="margin_mode", choices=["soft", "hard"])
    group.add_argument("--lr", type=float, help="Base learning rate")
    group.add_argument("--no-augment", dest="augment", action="store_false")
    group.add_argument("--record-wall-time", dest="record_wall_time", action="store_true")
    return parent


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one sub-parser per subcommand."""
    parser = argparse.ArgumentParser(prog=PROG, description="Feature-focused adversarial training lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--manifest", help="Replay the run described by a manifest.json")
    commands = parser.add_subparsers(dest="command", metavar="subcommand")
    common = _common_flags()
    sup = argparse.SUPPRESS

    sub = commands.add_parser("slice", parents=[common], help="Split images into natural/perturbed patterns")
    sub.add_argument("--input", default=sup, help="Raw text image ('R C H W' header, then values)")
    sub.add_argument("--count", type=int, default=sup, help="Dataset images to slice when no --input")
    sub.add_argument("--checkpoint", default=sup, help="Model whose PGD examples feed the discrepancy report")

    sub = commands.add_parser("mi-verify", parents=[common], help="Check the information identities")
    sub.add_argument("--trials", type=int, default=sup)

    sub = commands.add_parser("attack", parents=[common], help="Per-example robustness of a checkpoint")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--method", default=sup, help="Attack name such as fgsm, pgd20, mifgsm10")

    sub = commands.add_parser("train", parents=[common], help="Train a model")
    sub.add_argument("--method", choices=sorted(TRAINERS), default=sup)

    sub = commands.add_parser("eval", parents=[common], help="Defense-versus-attack accuracy grid")
    sub.add_argument("--checkpoint", action="append", required=True, help="[name=]path, repeatable")
    sub.add_argument("--attacks", default=sup, help="Comma-separated attack names")
    sub.add_argument("--surrogate", default=sup, help="Checkpoint used for transfer attacks")
    sub.add_argument("--budgets", default=sup, help="Comma-separated epsilons for budget.csv")
    sub.add_argument("--steps-grid", dest="steps_grid", default=sup, help="Comma-separated step counts for budget.csv")

    sub = commands.add_parser("ksweep", parents=[common], help="Train and evaluate one model per K")
    sub.add_argument("--k-values", dest="k_values", default=sup, help="Comma-separated K values")
    sub.add_argument("--attacks", default=sup)

    sub = commands.add_parser("report", parents=[common], help="Class, confidence and margin diagnostics")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--attacks", default=sup)

    sub = commands.add_parser("ablation", parents=[common], help="Train each ablated objective")
    return parser


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _write_csv(table: pd.DataFrame, out_dir: str, name: str, outputs: Dict[str, str]) -> str:
    path = os.path.join(out_dir, name)
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    outputs[name] = path
    log.info(f"Wrote {path}")
    return path


def _write_text(text: str, out_dir: str, name: str, outputs: Dict[str, str]) -> str:
    path = os.path.join(out_dir, name)
    with open(path, "w") as f:
        f.write(text)
    outputs[name] = path
    return path


def write_manifest(manifest: RunManifest, out_dir: str) -> str:
    """Validate ``manifest`` against its schema and write it as JSON."""
    document = json.loads(manifest.model_dump_json())
    schema_registry.validate(document, "manifest")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_manifest(path: str) -> RunManifest:
    """Load and validate a manifest written by ``write_manifest``."""
    try:
        with open(path, "r") as f:
            document = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read manifest {path}: {e.strerror}") from e
    except ValueError as e:
        raise ConfigError(f"manifest {path} is not JSON: {e}") from e
    schema_registry.validate(document, "manifest")
    return RunManifest(**document)


def _checkpoint_specs(values: Sequence[str]) -> List[Tuple[str, str]]:
    specs = []
    for value in values:
        name, _, path = value.rpartition("=")
        path = path or value
        specs.append((name or os.path.splitext(os.path.basename(path))[0], path))
    return specs


def _single_checkpoint(options: Dict[str, Any]) -> str:
    paths = options["checkpoint"]
    if len(paths) != 1:
        raise ConfigError(f"expected one checkpoint, got {len(paths)}")
    return paths[0]


def read_raw_image(path: str) -> QuantImage:
    """
    Read a raw text image: header ``R C H W`` then C*H*W integers.

    Raises:
        FormatError: Bad header, wrong value count or out-of-range value
    """
    with open(path, "r") as f:
        tokens = f.read().split()
    try:
        numbers = [int(token) for token in tokens]
    except ValueError as e:
        raise FormatError(f"{path}: non-integer token: {e}") from e
    if len(numbers) < 4:
        raise FormatError(f"{path}: expected header 'R C H W'")
    depth, channels, height, width = numbers[:4]
    values = numbers[4:]
    if len(values) != channels * height * width:
        raise FormatError(f"{path}: header announces {channels * height * width} values, found {len(values)}")
    try:
        return QuantImage(np.array(values, dtype=np.int64).reshape(channels, height, width), depth)
    except F2ATError as e:
        raise FormatError(f"{path}: {e}") from e


def format_patterns(image: QuantImage, k: int) -> str:
    """Text dump: header ``R K C H W``, the natural block, then the perturbed block."""
    pair = slice_patterns(image, k)
    channels, height, width = image.shape
    lines = [f"{image.depth} {k} {channels} {height} {width}"]
    for pattern in (pair.natural, pair.perturbed):
        for row in pattern.data.reshape(channels * height, width):
            lines.append(" ".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _eval_set(data: DataConfig) -> Dataset:
    return load_dataset(data)[1]


def run_slice(options, train_cfg, data_cfg, outputs) -> str:
    out_dir = options["out_dir"]
    k = train_cfg.k
    if options["input"]:
        image = read_raw_image(options["input"])
        images = QuantImage(image.data[None, ...], image.depth)
    else:
        images = _eval_set(data_cfg).images[: options["count"]]
    dump = "".join(format_patterns(images[i], k) for i in range(len(images)))
    _write_text(dump, out_dir, "patterns.txt", outputs)

    clean = images.data.astype(np.float64) / images.levels
    if options["checkpoint"]:
        params = load_checkpoint(_single_checkpoint(options))
        labels = Network(params).predict(clean)
        perturbed = generate_adversarial("pgd", Network(params), clean, labels, train_cfg.eval_attack)
    else:
        rng = np.random.default_rng(options["seed"])
        step = np.sign(rng.uniform(-1.0, 1.0, size=clean.shape)) * train_cfg.attack.epsilon
        perturbed = np.clip(clean + step, 0.0, 1.0)
    check_ball(perturbed, clean, train_cfg.attack.epsilon)
    adversarial = quantize(perturbed, images.depth)
    rows = [{"k": level, "discrepancy": discrepancy_ratio(images, adversarial, level)}
            for level in range(images.depth + 1)]
    _write_csv(pd.DataFrame(rows), out_dir, "discrepancy.csv", outputs)

    pair = slice_patterns(images, k)
    return (
        f"sliced {len(images)} image(s) at K={k}: natural values {sorted(np.unique(pair.natural.data).tolist())[:8]}, "
        f"perturbed values {sorted(np.unique(pair.perturbed.data).tolist())[:8]}"
    )


def run_mi_verify(options, train_cfg, data_cfg, outputs) -> str:
    rng = np.random.default_rng(options["seed"])
    lines, worst_identity, worst_theorem = [], 0.0, 0.0
    for trial in range(options["trials"]):
        variables = int(rng.integers(2, 4))
        sizes = [int(s) for s in rng.integers(2, 9, size=variables)]
        report = infotheory.verify_identities(infotheory.random_table(rng, sizes))
        worst_identity = max(worst_identity, report.max_residual)
        lines.append({"suite": "identities", "trial": trial, "sizes": sizes,
                      "max_residual": report.max_residual,
                      "residuals": {r.name: r.residual for r in report.residuals}})
    for trial in range((options["trials"] + 1) // 2):
        depth = int(rng.integers(2, 5))
        system = infotheory.bitplane_system(
            rng,
            depth=depth,
            k=int(rng.integers(0, depth + 1)),
            pixels=int(rng.integers(1, 3)),
            independent=bool(rng.integers(0, 2)),
            noise=float(rng.uniform(0.05, 0.5)),
        )
        report = infotheory.verify_theorems(system)
        worst_theorem = max(worst_theorem, report.decomposition_residual, report.h_equality_residual)
        lines.append({"suite": "theorems", "trial": trial, **report.to_dict()})
    text = "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines)
    _write_text(text, options["out_dir"], "mi_report.jsonl", outputs)
    if max(worst_identity, worst_theorem) > IDENTITY_TOLERANCE:
        raise F2ATError(
            f"identity residual above {IDENTITY_TOLERANCE}: identities {worst_identity:.3e}, "
            f"theorems {worst_theorem:.3e}"
        )
    return f"max identity residual {worst_identity:.3e}, max theorem residual {worst_theorem:.3e}"


def run_attack(options, train_cfg, data_cfg, outputs) -> str:
    params = load_checkpoint(_single_checkpoint(options))
    name = options["method"] or "pgd20"
    dataset = _eval_set(data_cfg)
    table = evaluate.attack_table(params, dataset, name, train_cfg.eval_attack)
    _write_csv(table, options["out_dir"], "attack.csv", outputs)
    accuracy = float(np.mean(table["adversarial_prediction"] == table["true_label"]))
    return f"{name} accuracy {accuracy:.4f} on {len(dataset)} examples"


def run_train(options, train_cfg, data_cfg, outputs) -> str:
    method = options["method"] or "f2at"
    train_set, eval_set = load_dataset(data_cfg)
    params, metrics = evaluate.train_named(method, train_cfg, train_set, eval_set)
    out_dir = options["out_dir"]
    for record in metrics.records:
        schema_registry.validate(json.loads(record.model_dump_json()), "epoch_record")
    _write_text(metrics.to_jsonl(include_wall_time=train_cfg.record_wall_time), out_dir, "metrics.jsonl", outputs)
    path = os.path.join(out_dir, "checkpoint.f2at")
    save_checkpoint(path, params)
    outputs["checkpoint.f2at"] = path
    final = metrics.records[-1]
    return f"{method}: clean {final.clean_accuracy:.4f}, robust (PGD-10 probe) {final.robust_accuracy:.4f}"


def run_eval(options, train_cfg, data_cfg, outputs) -> str:
    dataset = _eval_set(data_cfg)
    defenses = {name: load_checkpoint(path) for name, path in _checkpoint_specs(options["checkpoint"])}
    grid = evaluate.evaluation_grid(defenses, dataset, options["attacks"], train_cfg.eval_attack)
    _write_csv(grid, options["out_dir"], "eval.csv", outputs)
    if options["surrogate"]:
        surrogate = {"surrogate": load_checkpoint(options["surrogate"])}
        for name, params in defenses.items():
            table = evaluate.transfer_grid(surrogate, params, dataset, options["attacks"], train_cfg.eval_attack)
            _write_csv(table, options["out_dir"], f"transfer_{name}.csv", outputs)
    if options["budgets"] or options["steps_grid"]:
        table = evaluate.budget_grid(
            defenses, dataset, options["attacks"], train_cfg.eval_attack, options["budgets"], options["steps_grid"]
        )
        _write_csv(table, options["out_dir"], "budget.csv", outputs)
    return f"evaluated {len(defenses)} defense(s) under {len(options['attacks'])} attack(s)"


def run_ksweep(options, train_cfg, data_cfg, outputs) -> str:
    train_set, eval_set = load_dataset(data_cfg)
    table = evaluate.k_sweep(train_cfg, options["k_values"], train_set, eval_set, options["attacks"])
    _write_csv(table, options["out_dir"], "ksweep.csv", outputs)
    return f"K sweep over {options['k_values']}"


def run_report(options, train_cfg, data_cfg, outputs) -> str:
    params = load_checkpoint(_single_checkpoint(options))
    dataset = _eval_set(data_cfg)
    out_dir = options["out_dir"]
    result = evaluate.diagnostics(params, dataset, options["attacks"], train_cfg.eval_attack)
    _write_csv(result.class_frequency, out_dir, "class_frequency.csv", outputs)
    _write_csv(result.confidence, out_dir, "confidence.csv", outputs)
    _write_csv(evaluate.confidence_histogram(result.confidence), out_dir, "confidence_histogram.csv", outputs)
    _write_csv(result.margins, out_dir, "margins.csv", outputs)
    patterns = pd.DataFrame(
        {
            "k": [train_cfg.k],
            "clean": [clean_accuracy(params, dataset)],
            "natural_pattern": [
                evaluate.pattern_accuracy(params, dataset, train_cfg.eval_attack, train_cfg.k, train_cfg.loss.depth)
            ],
        }
    )
    _write_csv(patterns, out_dir, "pattern_accuracy.csv", outputs)
    return f"report for {len(dataset)} examples"


def run_ablation(options, train_cfg, data_cfg, outputs) -> str:
    train_set, eval_set = load_dataset(data_cfg)
    table = evaluate.ablation(train_cfg, train_set, eval_set)
    _write_csv(table, options["out_dir"], "ablation.csv", outputs)
    return f"ablation over {len(table)} variants"


HANDLERS = {
    "slice": run_slice,
    "mi-verify": run_mi_verify,
    "attack": run_attack,
    "train": run_train,
    "eval": run_eval,
    "ksweep": run_ksweep,
    "report": run_report,
    "ablation": run_ablation,
}


def execute(command: str, options: Dict[str, Any]) -> str:
    """
    Validate options, write the manifest, then run one subcommand.

    Args:
        command (str): Subcommand name
        options (dict): Fully resolved options

    Returns:
        str: One-line summary of the run
    """
    train_cfg, data_cfg = build_configs(options)
    out_dir = options["out_dir"]
    inputs = {key: (options[key][0] if isinstance(options[key], list) else options[key])
              for key in ("input", "checkpoint", "surrogate", "data_path") if options[key]}
    manifest = RunManifest(
        version=__version__, subcommand=command, seed=options["seed"], options=options, inputs=inputs
    )
    manifest_path = write_manifest(manifest, out_dir)
    log.info(f"Manifest written to {manifest_path}")

    outputs: Dict[str, str] = {}
    summary = HANDLERS[command](options, train_cfg, data_cfg, outputs)
    log.info(f"{command} finished; outputs: {', '.join(sorted(outputs)) or 'none'}")
    return summary


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse ``argv`` and run the requested subcommand.

    Returns:
        int: 0 on success, 2 on usage or configuration errors, 1 on runtime rejections
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    flags = {key: value for key, value in vars(args).items() if key not in ("command", "manifest", "config")}
    try:
        if args.manifest:
            manifest = read_manifest(args.manifest)
            command = manifest.subcommand
            options = resolve_options(dict(manifest.options), flags)
        elif args.command is None:
            parser.print_usage(sys.stderr)
            print(f"{PROG}: error: a subcommand is required ({', '.join(SUBCOMMANDS)})", file=sys.stderr)
            return 2
        else:
            command = args.command
            file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
            options = resolve_options(file_values, flags)
        summary = execute(command, options)
    except ConfigError as e:
        log.error(str(e))
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 2
    except (F2ATError, OSError) as e:
        log.error(str(e))
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 1
    print(summary)
    return 0


def main() -> int:
    return dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
