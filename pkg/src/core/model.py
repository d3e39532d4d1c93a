"""
Compact CNN split into a feature extractor and a classifier head.

The extractor is conv3x3(16) -> relu -> pool2 -> conv3x3(32) -> relu -> pool2
-> flatten -> dense(128); its output is the classification feature consumed by
the head, a single dense(num_classes) layer. This module also holds SGD with
momentum, the milestone learning-rate schedule and the checkpoint format.
"""
import io
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np

from src.core import tensor as T
from src.core.errors import FormatError, ShapeError
from src.core.tensor import Gradients, Tensor, ValueGraph, no_record
from src.schemas.configs import NetworkConfig
from src.utils import log

EXTRACTOR = ("conv1.w", "conv1.b", "conv2.w", "conv2.b", "fc.w", "fc.b")
HEAD = ("head.w", "head.b")

CHECKPOINT_MAGIC = b"F2AT"
CHECKPOINT_VERSION = 1


def parameter_shapes(config: NetworkConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """
    Shapes of every parameter in declaration order.

    Args:
        config (NetworkConfig): Network geometry

    Returns:
        OrderedDict: Parameter name -> shape
    """
    c1, c2 = config.conv1_filters, config.conv2_filters
    return OrderedDict(
        [
            ("conv1.w", (c1, config.channels, 3, 3)),
            ("conv1.b", (c1,)),
            ("conv2.w", (c2, c1, 3, 3)),
            ("conv2.b", (c2,)),
            ("fc.w", (config.flat_dim, config.feature_dim)),
            ("fc.b", (config.feature_dim,)),
            ("head.w", (config.feature_dim, config.num_classes)),
            ("head.b", (config.num_classes,)),
        ]
    )


@dataclass(frozen=True)
class NetworkParams:
    """
    Extractor and head parameters of one network.

    Arrays are float64 and read-only; updates produce a new instance.
    """

    config: NetworkConfig
    tensors: "OrderedDict[str, np.ndarray]"

    def __post_init__(self):
        expected = parameter_shapes(self.config)
        if list(self.tensors) != list(expected):
            raise ShapeError(f"parameters {list(self.tensors)} do not match {list(expected)}")
        frozen = OrderedDict()
        for name, shape in expected.items():
            array = np.array(self.tensors[name], dtype=np.float64)
            if array.shape != shape:
                raise ShapeError(f"parameter {name}: expected shape {shape}, got {array.shape}")
            array.setflags(write=False)
            frozen[name] = array
        object.__setattr__(self, "tensors", frozen)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> Tuple[str, ...]:
        return tuple(self.tensors)

    def replace(self, updates: Mapping[str, np.ndarray]) -> "NetworkParams":
        """Return a copy with some tensors replaced."""
        tensors = OrderedDict(self.tensors)
        tensors.update(updates)
        return NetworkParams(self.config, tensors)

    def equals(self, other: "NetworkParams") -> bool:
        """Bit-for-bit equality of configuration and every tensor."""
        return self.config == other.config and all(
            np.array_equal(a, other.tensors[name]) for name, a in self.tensors.items()
        )


def init_params(config: NetworkConfig, seed: int) -> NetworkParams:
    """
    Fan-in scaled uniform initialization with zero biases.

    Weights are drawn from U(-a, a) with a = sqrt(6 / fan_in), so their standard
    deviation is sqrt(2 / fan_in). Draws follow declaration order.

    Args:
        config (NetworkConfig): Network geometry
        seed (int): Seed of the parameter generator

    Returns:
        NetworkParams: Fresh parameters
    """
    rng = np.random.default_rng(seed)
    tensors = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
        bound = np.sqrt(6.0 / fan_in)
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    log.debug(f"Initialized {len(tensors)} parameter tensors with seed {seed}")
    return NetworkParams(config, tensors)


class ForwardResult(NamedTuple):
    features: Tensor
    logits: Tensor


class Network:
    """
    Callable view of a NetworkParams snapshot.

    Unbound networks evaluate on constants (gradients w.r.t. inputs only, as
    the attacks need). ``bind`` returns a network whose parameters are leaves
    of a graph, for training.
    """

    def __init__(self, params: NetworkParams, weights: Optional[Mapping[str, Tensor]] = None):
        """
        Initialize a network view.

        Args:
            params (NetworkParams): Parameter snapshot
            weights (dict, optional): Tensors to use in place of the raw arrays
        """
        self.params = params
        self.config = params.config
        self.weights: Dict[str, Tensor] = dict(weights) if weights is not None else {
            name: Tensor._wrap(array) for name, array in params.tensors.items()
        }

    def bind(self, graph: ValueGraph) -> "Network":
        """Register every parameter as a gradient-requiring leaf of ``graph``."""
        return Network(self.params, {name: graph.leaf(array) for name, array in self.params.tensors.items()})

    def gradients(self, grads: Gradients) -> "OrderedDict[str, np.ndarray]":
        """Collect parameter gradients of a bound network by name."""
        return OrderedDict((name, grads[tensor]) for name, tensor in self.weights.items())

    def _check_batch(self, x) -> Tensor:
        x = T.as_tensor(x)
        expected = (self.config.channels, self.config.height, self.config.width)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"forward: expected batch N x {' x '.join(map(str, expected))}, got {x.shape}")
        return x

    def features(self, x) -> Tensor:
        """Extractor output F, shape (N, feature_dim)."""
        w = self.weights
        h = T.relu(T.bias_add(T.conv2d(self._check_batch(x), w["conv1.w"], padding=1), w["conv1.b"]))
        h = T.max_pool2d(h, 2)
        h = T.relu(T.bias_add(T.conv2d(h, w["conv2.w"], padding=1), w["conv2.b"]))
        h = T.flatten(T.max_pool2d(h, 2))
        return T.bias_add(T.matmul(h, w["fc.w"]), w["fc.b"])

    def head(self, features) -> Tensor:
        """Classifier head on extractor features."""
        return T.bias_add(T.matmul(features, self.weights["head.w"]), self.weights["head.b"])

    def forward(self, x) -> ForwardResult:
        features = self.features(x)
        return ForwardResult(features, self.head(features))

    def logits(self, x) -> Tensor:
        return self.forward(x).logits

    def predict(self, x) -> np.ndarray:
        """Predicted labels without recording."""
        with no_record():
            return np.argmax(self.logits(x).data, axis=1)


def forward(params: NetworkParams, batch) -> ForwardResult:
    """
    Run the network on a batch, recording on the active graph if any.

    Args:
        params (NetworkParams): Parameters
        batch (array-like): Batch of shape N x C x H x W

    Returns:
        ForwardResult: (features, logits)
    """
    return Network(params).forward(batch)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """
    Heavy-ball momentum state and learning-rate schedule.

    Milestones are fractions of ``total_epochs``; the rate is divided by 10 at
    each milestone reached.
    """

    velocity: Dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    base_lr: float = 0.1
    total_epochs: int = 100
    momentum: float = 0.9
    weight_decay: float = 2e-4
    milestones: Tuple[float, ...] = (0.5, 0.75)

    def learning_rate(self, epoch: Optional[int] = None) -> float:
        """Learning rate at ``epoch`` (defaults to the current epoch)."""
        epoch = self.epoch if epoch is None else epoch
        passed = sum(1 for m in self.milestones if epoch >= m * self.total_epochs)
        return self.base_lr * (0.1 ** passed)


ParamSet = Union[NetworkParams, Mapping[str, np.ndarray]]


def sgd_step(params: ParamSet, grads: Mapping[str, np.ndarray], state: OptimizerState):
    """
    One SGD step with momentum and L2 weight decay.

    ``v <- momentum * v + (grad + weight_decay * param)`` then
    ``param <- param - lr(epoch) * v``.

    Args:
        params (NetworkParams or dict): Current parameters
        grads (dict): Gradient per parameter name
        state (OptimizerState): Momentum buffers and schedule

    Returns:
        tuple: (updated params, updated state); inputs are left untouched
    """
    arrays = params.tensors if isinstance(params, NetworkParams) else params
    if set(grads) != set(arrays):
        raise ShapeError(f"sgd_step: gradients for {sorted(grads)} do not match parameters {sorted(arrays)}")
    lr = state.learning_rate()
    updated, velocity = OrderedDict(), {}
    for name, value in arrays.items():
        value = np.asarray(value, dtype=np.float64)
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != value.shape:
            raise ShapeError(f"sgd_step: gradient of {name} has shape {grad.shape}, parameter {value.shape}")
        previous = state.velocity.get(name, np.zeros_like(value))
        if previous.shape != value.shape:
            raise ShapeError(f"sgd_step: velocity of {name} has shape {previous.shape}, parameter {value.shape}")
        v = state.momentum * previous + (grad + state.weight_decay * value)
        velocity[name] = v
        updated[name] = value - lr * v
    new_state = OptimizerState(
        velocity=velocity,
        epoch=state.epoch,
        base_lr=state.base_lr,
        total_epochs=state.total_epochs,
        momentum=state.momentum,
        weight_decay=state.weight_decay,
        milestones=state.milestones,
    )
    if isinstance(params, NetworkParams):
        return NetworkParams(params.config, updated), new_state
    return updated, new_state


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def checkpoint_bytes(params: NetworkParams) -> bytes:
    """
    Serialize parameters.

    Layout: magic ``F2AT``, uint16 version, uint32 config length, config JSON
    (sorted keys), uint32 tensor count, then per tensor a uint8 rank, uint32
    dimensions and little-endian float64 data, in declaration order.
    """
    config = json.dumps(params.config.model_dump(), sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<HI", CHECKPOINT_VERSION, len(config)))
    out.write(config)
    out.write(struct.pack("<I", len(params.tensors)))
    for array in params.tensors.values():
        out.write(struct.pack("<B", array.ndim))
        out.write(struct.pack(f"<{array.ndim}I", *array.shape))
        out.write(array.astype("<f8").tobytes())
    return out.getvalue()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.blob):
            raise FormatError(f"checkpoint truncated while reading {what}", self.offset)
        chunk = self.blob[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def params_from_bytes(blob: bytes) -> NetworkParams:
    """
    Parse a checkpoint produced by ``checkpoint_bytes``.

    Raises:
        FormatError: Bad magic, unsupported version, truncation or shape mismatch
    """
    reader = _Reader(blob)
    magic = reader.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", 0)
    (version, config_length) = reader.unpack("<HI", "header")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    config_offset = reader.offset
    try:
        config = NetworkConfig(**json.loads(reader.take(config_length, "config").decode("utf-8")))
    except (ValueError, TypeError) as e:
        raise FormatError(f"invalid checkpoint config: {e}", config_offset) from e

    shapes = parameter_shapes(config)
    (count,) = reader.unpack("<I", "tensor count")
    if count != len(shapes):
        raise FormatError(f"checkpoint holds {count} tensors, config needs {len(shapes)}", reader.offset - 4)
    tensors = OrderedDict()
    for name, shape in shapes.items():
        start = reader.offset
        (rank,) = reader.unpack("<B", f"{name} rank")
        dims = reader.unpack(f"<{rank}I", f"{name} shape")
        if tuple(dims) != shape:
            raise FormatError(f"tensor {name} has shape {tuple(dims)}, expected {shape}", start)
        size = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(reader.take(8 * size, name), dtype="<f8").reshape(dims).astype(np.float64)
    if reader.offset != len(blob):
        raise FormatError(f"{len(blob) - reader.offset} trailing bytes after checkpoint", reader.offset)
    return NetworkParams(config, tensors)


def save_checkpoint(path: str, params: NetworkParams) -> None:
    """Write ``params`` to ``path`` in the checkpoint format."""
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(params))
    log.info(f"Checkpoint written to {path}")


def load_checkpoint(path: str) -> NetworkParams:
    """Read parameters written by ``save_checkpoint``."""
    with open(path, "rb") as f:
        blob = f.read()
    params = params_from_bytes(blob)
    log.debug(f"Loaded checkpoint {path} ({len(blob)} bytes)")
    return params
