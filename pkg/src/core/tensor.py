"""
Dense tensors with a define-by-run reverse-mode differentiation tape.

Every value is a float64 numpy array. Operations are applied through
``apply_primitive``; when a ``ValueGraph`` is active the call is appended to
its tape, otherwise the forward value is returned unrecorded (the
evaluation path). Backward walks the tape in exact reverse insertion order.
"""
import contextvars
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.core.errors import DomainError, ShapeError, UnknownPrimitiveError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

LEAF = "leaf"

_ACTIVE_GRAPH: contextvars.ContextVar[Optional["ValueGraph"]] = contextvars.ContextVar(
    "active_value_graph", default=None
)


class Tensor:
    """
    Immutable float64 array, optionally bound to a node of a ValueGraph.

    Tensors may be shared read-only across workers; the array behind a tensor
    is flagged non-writeable.
    """

    __slots__ = ("_data", "graph", "node")

    def __init__(self, data: ArrayLike, graph: Optional["ValueGraph"] = None, node: Optional[int] = None):
        """
        Initialize a tensor from array-like data (the data is copied).

        Args:
            data (array-like): Values, converted to float64
            graph (ValueGraph, optional): Graph owning the tensor's node
            node (int, optional): Node id inside ``graph``
        """
        if isinstance(data, Tensor):
            data = data._data
        array = np.array(data, dtype=np.float64)
        array.setflags(write=False)
        self._data = array
        self.graph = graph
        self.node = node

    @classmethod
    def _wrap(cls, array: np.ndarray, graph=None, node=None) -> "Tensor":
        tensor = cls.__new__(cls)
        array = np.asarray(array, dtype=np.float64)
        array.setflags(write=False)
        tensor._data = array
        tensor.graph = graph
        tensor.node = node
        return tensor

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the values."""
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def ndim(self) -> int:
        return self._data.ndim

    def numpy(self) -> np.ndarray:
        """Return a writeable copy of the values."""
        return self._data.copy()

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not scalar")
        return float(self._data.reshape(()))

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        bound = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{bound})"


def as_tensor(value: ArrayLike) -> Tensor:
    """Return ``value`` unchanged if it is a Tensor, else wrap a copy."""
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class Node:
    """One tape entry: primitive kind, input node ids, output and saved context."""

    kind: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    context: Dict[str, Any] = field(default_factory=dict)
    attrs: Dict[str, Any] = field(default_factory=dict)
    requires_grad: bool = False


class Gradients(dict):
    """Mapping from leaf node id to gradient array; also indexable by Tensor."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.node
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.node
        return super().__contains__(key)


class ValueGraph:
    """
    Append-only tape of primitive applications.

    A graph is confined to one worker. It becomes the active recording target
    inside ``with graph:``; inputs always precede their consumers because nodes
    are only ever appended.
    """

    def __init__(self):
        """Initialize an empty tape."""
        self.nodes: List[Node] = []
        self._tokens: List[contextvars.Token] = []

    def __enter__(self) -> "ValueGraph":
        self._tokens.append(_ACTIVE_GRAPH.set(self))
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_GRAPH.reset(self._tokens.pop())
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, data: ArrayLike, requires_grad: bool = True) -> Tensor:
        """
        Register an input value on the tape.

        Args:
            data (array-like): Leaf value
            requires_grad (bool): Whether backward reports a gradient for it

        Returns:
            Tensor: Tensor bound to the new leaf node
        """
        value = np.array(as_tensor(data).data, dtype=np.float64)
        value.setflags(write=False)
        node_id = self._append(Node(LEAF, (), value, requires_grad=requires_grad))
        return Tensor._wrap(value, self, node_id)

    def constant(self, data: ArrayLike) -> Tensor:
        """Register a leaf that never receives a gradient."""
        return self.leaf(data, requires_grad=False)

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def _node_for(self, tensor: Tensor) -> int:
        if tensor.graph is self:
            return tensor.node
        if tensor.graph is not None:
            raise DomainError("tensor is bound to a different ValueGraph")
        return self.leaf(tensor, requires_grad=False).node

    def backward(self, root: Tensor) -> Gradients:
        """
        Differentiate a scalar root with respect to every gradient-requiring leaf.

        Args:
            root (Tensor): Scalar tensor recorded on this graph

        Returns:
            Gradients: Leaf node id -> gradient array (zeros for unreachable leaves)
        """
        return backward(self, root)


def current_graph() -> Optional[ValueGraph]:
    """Return the graph currently recording, if any."""
    return _ACTIVE_GRAPH.get()


@contextmanager
def no_record() -> Iterator[None]:
    """Suspend recording: primitives inside return unrecorded tensors."""
    token = _ACTIVE_GRAPH.set(None)
    try:
        yield
    finally:
        _ACTIVE_GRAPH.reset(token)


# ---------------------------------------------------------------------------
# Primitive registry
# ---------------------------------------------------------------------------

class Primitive:
    """Shape rule, forward rule and vector-Jacobian product of one operation."""

    kind: str = ""
    arity: int = 1

    def check(self, shapes: List[Tuple[int, ...]], attrs: Dict[str, Any]) -> None:
        """Raise ShapeError/DomainError when the operands are unacceptable."""

    def forward(self, values: List[np.ndarray], attrs: Dict[str, Any]) -> Tuple[np.ndarray, Dict[str, Any]]:
        raise NotImplementedError

    def backward(self, grad, values, out, ctx, attrs, needs) -> List[Optional[np.ndarray]]:
        raise NotImplementedError

    def _mismatch(self, shapes) -> ShapeError:
        listed = " and ".join(str(tuple(s)) for s in shapes)
        return ShapeError(f"{self.kind}: incompatible shapes {listed}")


PRIMITIVES: Dict[str, Primitive] = {}


def register(cls):
    """Class decorator adding a primitive to the registry under ``cls.kind``."""
    PRIMITIVES[cls.kind] = cls()
    return cls


def apply_primitive(kind: str, inputs: Sequence[ArrayLike], **attrs) -> Tensor:
    """
    Apply a registered primitive and record it on the active graph.

    Args:
        kind (str): Primitive id
        inputs (list): Operand tensors (array-likes are wrapped as constants)
        **attrs: Static attributes of the primitive

    Returns:
        Tensor: Output tensor
    """
    primitive = PRIMITIVES.get(kind)
    if primitive is None:
        raise UnknownPrimitiveError(f"unknown primitive '{kind}'")
    tensors = [as_tensor(t) for t in inputs]
    if len(tensors) != primitive.arity:
        raise ShapeError(f"{kind}: expected {primitive.arity} inputs, got {len(tensors)}")
    primitive.check([t.shape for t in tensors], attrs)
    out, ctx = primitive.forward([t.data for t in tensors], attrs)

    graph = current_graph()
    if graph is None:
        return Tensor._wrap(out)
    ids = tuple(graph._node_for(t) for t in tensors)
    requires = any(graph.nodes[i].requires_grad for i in ids)
    out = np.asarray(out, dtype=np.float64)
    out.setflags(write=False)
    node_id = graph._append(Node(kind, ids, out, ctx if requires else {}, attrs, requires))
    return Tensor._wrap(out, graph, node_id)


def backward(graph: ValueGraph, root: Tensor) -> Gradients:
    """
    Reverse-mode pass over ``graph`` seeded at a scalar ``root``.

    Args:
        graph (ValueGraph): Tape holding the computation
        root (Tensor): Scalar output bound to ``graph``

    Returns:
        Gradients: Gradient for every leaf with ``requires_grad``
    """
    if root.graph is not graph or root.node is None:
        raise DomainError("backward: root is not recorded on this graph")
    if root.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")

    nodes = graph.nodes
    grads: List[Optional[np.ndarray]] = [None] * len(nodes)
    grads[root.node] = np.ones_like(nodes[root.node].value)

    for index in range(root.node, -1, -1):
        node = nodes[index]
        grad = grads[index]
        if grad is None or node.kind == LEAF or not node.requires_grad:
            continue
        values = [nodes[i].value for i in node.inputs]
        needs = [nodes[i].requires_grad for i in node.inputs]
        input_grads = PRIMITIVES[node.kind].backward(grad, values, node.value, node.context, node.attrs, needs)
        for input_id, needed, input_grad in zip(node.inputs, needs, input_grads):
            if not needed or input_grad is None:
                continue
            if grads[input_id] is None:
                grads[input_id] = np.array(input_grad, dtype=np.float64)
            else:
                grads[input_id] = grads[input_id] + input_grad

    result = Gradients()
    for index, node in enumerate(nodes):
        if node.kind == LEAF and node.requires_grad:
            result[index] = grads[index] if grads[index] is not None else np.zeros_like(node.value)
    return result


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def _labels_attr(attrs, rows: int, classes: int, kind: str, key: str = "labels") -> np.ndarray:
    labels = np.asarray(attrs.get(key))
    if labels.ndim != 1 or labels.shape[0] != rows:
        raise ShapeError(f"{kind}: {key} of shape {labels.shape} do not match {rows} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DomainError(f"{kind}: {key} must lie in [0, {classes})")
    return labels.astype(np.int64)


def _stable_logsumexp(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Max-shifted log-sum-exp over the last axis; returns (value, softmax)."""
    peak = np.max(z, axis=-1, keepdims=True)
    shifted = np.exp(z - peak)
    total = np.sum(shifted, axis=-1, keepdims=True)
    value = (peak + np.log(total))[..., 0]
    return value, shifted / total


@register
class MatMul(Primitive):
    kind = "matmul"
    arity = 2

    def check(self, shapes, attrs):
        a, b = shapes
        if len(a) != 2 or len(b) != 2 or a[1] != b[0]:
            raise self._mismatch(shapes)

    def forward(self, values, attrs):
        a, b = values
        return a @ b, {}

    def backward(self, grad, values, out, ctx, attrs, needs):
        a, b = values
        return [grad @ b.T if needs[0] else None, a.T @ grad if needs[1] else None]


@register
class Conv2d(Primitive):
    """Direct stride-1 cross-correlation with symmetric zero padding."""

    kind = "conv2d"
    arity = 2

    def check(self, shapes, attrs):
        x, w = shapes
        padding = attrs.get("padding", 0)
        if not isinstance(padding, int) or padding < 0:
            raise DomainError(f"conv2d: padding must be a non-negative int, got {padding!r}")
        if len(x) != 4 or len(w) != 4 or x[1] != w[1]:
            raise self._mismatch(shapes)
        if x[2] + 2 * padding < w[2] or x[3] + 2 * padding < w[3]:
            raise self._mismatch(shapes)

    def forward(self, values, attrs):
        x, w = values
        p = attrs.get("padding", 0)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        windows = sliding_window_view(xp, w.shape[2:], axis=(2, 3))
        out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), {"windows": windows, "padded_shape": xp.shape}

    def backward(self, grad, values, out, ctx, attrs, needs):
        x, w = values
        p = attrs.get("padding", 0)
        kh, kw = w.shape[2:]
        grad_x = grad_w = None
        if needs[1]:
            grad_w = np.tensordot(grad, ctx["windows"], axes=([0, 2, 3], [0, 2, 3]))
        if needs[0]:
            full = np.pad(grad, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            windows = sliding_window_view(full, (kh, kw), axis=(2, 3))
            flipped = w[:, :, ::-1, ::-1]
            grad_xp = np.tensordot(windows, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
            grad_x = grad_xp[:, :, p:p + x.shape[2], p:p + x.shape[3]]
        return [grad_x, grad_w]


@register
class BiasAdd(Primitive):
    """Adds a per-channel bias along axis 1 (the only broadcasting primitive)."""

    kind = "bias_add"
    arity = 2

    def check(self, shapes, attrs):
        x, b = shapes
        if len(x) < 2 or len(b) != 1 or x[1] != b[0]:
            raise self._mismatch(shapes)

    def forward(self, values, attrs):
        x, b = values
        return x + b.reshape((1, -1) + (1,) * (x.ndim - 2)), {}

    def backward(self, grad, values, out, ctx, attrs, needs):
        axes = tuple(i for i in range(grad.ndim) if i != 1)
        return [grad if needs[0] else None, grad.sum(axis=axes) if needs[1] else None]


@register
class Relu(Primitive):
    kind = "relu"

    def forward(self, values, attrs):
        return np.maximum(values[0], 0.0), {}

    def backward(self, grad, values, out, ctx, attrs, needs):
        return [grad * (values[0] > 0)]


@register
class MaxPool2d(Primitive):
    """Non-overlapping max pooling; ties route to the lowest flat index."""

    kind = "max_pool2d"

    def check(self, shapes, attrs):
        (x,) = shapes
        size = attrs.get("size", 2)
        if len(x) != 4 or x[2] % size or x[3] % size:
            raise ShapeError(f"max_pool2d: pool {size} does not divide spatial dims of {tuple(x)}")

    def _windows(self, x, size):
        n, c, h, w = x.shape
        blocks = x.reshape(n, c, h // size, size, w // size, size).transpose(0, 1, 2, 4, 3, 5)
        return blocks.reshape(n, c, h // size, w // size, size * size)

    def forward(self, values, attrs):
        size = attrs.get("size", 2)
        windows = self._windows(values[0], size)
        index = np.argmax(windows, axis=-1)
        out = np.take_along_axis(windows, index[..., None], axis=-1)[..., 0]
        return out, {"index": index}

    def backward(self, grad, values, out, ctx, attrs, needs):
        size = attrs.get("size", 2)
        n, c, h, w = values[0].shape
        routed = np.zeros((n, c, h // size, w // size, size * size))
        np.put_along_axis(routed, ctx["index"][..., None], grad[..., None], axis=-1)
        routed = routed.reshape(n, c, h // size, w // size, size, size).transpose(0, 1, 2, 4, 3, 5)
        return [routed.reshape(n, c, h, w)]


@register
class Flatten(Primitive):
    kind = "flatten"

    def check(self, shapes, attrs):
        if len(shapes[0]) < 1:
            raise self._mismatch(shapes)

    def forward(self, values, attrs):
        x = values[0]
        return x.reshape(x.shape[0], -1), {}

    def backward(self, grad, values, out, ctx, attrs, needs):
        return [grad.reshape(values[0].shape)]


@register
class SoftmaxCrossEntropy(Primitive):
    """Per-example cross-entropy ``logsumexp(logits) - logits[y]`` for integer labels."""

    kind = "softmax_xent"

    def check(self, shapes, attrs):
        (x,) = shapes
        if len(x) != 2:
            raise self._mismatch(shapes)
        _labels_attr(attrs, x[0], x[1], self.kind)

    def forward(self, values, attrs):
        logits = values[0]
        labels = np.asarray(attrs["labels"], dtype=np.int64)
        lse, probs = _stable_logsumexp(logits)
        rows = np.arange(logits.shape[0])
        return lse - logits[rows, labels], {"probs": probs}

    def backward(self, grad, values, out, ctx, attrs, needs):
        labels = np.asarray(attrs["labels"], dtype=np.int64)
        delta = ctx["probs"].copy()
        delta[np.arange(delta.shape[0]), labels] -= 1.0
        return [delta * grad[:, None]]


@register
class LogSumExp(Primitive):
    """Log-sum-exp over the last axis; ``exclude`` drops one entry per row."""

    kind = "logsumexp"

    def check(self, shapes, attrs):
        (x,) = shapes
        if len(x) < 1 or x[-1] < 1:
            raise self._mismatch(shapes)
        if attrs.get("exclude") is not None:
            if len(x) != 2 or x[1] < 2:
                raise ShapeError(f"logsumexp: exclude needs a 2-D input with >= 2 columns, got {tuple(x)}")
            _labels_attr(attrs, x[0], x[1], self.kind, key="exclude")

    def forward(self, values, attrs):
        z = values[0]
        exclude = attrs.get("exclude")
        if exclude is not None:
            z = z.copy()
            z[np.arange(z.shape[0]), np.asarray(exclude, dtype=np.int64)] = -np.inf
        value, probs = _stable_logsumexp(z)
        return value, {"probs": probs}

    def backward(self, grad, values, out, ctx, attrs, needs):
        return [ctx["probs"] * grad[..., None]]


@register
class CosineSimilarity(Primitive):
    """
    Row-wise cosine similarity of two feature batches.

    ``pairwise=False`` pairs row i with row i; ``pairwise=True`` produces the
    full (N, M) matrix. A zero-norm row has cosine 0 and zero gradient.
    """

    kind = "cosine"
    arity = 2

    def check(self, shapes, attrs):
        a, b = shapes
        if attrs.get("pairwise", False):
            if len(a) != 2 or len(b) != 2 or a[1] != b[1]:
                raise self._mismatch(shapes)
        elif a != b or len(a) not in (1, 2):
            raise self._mismatch(shapes)

    @staticmethod
    def _unit(x):
        norm = np.linalg.norm(x, axis=-1, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        return np.where(norm > 0, x / safe, 0.0), norm, safe

    def forward(self, values, attrs):
        a, b = (v if v.ndim == 2 else v[None, :] for v in values)
        ua, na, sa = self._unit(a)
        ub, nb, sb = self._unit(b)
        if attrs.get("pairwise", False):
            out = ua @ ub.T
        else:
            out = np.sum(ua * ub, axis=-1)
            if values[0].ndim == 1:
                out = out[0]
        return out, {"ua": ua, "ub": ub, "na": na, "nb": nb, "sa": sa, "sb": sb}

    def backward(self, grad, values, out, ctx, attrs, needs):
        ua, ub = ctx["ua"], ctx["ub"]
        if attrs.get("pairwise", False):
            grad_ua = grad @ ub
            grad_ub = grad.T @ ua
        else:
            g = np.reshape(grad, (-1, 1))
            grad_ua = g * ub
            grad_ub = g * ua

        def through_norm(grad_u, u, norm, safe):
            radial = np.sum(grad_u * u, axis=-1, keepdims=True) * u
            return np.where(norm > 0, (grad_u - radial) / safe, 0.0)

        grad_a = through_norm(grad_ua, ua, ctx["na"], ctx["sa"]).reshape(values[0].shape)
        grad_b = through_norm(grad_ub, ub, ctx["nb"], ctx["sb"]).reshape(values[1].shape)
        return [grad_a if needs[0] else None, grad_b if needs[1] else None]


class _Elementwise(Primitive):
    arity = 2

    def check(self, shapes, attrs):
        if tuple(shapes[0]) != tuple(shapes[1]):
            raise self._mismatch(shapes)


@register
class Add(_Elementwise):
    kind = "add"

    def forward(self, values, attrs):
        return values[0] + values[1], {}

    def backward(self, grad, values, out, ctx, attrs, needs):
        return [grad, grad]


@register
class Sub(_Elementwise):
    kind = "sub"

    def forward(self, values, attrs):
        return values[0] - values[1], {}

    def backward(self, grad, values, out, ctx, attrs, needs):
        return [grad, -grad]


@register
class Mul(_Elementwise):
    kind = "mul"

    def forward(self, values, attrs):
        return values[0] * values[1], {}

    def backward(self, grad, values, out, ctx, attrs, needs):
        return [grad * values[1], grad * values[0]]


@register
class Scale(Primitive):
    kind = "scale"

    def check(self, shapes, attrs):
        factor = attrs.get("factor")
        if not isinstance(factor, (int, float)) or not np.isfinite(factor):
            raise DomainError(f"scale: factor must be a finite number, got {factor!r}")

    def forward(self, values, attrs):
        return values[0] * float(attrs["factor"]), {}

    def backward(self, grad, values, out, ctx, attrs, needs):
        return [grad * float(attrs["factor"])]


@register
class Mean(Primitive):
    """Mean over every entry, producing a scalar."""

    kind = "mean"

    def check(self, shapes, attrs):
        if int(np.prod(shapes[0])) == 0:
            raise ShapeError("mean: cannot reduce an empty tensor")

    def forward(self, values, attrs):
        return np.array(np.mean(values[0])), {}

    def backward(self, grad, values, out, ctx, attrs, needs):
        x = values[0]
        return [np.full(x.shape, float(grad) / x.size)]


@register
class Sum(Primitive):
    kind = "sum"

    def forward(self, values, attrs):
        return np.array(np.sum(values[0])), {}

    def backward(self, grad, values, out, ctx, attrs, needs):
        return [np.full(values[0].shape, float(grad))]


@register
class Sign(Primitive):
    kind = "sign"

    def forward(self, values, attrs):
        return np.sign(values[0]), {}

    def backward(self, grad, values, out, ctx, attrs, needs):
        return [np.zeros_like(values[0])]


@register
class Pick(Primitive):
    """Select ``x[i, labels[i]]`` for each row."""

    kind = "pick"

    def check(self, shapes, attrs):
        (x,) = shapes
        if len(x) != 2:
            raise self._mismatch(shapes)
        _labels_attr(attrs, x[0], x[1], self.kind)

    def forward(self, values, attrs):
        labels = np.asarray(attrs["labels"], dtype=np.int64)
        return values[0][np.arange(values[0].shape[0]), labels], {}

    def backward(self, grad, values, out, ctx, attrs, needs):
        labels = np.asarray(attrs["labels"], dtype=np.int64)
        routed = np.zeros_like(values[0])
        routed[np.arange(routed.shape[0]), labels] = grad
        return [routed]


@register
class ReduceMax(Primitive):
    """Row maximum over the last axis, optionally excluding one column per row."""

    kind = "reduce_max"

    def check(self, shapes, attrs):
        (x,) = shapes
        if len(x) != 2 or x[1] < 1:
            raise self._mismatch(shapes)
        if attrs.get("exclude") is not None:
            if x[1] < 2:
                raise ShapeError(f"reduce_max: exclude needs >= 2 columns, got {tuple(x)}")
            _labels_attr(attrs, x[0], x[1], self.kind, key="exclude")

    def forward(self, values, attrs):
        z = values[0]
        exclude = attrs.get("exclude")
        if exclude is not None:
            z = z.copy()
            z[np.arange(z.shape[0]), np.asarray(exclude, dtype=np.int64)] = -np.inf
        index = np.argmax(z, axis=-1)
        return z[np.arange(z.shape[0]), index], {"index": index}

    def backward(self, grad, values, out, ctx, attrs, needs):
        routed = np.zeros_like(values[0])
        routed[np.arange(routed.shape[0]), ctx["index"]] = grad
        return [routed]


# ---------------------------------------------------------------------------
# Functional surface
# ---------------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return apply_primitive("matmul", [a, b])


def conv2d(x: ArrayLike, w: ArrayLike, padding: int = 0) -> Tensor:
    return apply_primitive("conv2d", [x, w], padding=padding)


def bias_add(x: ArrayLike, b: ArrayLike) -> Tensor:
    return apply_primitive("bias_add", [x, b])


def relu(x: ArrayLike) -> Tensor:
    return apply_primitive("relu", [x])


def max_pool2d(x: ArrayLike, size: int = 2) -> Tensor:
    return apply_primitive("max_pool2d", [x], size=size)


def flatten(x: ArrayLike) -> Tensor:
    return apply_primitive("flatten", [x])


def softmax_cross_entropy(logits: ArrayLike, labels) -> Tensor:
    """Per-example cross-entropy, shape (N,)."""
    return apply_primitive("softmax_xent", [logits], labels=np.asarray(labels, dtype=np.int64))


def logsumexp(x: ArrayLike, exclude=None) -> Tensor:
    if exclude is not None:
        exclude = np.asarray(exclude, dtype=np.int64)
    return apply_primitive("logsumexp", [x], exclude=exclude)


def cosine_similarity(a: ArrayLike, b: ArrayLike, pairwise: bool = False) -> Tensor:
    return apply_primitive("cosine", [a, b], pairwise=pairwise)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return apply_primitive("add", [a, b])


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    return apply_primitive("sub", [a, b])


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return apply_primitive("mul", [a, b])


def scale(x: ArrayLike, factor: float) -> Tensor:
    return apply_primitive("scale", [x], factor=float(factor))


def mean(x: ArrayLike) -> Tensor:
    return apply_primitive("mean", [x])


def total(x: ArrayLike) -> Tensor:
    return apply_primitive("sum", [x])


def sign(x: ArrayLike) -> Tensor:
    return apply_primitive("sign", [x])


def pick(x: ArrayLike, labels) -> Tensor:
    return apply_primitive("pick", [x], labels=np.asarray(labels, dtype=np.int64))


def reduce_max(x: ArrayLike, exclude=None) -> Tensor:
    if exclude is not None:
        exclude = np.asarray(exclude, dtype=np.int64)
    return apply_primitive("reduce_max", [x], exclude=exclude)
