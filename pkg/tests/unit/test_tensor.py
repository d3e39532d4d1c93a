"""
Tests for the tensor primitives and the reverse-mode tape.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import logsumexp as scipy_logsumexp

from src.core import tensor as T
from src.core.errors import DomainError, ShapeError, UnknownPrimitiveError
from src.core.gradcheck import grad_check
from src.core.tensor import Tensor, ValueGraph, apply_primitive, no_record

INSTANCES = 20
TOLERANCE = 1e-4


def weighted(out, weights):
    """Reduce a tensor to a scalar with fixed random weights so every entry matters."""
    return T.total(T.mul(out, weights))


class TestForward:
    """Test forward values of the primitives."""

    def test_matmul(self):
        """Test matmul against numpy."""
        a, b = np.arange(6.0).reshape(2, 3), np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(T.matmul(a, b).data, a @ b)

    def test_conv2d_identity_kernel(self):
        """Test a centred one-hot 3x3 kernel with padding 1 reproduces the input."""
        x = np.random.default_rng(0).normal(size=(2, 1, 4, 4))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        np.testing.assert_allclose(T.conv2d(x, w, padding=1).data, x)

    def test_conv2d_output_shape(self):
        """Test valid and padded output sizes."""
        x, w = np.ones((1, 2, 6, 5)), np.ones((3, 2, 3, 3))
        assert T.conv2d(x, w).shape == (1, 3, 4, 3)
        assert T.conv2d(x, w, padding=1).shape == (1, 3, 6, 5)
        assert T.conv2d(x, w).data[0, 0, 0, 0] == 18.0

    def test_max_pool(self):
        """Test non-overlapping 2x2 pooling."""
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(T.max_pool2d(x).data[0, 0], [[5.0, 7.0], [13.0, 15.0]])

    def test_bias_add_broadcasts_on_channels(self):
        """Test bias is added along axis 1."""
        out = T.bias_add(np.zeros((2, 3, 2, 2)), np.array([1.0, 2.0, 3.0]))
        assert out.data[1, 2, 1, 1] == 3.0
        assert out.data[0, 0, 0, 0] == 1.0

    def test_softmax_cross_entropy_matches_logsumexp(self):
        """Test xent == logsumexp(logits) - logits[y] within 1e-12."""
        rng = np.random.default_rng(1)
        logits, labels = rng.normal(size=(5, 10)), rng.integers(0, 10, size=5)
        expected = scipy_logsumexp(logits, axis=1) - logits[np.arange(5), labels]
        np.testing.assert_allclose(T.softmax_cross_entropy(logits, labels).data, expected, atol=1e-12)

    def test_logsumexp_large_values_stay_finite(self):
        """Test the max shift keeps huge logits finite."""
        out = T.logsumexp(np.array([[1000.0, 1000.0]])).data
        np.testing.assert_allclose(out, [1000.0 + np.log(2.0)], atol=1e-12)

    def test_logsumexp_exclude(self):
        """Test the excluded column is dropped per row."""
        x = np.array([[0.0, 50.0, 0.0]])
        np.testing.assert_allclose(T.logsumexp(x, exclude=[1]).data, [np.log(2.0)], atol=1e-12)

    def test_reduce_max_exclude(self):
        """Test the row maximum skips the excluded column."""
        x = np.array([[3.0, 1.0, 2.0], [0.0, 4.0, 5.0]])
        np.testing.assert_array_equal(T.reduce_max(x, exclude=[0, 2]).data, [2.0, 4.0])

    def test_cosine_zero_norm_row(self):
        """Test a zero-norm row has cosine 0 and zero gradient."""
        with ValueGraph() as graph:
            a = graph.leaf(np.array([[0.0, 0.0], [1.0, 0.0]]))
            b = graph.leaf(np.array([[1.0, 1.0], [1.0, 0.0]]))
            out = T.cosine_similarity(a, b)
            grads = graph.backward(T.total(out))
        np.testing.assert_allclose(out.data, [0.0, 1.0])
        np.testing.assert_array_equal(grads[a][0], [0.0, 0.0])

    def test_cosine_pairwise_shape(self):
        """Test pairwise cosine yields an N x M matrix."""
        rng = np.random.default_rng(2)
        assert T.cosine_similarity(rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), pairwise=True).shape == (3, 5)

    def test_tensors_are_read_only(self):
        """Test tensor data cannot be written in place."""
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 3.0


class TestErrors:
    """Test rejection paths of the primitive registry and the tape."""

    def test_unknown_primitive(self):
        """Test an unregistered id is rejected."""
        with pytest.raises(UnknownPrimitiveError, match="unknown primitive 'softplus'"):
            apply_primitive("softplus", [np.ones(2)])

    def test_matmul_shape_mismatch(self):
        """Test the shape error lists both operand shapes."""
        with pytest.raises(ShapeError, match=r"\(2, 3\) and \(4, 5\)"):
            T.matmul(np.ones((2, 3)), np.ones((4, 5)))

    def test_elementwise_requires_equal_shapes(self):
        """Test add does not broadcast."""
        with pytest.raises(ShapeError):
            T.add(np.ones(3), np.ones((3, 1)))

    def test_conv2d_channel_mismatch(self):
        """Test conv2d rejects mismatched input channels."""
        with pytest.raises(ShapeError):
            T.conv2d(np.ones((1, 2, 4, 4)), np.ones((1, 3, 3, 3)))

    def test_max_pool_indivisible(self):
        """Test pooling rejects spatial dims not divisible by the pool."""
        with pytest.raises(ShapeError):
            T.max_pool2d(np.ones((1, 1, 5, 4)))

    def test_mean_of_empty(self):
        """Test mean rejects an empty tensor."""
        with pytest.raises(ShapeError):
            T.mean(np.ones((0, 3)))

    def test_scale_non_finite(self):
        """Test scale rejects a non-finite factor."""
        with pytest.raises(DomainError):
            T.scale(np.ones(2), float("inf"))

    def test_labels_out_of_range(self):
        """Test label-indexed primitives validate labels."""
        with pytest.raises(DomainError):
            T.softmax_cross_entropy(np.ones((2, 3)), [0, 3])

    def test_backward_non_scalar_root(self):
        """Test backward requires a scalar root."""
        with ValueGraph() as graph:
            x = graph.leaf(np.ones(3))
            y = T.scale(x, 2.0)
            with pytest.raises(ShapeError):
                graph.backward(y)

    def test_backward_foreign_root(self):
        """Test a root from another graph is rejected."""
        with ValueGraph() as first:
            root = T.total(first.leaf(np.ones(2)))
        with pytest.raises(DomainError):
            ValueGraph().backward(root)

    def test_grad_check_step_must_be_positive(self):
        """Test grad_check rejects a non-positive step."""
        with pytest.raises(DomainError):
            grad_check(T.total, np.ones(2), step=0.0)


class TestTape:
    """Test the recording semantics of ValueGraph."""

    def test_no_record_suspends_recording(self):
        """Test primitives inside no_record produce unbound tensors."""
        with ValueGraph() as graph:
            x = graph.leaf(np.ones(2))
            with no_record():
                y = T.scale(x, 3.0)
            assert y.graph is None
            assert len(graph) == 1

    def test_unreachable_leaf_gets_zeros(self):
        """Test a leaf not on the path to the root gets a zero gradient."""
        with ValueGraph() as graph:
            x = graph.leaf(np.ones(2))
            unused = graph.leaf(np.ones(3))
            grads = graph.backward(T.total(x))
        np.testing.assert_array_equal(grads[unused], np.zeros(3))

    def test_shared_input_accumulates(self):
        """Test a value used twice receives the sum of both contributions."""
        with ValueGraph() as graph:
            x = graph.leaf(np.array([1.0, 2.0]))
            grads = graph.backward(T.total(T.mul(x, x)))
        np.testing.assert_allclose(grads[x], [2.0, 4.0])

    def test_backward_is_linear_in_roots(self):
        """Test grad(f + g) == grad(f) + grad(g)."""
        rng = np.random.default_rng(3)
        point, w = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))

        def f(x):
            return T.total(T.relu(T.matmul(x, w)))

        def g(x):
            return T.mean(T.logsumexp(x))

        def run(builder):
            with ValueGraph() as graph:
                x = graph.leaf(point)
                return graph.backward(builder(x))[x]

        np.testing.assert_allclose(run(lambda x: T.add(f(x), g(x))), run(f) + run(g), atol=1e-12)

    def test_constants_get_no_gradient(self):
        """Test constants never appear in the gradient mapping."""
        with ValueGraph() as graph:
            c = graph.constant(np.ones(2))
            x = graph.leaf(np.ones(2))
            grads = graph.backward(T.total(T.mul(x, c)))
        assert c not in grads
        assert x in grads


def _instances(seed):
    rng = np.random.default_rng(seed)
    return [np.random.default_rng(rng.integers(2 ** 32)) for _ in range(INSTANCES)]


class TestGradients:
    """Test every primitive's backward rule against central differences at 20 random points."""

    def check(self, function, point):
        error = grad_check(function, point, step=1e-5)
        assert error <= TOLERANCE, f"relative error {error}"

    def test_sum_is_exact(self):
        """Test sum has error at most 1e-10."""
        assert grad_check(T.total, np.random.default_rng(0).normal(size=(3, 4))) <= 1e-10

    @pytest.mark.parametrize("side", ["left", "right"])
    def test_matmul(self, side):
        """Test matmul with respect to each operand."""
        for rng in _instances(10):
            a, b, w = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
            if side == "left":
                self.check(lambda x: weighted(T.matmul(x, b), w), a)
            else:
                self.check(lambda x: weighted(T.matmul(a, x), w), b)

    @pytest.mark.parametrize("padding", [0, 1])
    def test_conv2d_input(self, padding):
        """Test conv2d with respect to the input."""
        for rng in _instances(11 + padding):
            x, k = rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(3, 2, 3, 3))
            out_side = 4 + 2 * padding - 2
            w = rng.normal(size=(1, 3, out_side, out_side))
            self.check(lambda t: weighted(T.conv2d(t, k, padding=padding), w), x)

    def test_conv2d_kernel(self):
        """Test conv2d with respect to the kernel."""
        for rng in _instances(13):
            x, k, w = rng.normal(size=(2, 2, 4, 4)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(2, 3, 4, 4))
            self.check(lambda t: weighted(T.conv2d(x, t, padding=1), w), k)

    def test_conv2d_single_image(self):
        """Test conv2d on a random 1x4x4 input."""
        rng = np.random.default_rng(14)
        x, k = rng.normal(size=(1, 1, 4, 4)), rng.normal(size=(1, 1, 3, 3))
        self.check(lambda t: T.total(T.mul(T.conv2d(t, k), T.conv2d(t, k))), x)

    def test_bias_add(self):
        """Test bias_add with respect to input and bias."""
        for rng in _instances(15):
            x, b, w = rng.normal(size=(2, 3, 2, 2)), rng.normal(size=3), rng.normal(size=(2, 3, 2, 2))
            self.check(lambda t: weighted(T.bias_add(t, b), w), x)
            self.check(lambda t: weighted(T.bias_add(x, t), w), b)

    def test_relu(self):
        """Test relu away from the kink."""
        for rng in _instances(16):
            x, w = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
            self.check(lambda t: weighted(T.relu(t), w), x)

    def test_max_pool(self):
        """Test max pooling routes gradient to the window maximum."""
        for rng in _instances(17):
            x, w = rng.normal(size=(2, 2, 4, 4)), rng.normal(size=(2, 2, 2, 2))
            self.check(lambda t: weighted(T.max_pool2d(t), w), x)

    def test_flatten(self):
        """Test flatten."""
        for rng in _instances(18):
            x, w = rng.normal(size=(2, 2, 2, 2)), rng.normal(size=(2, 8))
            self.check(lambda t: weighted(T.flatten(t), w), x)

    def test_softmax_cross_entropy(self):
        """Test cross-entropy at random logits with 10 classes."""
        for rng in _instances(19):
            logits, labels = rng.normal(size=(4, 10)), rng.integers(0, 10, size=4)
            self.check(lambda t: T.mean(T.softmax_cross_entropy(t, labels)), logits)

    @pytest.mark.parametrize("exclude", [False, True])
    def test_logsumexp(self, exclude):
        """Test log-sum-exp with and without an excluded column."""
        for rng in _instances(20 + exclude):
            x, w = rng.normal(size=(5, 4)), rng.normal(size=5)
            labels = rng.integers(0, 4, size=5) if exclude else None
            self.check(lambda t: weighted(T.logsumexp(t, exclude=labels), w), x)

    @pytest.mark.parametrize("pairwise", [False, True])
    def test_cosine(self, pairwise):
        """Test cosine similarity at random non-collinear vectors."""
        for rng in _instances(22 + pairwise):
            a, b = rng.normal(size=(3, 5)), rng.normal(size=(4 if pairwise else 3, 5))
            w = rng.normal(size=(3, 4) if pairwise else 3)
            self.check(lambda t: weighted(T.cosine_similarity(t, b, pairwise=pairwise), w), a)
            self.check(lambda t: weighted(T.cosine_similarity(a, t, pairwise=pairwise), w), b)

    def test_cosine_vectors(self):
        """Test cosine of two 1-D vectors."""
        for rng in _instances(24):
            a, b = rng.normal(size=6), rng.normal(size=6)
            self.check(lambda t: T.cosine_similarity(t, b), a)

    @pytest.mark.parametrize("kind", ["add", "sub", "mul"])
    def test_elementwise(self, kind):
        """Test add, sub and mul with respect to both operands."""
        op = getattr(T, kind)
        for rng in _instances(25):
            a, b, w = rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
            self.check(lambda t: weighted(op(t, b), w), a)
            self.check(lambda t: weighted(op(a, t), w), b)

    def test_scale_and_mean(self):
        """Test scale and mean."""
        for rng in _instances(26):
            x = rng.normal(size=(4, 3))
            factor = float(rng.normal())
            self.check(lambda t: T.mean(T.scale(t, factor)), x)

    def test_sign_has_zero_gradient(self):
        """Test sign is piecewise constant."""
        for rng in _instances(27):
            x, w = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
            self.check(lambda t: weighted(T.sign(t), w), x)

    def test_pick(self):
        """Test pick routes gradient to the selected entries."""
        for rng in _instances(28):
            x, labels, w = rng.normal(size=(5, 4)), rng.integers(0, 4, size=5), rng.normal(size=5)
            self.check(lambda t: weighted(T.pick(t, labels), w), x)

    @pytest.mark.parametrize("exclude", [False, True])
    def test_reduce_max(self, exclude):
        """Test row maximum with and without an excluded column."""
        for rng in _instances(29 + exclude):
            x, w = rng.normal(size=(5, 4)), rng.normal(size=5)
            labels = rng.integers(0, 4, size=5) if exclude else None
            self.check(lambda t: weighted(T.reduce_max(t, exclude=labels), w), x)


class TestProperties:
    """Property-based checks of numerical identities."""

    @settings(max_examples=100, deadline=None)
    @given(
        arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=st.floats(-50, 50)),
        st.floats(-100, 100),
    )
    def test_logsumexp_shift_identity(self, values, shift):
        """Test lse(v) == lse(v - c) + c up to 1e-12."""
        with no_record():
            direct = T.logsumexp(values).data
            shifted = T.logsumexp(values - shift).data + shift
        np.testing.assert_allclose(direct, shifted, atol=1e-12, rtol=0)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)), elements=st.floats(-30, 30)))
    def test_logsumexp_matches_scipy(self, values):
        """Test agreement with scipy's log-sum-exp."""
        np.testing.assert_allclose(T.logsumexp(values).data, scipy_logsumexp(values, axis=1), atol=1e-12)
