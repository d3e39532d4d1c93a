"""
Tests for the margin, soft-margin, pattern-dependent and total losses.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.core import tensor as T
from src.core.bitplane import slice_batch
from src.core.errors import DomainError, ShapeError
from src.core.gradcheck import grad_check
from src.core.losses import (
    margin,
    margin_loss,
    margins,
    pattern_dependent_from_features,
    pattern_dependent_from_scores,
    pattern_dependent_loss,
    soft_margin_loss,
    total_loss,
)
from src.core.tensor import ValueGraph, no_record
from src.schemas.configs import LossConfig
from tests.doubles import LinearModel


def spaced_logits(rng, rows, classes):
    """Random logits whose entries per row are at least 0.4 apart."""
    order = np.stack([rng.permutation(classes) for _ in range(rows)])
    return order * 0.5 + rng.uniform(0.0, 0.1, size=(rows, classes)) + rng.normal(size=(rows, 1))


class TestMargin:
    """Test the per-example margin and the hard margin loss."""

    def test_correct_example(self):
        """Test logits [2.0, 0.5, 0.1] with y=0 give 1.5."""
        assert margin([2.0, 0.5, 0.1], 0) == pytest.approx(1.5)

    def test_wrong_example(self):
        """Test logits [2.0, 0.5, 0.1] with y=1 give -1.5."""
        assert margin([2.0, 0.5, 0.1], 1) == pytest.approx(-1.5)

    def test_single_class_rejected(self):
        """Test a one-class vector is rejected."""
        with pytest.raises(DomainError):
            margin([1.0], 0)

    def test_matrix_rejected(self):
        """Test margin expects a vector."""
        with pytest.raises(ShapeError):
            margin(np.zeros((2, 2)), 0)

    def test_batch_margins_match_scalar(self):
        """Test the batched margins agree with the scalar form."""
        rng = np.random.default_rng(0)
        logits, labels = rng.normal(size=(6, 4)), rng.integers(0, 4, size=6)
        expected = [margin(row, int(y)) for row, y in zip(logits, labels)]
        np.testing.assert_allclose(margins(logits, labels).data, expected, atol=1e-15)

    def test_margin_loss_examples(self):
        """Test 0 when the true logit is maximal, 1.0 for [0, 1] with y=0, 0.5 for both."""
        assert margin_loss(np.array([[3.0, 1.0]]), [0]).item() == 0.0
        assert margin_loss(np.array([[0.0, 1.0]]), [0]).item() == 1.0
        assert margin_loss(np.array([[3.0, 1.0], [0.0, 1.0]]), [0, 0]).item() == 0.5

    def test_margin_loss_non_negative(self):
        """Test the hard margin loss is never negative."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            logits, labels = rng.normal(size=(8, 5)), rng.integers(0, 5, size=8)
            assert margin_loss(logits, labels).item() >= 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(2, 6), st.floats(0.01, 2.0))
    def test_margin_loss_positive_when_rival_wins(self, seed, classes, lead):
        """Test the hard margin loss is positive once another logit beats the true one."""
        rng = np.random.default_rng(seed)
        logits, labels = rng.normal(size=(4, classes)), rng.integers(0, classes, size=4)
        rival = (labels[0] + 1) % classes
        logits[0, rival] = logits[0, labels[0]] + lead
        assert margin_loss(logits, labels).item() > 0.0

    def test_margin_loss_tie_is_zero(self):
        """Test a true logit tied with the largest other logit still counts as maximal."""
        assert margin_loss(np.array([[1.0, 1.0, 0.2]]), [0]).item() == 0.0


class TestSoftMargin:
    """Test the smooth-max margin loss."""

    def test_two_class_example(self):
        """Test logits [1, 0], y=0, upsilon=1 give -1.0."""
        assert soft_margin_loss(np.array([[1.0, 0.0]]), [0], 1.0).item() == pytest.approx(-1.0, abs=1e-15)

    def test_large_upsilon_limit(self):
        """Test upsilon=1e3 is within 1e-6 of the negated mean margin on 50 batches."""
        rng = np.random.default_rng(2)
        for _ in range(50):
            logits, labels = spaced_logits(rng, 8, 5), rng.integers(0, 5, size=8)
            expected = -np.mean(margins(logits, labels).data)
            assert abs(soft_margin_loss(logits, labels, 1e3).item() - expected) <= 1e-6

    @pytest.mark.parametrize("upsilon", [0.1, 0.995, 5.0, 1e3])
    def test_bounds_negated_margin(self, upsilon):
        """Test soft_margin_loss >= -mean(margin) for any upsilon."""
        rng = np.random.default_rng(3)
        for _ in range(50):
            logits, labels = rng.normal(size=(8, 5)) * 3.0, rng.integers(0, 5, size=8)
            bound = -np.mean(margins(logits, labels).data)
            assert soft_margin_loss(logits, labels, upsilon).item() >= bound - 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(2, 6), st.floats(0.1, 10.0), st.floats(0.0, 5.0))
    def test_non_increasing_in_true_logit(self, seed, classes, upsilon, delta):
        """Test raising one true-class logit never raises the soft margin loss."""
        rng = np.random.default_rng(seed)
        logits, labels = rng.normal(size=(5, classes)), rng.integers(0, classes, size=5)
        row = int(rng.integers(0, 5))
        raised = logits.copy()
        raised[row, labels[row]] += delta
        before = soft_margin_loss(logits, labels, upsilon).item()
        assert soft_margin_loss(raised, labels, upsilon).item() <= before + 1e-12

    def test_non_positive_upsilon(self):
        """Test upsilon must be positive."""
        with pytest.raises(DomainError):
            soft_margin_loss(np.zeros((1, 2)), [0], 0.0)


class TestPatternDependent:
    """Test the contrastive loss."""

    def test_single_example(self):
        """Test N=1, s_nat=1, s_pert=-1, tau=1 gives -2.0."""
        assert pattern_dependent_from_scores([1.0], [[-1.0]], 1.0).item() == pytest.approx(-2.0)

    def test_equal_scores_cancel(self):
        """Test a single negative equal to the positive gives 0."""
        assert pattern_dependent_from_scores([0.3], [[0.3]], 1.0).item() == pytest.approx(0.0, abs=1e-15)

    def test_prefers_natural_alignment(self):
        """Test the loss is lower when adversarial features align with natural ones."""
        rng = np.random.default_rng(4)
        f_adv = rng.normal(size=(4, 6))
        f_pert = rng.normal(size=(4, 6))
        aligned = pattern_dependent_from_features(f_adv, f_pert, f_adv, 0.07).item()
        opposed = pattern_dependent_from_features(-f_adv, f_pert, f_adv, 0.07).item()
        assert aligned < opposed

    @settings(max_examples=50, deadline=None)
    @given(
        st.integers(0, 2 ** 32 - 1),
        st.integers(1, 4),
        st.integers(1, 4),
        st.floats(0.25, 2.0),
        st.floats(0.01, 0.5),
    )
    def test_strictly_monotone_in_scores(self, seed, n, m, tau, delta):
        """Test the loss falls when a positive score rises and grows when a negative score rises."""
        rng = np.random.default_rng(seed)
        s_nat, s_pert = rng.uniform(-1.0, 1.0, size=n), rng.uniform(-1.0, 1.0, size=(n, m))
        j, i = int(rng.integers(0, n)), int(rng.integers(0, m))
        base = pattern_dependent_from_scores(s_nat, s_pert, tau).item()

        raised_nat = s_nat.copy()
        raised_nat[j] += delta
        assert pattern_dependent_from_scores(raised_nat, s_pert, tau).item() < base

        raised_pert = s_pert.copy()
        raised_pert[j, i] += delta
        assert pattern_dependent_from_scores(s_nat, raised_pert, tau).item() > base

    def test_temperature_must_be_positive(self):
        """Test tau must be positive."""
        with pytest.raises(DomainError):
            pattern_dependent_from_scores([1.0], [[0.0]], 0.0)

    def test_misaligned_scores(self):
        """Test positive and negative scores must share the batch axis."""
        with pytest.raises(ShapeError):
            pattern_dependent_from_scores([1.0, 2.0], [[0.0]], 1.0)

    def test_misaligned_features(self):
        """Test the three feature batches must have equal shapes."""
        with pytest.raises(ShapeError):
            pattern_dependent_from_features(np.ones((2, 3)), np.ones((3, 3)), np.ones((2, 3)), 1.0)

    def test_model_form_matches_features(self, linear_model, rng):
        """Test the model-level loss equals the loss on flattened inputs."""
        x_nat, x_pert, x_adv = (rng.random((3, 2, 4, 4)) for _ in range(3))
        expected = pattern_dependent_from_features(
            x_nat.reshape(3, -1), x_pert.reshape(3, -1), x_adv.reshape(3, -1), 0.5
        ).item()
        assert pattern_dependent_loss(linear_model, x_nat, x_pert, x_adv, 0.5).item() == pytest.approx(expected)


class TestTotalLoss:
    """Test the combined objective."""

    def setup_method(self):
        """Set up a linear model and an adversarial batch."""
        rng = np.random.default_rng(5)
        self.model = LinearModel(rng.normal(size=(32, 3)) * 0.3, np.zeros(3))
        self.clean = rng.random((6, 2, 4, 4))
        self.adv = np.clip(self.clean + rng.uniform(-0.03, 0.03, size=self.clean.shape), 0.0, 1.0)
        self.labels = rng.integers(0, 3, size=6)

    def cross_entropy(self):
        return np.mean(T.softmax_cross_entropy(self.model.logits(self.adv), self.labels).data)

    def test_zero_weights_give_cross_entropy(self):
        """Test alpha = gamma = 0 reduces the objective to cross-entropy exactly."""
        breakdown = total_loss(self.model, self.clean, self.adv, self.labels, LossConfig(alpha=0.0, gamma=0.0), 2)
        assert breakdown.total == breakdown.ce
        assert abs(breakdown.total - self.cross_entropy()) <= 1e-12

    @pytest.mark.parametrize("margin_mode", ["soft", "hard"])
    def test_decomposition(self, margin_mode):
        """Test total == ce + alpha * pd + gamma * mg within 1e-12."""
        cfg = LossConfig(alpha=0.3, gamma=1.5, margin_mode=margin_mode)
        b = total_loss(self.model, self.clean, self.adv, self.labels, cfg, 2)
        assert abs(b.total - (b.ce + cfg.alpha * b.pd + cfg.gamma * b.mg_soft)) <= 1e-12
        assert b.record().total == b.total

    def test_full_split_zeroes_perturbed_pattern(self):
        """Test K=R leaves no perturbed pattern, so every negative score is 0."""
        _, pert = slice_batch(self.adv, 8)
        assert not np.any(pert)
        cfg = LossConfig(alpha=1.0, gamma=0.0, tau=0.5)
        b = total_loss(self.model, self.clean, self.adv, self.labels, cfg, 8)
        natural, _ = slice_batch(self.adv, 8)
        s_nat = T.cosine_similarity(natural.reshape(6, -1), self.adv.reshape(6, -1)).data
        assert b.pd == pytest.approx(np.log(6) - np.mean(s_nat) / 0.5, abs=1e-12)

    def test_without_patterns_uses_clean_batch(self):
        """Test use_patterns=False reports pd = 0 and takes the margin on the clean batch."""
        cfg = LossConfig(use_patterns=False, gamma=1.0, margin_mode="hard")
        b = total_loss(self.model, self.clean, self.adv, self.labels, cfg, 2)
        assert b.pd == 0.0
        assert b.mg_soft == pytest.approx(margin_loss(self.model.logits(self.clean), self.labels).item())

    def test_reproducible(self):
        """Test two evaluations agree to the last bit."""
        cfg = LossConfig()
        first = total_loss(self.model, self.clean, self.adv, self.labels, cfg, 2)
        second = total_loss(self.model, self.clean, self.adv, self.labels, cfg, 2)
        assert (first.ce, first.pd, first.mg_soft, first.total) == (second.ce, second.pd, second.mg_soft, second.total)

    def test_zero_weight_terms_carry_no_gradient(self):
        """Test alpha = gamma = 0 gives the same weight gradient as cross-entropy alone."""
        cfg = LossConfig(alpha=0.0, gamma=0.0)

        def gradient(builder):
            with ValueGraph() as graph:
                weights = graph.leaf(self.model.weights.data)
                model = LinearModel(weights, self.model.bias)
                return graph.backward(builder(model))[weights]

        full = gradient(lambda m: total_loss(m, self.clean, self.adv, self.labels, cfg, 2).objective)
        plain = gradient(lambda m: T.mean(T.softmax_cross_entropy(m.logits(self.adv), self.labels)))
        np.testing.assert_array_equal(full, plain)


class TestLossGradients:
    """Test every loss against central differences at 20 random points."""

    POINTS = 20

    def points(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(self.POINTS):
            yield rng

    def test_margin_loss(self):
        """Test the hard margin loss at tie-free logits."""
        for rng in self.points(10):
            logits, labels = spaced_logits(rng, 5, 4), rng.integers(0, 4, size=5)
            assert grad_check(lambda t: margin_loss(t, labels), logits) <= 1e-4

    def test_soft_margin_loss(self):
        """Test the soft margin loss."""
        for rng in self.points(11):
            logits, labels = rng.normal(size=(5, 4)), rng.integers(0, 4, size=5)
            assert grad_check(lambda t: soft_margin_loss(t, labels, 0.995), logits) <= 1e-4

    def test_pattern_dependent_loss(self):
        """Test the contrastive loss with respect to each feature batch."""
        for rng in self.points(12):
            f_nat, f_pert, f_adv = (rng.normal(size=(4, 5)) for _ in range(3))
            assert grad_check(lambda t: pattern_dependent_from_features(t, f_pert, f_adv, 0.5), f_nat) <= 1e-4
            assert grad_check(lambda t: pattern_dependent_from_features(f_nat, t, f_adv, 0.5), f_pert) <= 1e-4
            assert grad_check(lambda t: pattern_dependent_from_features(f_nat, f_pert, t, 0.5), f_adv) <= 1e-4

    def test_total_loss_through_model(self):
        """Test the full objective with respect to the classifier weights."""
        for rng in self.points(13):
            clean = rng.random((4, 2, 4, 4))
            adv = np.clip(clean + rng.uniform(-0.03, 0.03, size=clean.shape), 0.0, 1.0)
            labels = rng.integers(0, 3, size=4)
            bias = rng.normal(size=3) * 0.1
            cfg = LossConfig(alpha=0.5, gamma=1.0, tau=0.5)

            def objective(t):
                return total_loss(LinearModel(t, bias), clean, adv, labels, cfg, 2).objective

            assert grad_check(objective, rng.normal(size=(32, 3)) * 0.3) <= 1e-4

    def test_values_match_without_recording(self):
        """Test recording does not change the loss value."""
        rng = np.random.default_rng(14)
        logits, labels = rng.normal(size=(5, 4)), rng.integers(0, 4, size=5)
        with no_record():
            plain = soft_margin_loss(logits, labels, 0.995).item()
        with ValueGraph() as graph:
            recorded = soft_margin_loss(graph.leaf(logits), labels, 0.995).item()
        assert plain == recorded
