"""Norms, activations, and losses: frozen closed-form values plus gradients."""

import math

import numpy as np
import pytest

from conftest import grad_check
from viewtad import nn
from viewtad.tensor import GradTape, Tensor

# ln(1 + e^-20), computed directly in 64-bit
TINY_TAIL = math.log1p(math.exp(-20.0))


class TestSoftplus:
    def test_at_zero(self):
        out = nn.softplus(Tensor(0.0))
        assert out.data == pytest.approx(math.log(2.0), abs=1e-12)

    def test_large_positive_asymptote(self):
        out = nn.softplus(Tensor(20.0))
        assert float(out.data) - 20.0 == pytest.approx(TINY_TAIL, rel=1e-6)
        assert float(out.data) - 20.0 < 1e-8

    def test_large_negative(self):
        out = nn.softplus(Tensor(-20.0))
        assert float(out.data) == pytest.approx(TINY_TAIL, rel=1e-12)
        assert float(out.data) == pytest.approx(2.061153618190204e-09, rel=1e-6)

    def test_gradient(self, rng):
        grad_check(lambda ts: nn.softplus(ts[0]).sum(), [rng.normal(size=(4, 3))])


class TestGroupNorm:
    def test_two_values_normalize_to_unit(self):
        x = Tensor(np.array([[1.0, 3.0]]))
        out = nn.group_norm(x, 1, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-12)

    def test_constant_input_collapses_to_zero(self):
        x = Tensor(np.full((2, 8), 3.7))
        out = nn.group_norm(x, 4, Tensor(np.ones(8)), Tensor(np.zeros(8)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_idempotent_on_normalized_input(self):
        x = Tensor(np.array([[-1.0, 1.0]]))
        out = nn.group_norm(x, 1, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
        np.testing.assert_allclose(out.data, x.data, atol=1e-12)

    def test_requires_divisible_channels(self):
        with pytest.raises(ValueError, match="divisible"):
            nn.group_norm(Tensor(np.ones((2, 6))), 4, Tensor(np.ones(6)), Tensor(np.zeros(6)))

    def test_grouped_stats_are_per_sample_per_group(self, rng):
        x = rng.normal(size=(3, 5, 8))
        out = nn.group_norm(Tensor(x), 2, Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=0.0)
        for b in range(3):
            for g in range(2):
                block = out.data[b, :, g * 4 : (g + 1) * 4]
                assert block.mean() == pytest.approx(0.0, abs=1e-10)
                assert block.std() == pytest.approx(1.0, rel=1e-10)

    def test_gradient(self, rng):
        x = rng.normal(size=(2, 3, 4))
        gamma = rng.normal(size=4)
        beta = rng.normal(size=4)
        grad_check(
            lambda ts: (nn.group_norm(ts[0], 2, ts[1], ts[2]) * 0.5).sum(),
            [x, gamma, beta],
        )


class TestLayerNorm:
    def test_two_values(self):
        out = nn.layer_norm(Tensor(np.array([1.0, 3.0])), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-12)

    def test_constant_row(self):
        out = nn.layer_norm(Tensor(np.full((3, 4), 2.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_equals_group_norm_with_one_group(self, rng):
        x = rng.normal(size=(5, 6))
        gamma = Tensor(rng.normal(size=6))
        beta = Tensor(rng.normal(size=6))
        ln = nn.layer_norm(Tensor(x), gamma, beta)
        gn = nn.group_norm(Tensor(x), 1, gamma, beta)
        np.testing.assert_array_equal(ln.data, gn.data)

    def test_normalizes_per_position(self, rng):
        x = rng.normal(size=(7, 5))
        out = nn.layer_norm(Tensor(x), Tensor(np.ones(5)), Tensor(np.zeros(5)), eps=0.0)
        np.testing.assert_allclose(out.data.mean(axis=1), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.data.std(axis=1), 1.0, rtol=1e-10)

    def test_gradient(self, rng):
        x = rng.normal(size=(4, 6))
        gamma = rng.normal(size=6)
        beta = rng.normal(size=6)
        grad_check(lambda ts: nn.layer_norm(ts[0], ts[1], ts[2]).mean(), [x, gamma, beta])


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = nn.cross_entropy(Tensor(np.zeros(4)), 2)
        assert float(loss.data) == pytest.approx(math.log(4.0), rel=1e-12)

    def test_confident_correct(self):
        loss = nn.cross_entropy(Tensor(np.array([10.0, -10.0])), 0)
        assert float(loss.data) == pytest.approx(TINY_TAIL, rel=1e-9)

    def test_shift_invariance(self, rng):
        logits = rng.normal(size=(3, 5))
        labels = np.array([0, 4, 2])
        a = nn.cross_entropy(Tensor(logits), labels)
        b = nn.cross_entropy(Tensor(logits + 123.4), labels)
        assert float(a.data) == pytest.approx(float(b.data), rel=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="range"):
            nn.cross_entropy(Tensor(np.zeros((1, 3))), [3])

    def test_needs_two_classes(self):
        with pytest.raises(ValueError, match="2 classes"):
            nn.cross_entropy(Tensor(np.zeros((1, 1))), [0])

    def test_gradient(self, rng):
        logits = rng.normal(size=(4, 6))
        labels = np.array([1, 5, 0, 3])
        grad_check(lambda ts: nn.cross_entropy(ts[0], labels), [logits])


class TestBceMultilabel:
    def test_zero_logits_give_ln2(self, rng):
        targets = (rng.random((5, 3)) > 0.5).astype(float)
        loss = nn.bce_multilabel(Tensor(np.zeros((5, 3))), targets)
        assert float(loss.data) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_confident_positive(self):
        loss = nn.bce_multilabel(Tensor(np.array([[20.0]])), np.array([[1.0]]))
        assert float(loss.data) == pytest.approx(TINY_TAIL, rel=1e-9)

    def test_confident_wrong(self):
        loss = nn.bce_multilabel(Tensor(np.array([[-20.0]])), np.array([[1.0]]))
        assert float(loss.data) == pytest.approx(20.0, rel=1e-6)

    def test_rejects_non_binary_targets(self):
        with pytest.raises(ValueError, match="0 or 1"):
            nn.bce_multilabel(Tensor(np.zeros((1, 2))), np.array([[0.5, 1.0]]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            nn.bce_multilabel(Tensor(np.zeros((2, 2))), np.zeros((2, 3)))

    def test_class_weights_scale_loss(self):
        logits = Tensor(np.zeros((4, 2)))
        targets = np.zeros((4, 2))
        base = nn.bce_multilabel(logits, targets)
        weighted = nn.bce_multilabel(logits, targets, class_weights=[2.0, 2.0])
        assert float(weighted.data) == pytest.approx(2.0 * float(base.data), rel=1e-12)

    def test_gradient(self, rng):
        logits = rng.normal(size=(3, 4))
        targets = (rng.random((3, 4)) > 0.5).astype(float)
        grad_check(lambda ts: nn.bce_multilabel(ts[0], targets), [logits])

    def test_gradient_with_class_weights(self, rng):
        logits = rng.normal(size=(3, 4))
        targets = (rng.random((3, 4)) > 0.3).astype(float)
        weights = [0.5, 1.0, 2.0, 1.5]
        grad_check(lambda ts: nn.bce_multilabel(ts[0], targets, weights), [logits])
