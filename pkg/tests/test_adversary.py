"""Discriminator network and the adversarial loss pair."""

import math

import numpy as np
import pytest

from voxseg.discriminator import (
    DiscriminatorSpec,
    build_discriminator,
    discriminator_loss,
    generator_adversarial_loss,
)
from voxseg.errors import ContractViolation
from voxseg.generator import Di2inSpec, build_di2in, forward_generator, total_loss
from voxseg.ops import bce_loss, concat_channels
from voxseg.tensor import Tensor

import oracles


class TestBuild:
    def test_output_shape_and_range(self):
        net = build_discriminator(DiscriminatorSpec(base_filters=2, conv_levels=2), seed=0)
        rng = np.random.default_rng(0)
        maps = Tensor((rng.random((2, 1, 8, 8, 8)) > 0.5).astype(np.float32))
        out = net(maps, mode="infer")
        assert out.shape == (2,)
        assert np.all(out.data > 0.0) and np.all(out.data < 1.0)

    def test_constant_inputs_give_finite_probabilities(self):
        net = build_discriminator(DiscriminatorSpec(base_filters=2, conv_levels=2), seed=1)
        for value in (0.0, 1.0):
            maps = Tensor(np.full((2, 1, 8, 8, 8), value, np.float32))
            out = net(maps, mode="infer")
            assert np.all(np.isfinite(out.data))

    def test_param_count_matches_closed_form(self):
        spec = DiscriminatorSpec(base_filters=8, conv_levels=4)
        net = build_discriminator(spec, seed=0)
        assert net.param_count() == oracles.discriminator_param_count(8, 4)

    def test_small_param_count_matches_closed_form(self):
        spec = DiscriminatorSpec(base_filters=2, conv_levels=3)
        net = build_discriminator(spec, seed=0)
        assert net.param_count() == oracles.discriminator_param_count(2, 3)

    def test_too_small_input_rejected(self):
        net = build_discriminator(DiscriminatorSpec(base_filters=2, conv_levels=3), seed=0)
        maps = Tensor(np.zeros((1, 1, 4, 8, 8), np.float32))
        with pytest.raises(ContractViolation):
            net(maps, mode="infer")

    def test_shallow_spec_rejected(self):
        with pytest.raises(ContractViolation):
            DiscriminatorSpec(base_filters=2, conv_levels=1)


class TestDiscriminatorLoss:
    def test_perfect_discriminator_near_zero(self):
        eps = 1e-6
        gt = Tensor(np.full(4, 1.0 - eps, np.float32))
        pred = Tensor(np.full(4, eps, np.float32))
        assert discriminator_loss(gt, pred).item() < 1e-4

    def test_chance_level_is_two_ln_two(self):
        half = Tensor(np.full(4, 0.5, np.float32))
        loss = discriminator_loss(half, Tensor(half.data.copy()))
        assert abs(loss.item() - 2.0 * math.log(2.0)) < 1e-6

    def test_matches_per_item_summation(self):
        rng = np.random.default_rng(2)
        gt = rng.random(6).astype(np.float32) * 0.98 + 0.01
        pred = rng.random(6).astype(np.float32) * 0.98 + 0.01
        loss = discriminator_loss(Tensor(gt), Tensor(pred)).item()
        direct = (-np.log(gt.astype(np.float64)).mean()
                  - np.log1p(-pred.astype(np.float64)).mean())
        assert abs(loss - direct) < 1e-6

    def test_is_twice_the_pooled_binary_cross_entropy(self):
        # pooling (gt -> target 1, pred -> target 0) into one batch averages
        # over 2N items, so the two-term sum of means is exactly twice it
        rng = np.random.default_rng(3)
        gt = rng.random(5).astype(np.float32) * 0.98 + 0.01
        pred = rng.random(5).astype(np.float32) * 0.98 + 0.01
        loss = discriminator_loss(Tensor(gt), Tensor(pred)).item()
        pooled = bce_loss(
            Tensor(np.concatenate([gt, pred])),
            Tensor(np.concatenate([np.ones(5), np.zeros(5)]).astype(np.float32)),
        ).item()
        assert abs(loss - 2.0 * pooled) < 1e-6

    def test_gradient_signs_push_apart(self):
        gt = Tensor(np.full(3, 0.5, np.float32), requires_grad=True)
        pred = Tensor(np.full(3, 0.5, np.float32), requires_grad=True)
        discriminator_loss(gt, pred).backward()
        assert np.all(gt.grad < 0)
        assert np.all(pred.grad > 0)


class TestGeneratorAdversarialLoss:
    def test_lambda_zero_returns_seg_loss_exactly(self):
        seg = Tensor(np.float32(0.37))
        pred = Tensor(np.array([0.2, 0.9], np.float32))
        assert generator_adversarial_loss(seg, pred, 0.0).item() == seg.item()

    def test_fooled_discriminator_leaves_seg_loss(self):
        seg = Tensor(np.float32(0.25))
        pred = Tensor(np.full(4, 1.0 - 1e-7, np.float32))
        loss = generator_adversarial_loss(seg, pred, 0.01)
        assert abs(loss.item() - 0.25) < 1e-6

    def test_hand_computed_value(self):
        seg = Tensor(np.float32(0.5))
        pred = Tensor(np.array([0.5, 0.5], np.float32))
        loss = generator_adversarial_loss(seg, pred, 0.01)
        expected = 0.5 - 0.01 * math.log(0.5)
        assert abs(loss.item() - expected) < 1e-6

    def test_negative_lambda_rejected(self):
        seg = Tensor(np.float32(0.5))
        pred = Tensor(np.array([0.5], np.float32))
        with pytest.raises(ContractViolation):
            generator_adversarial_loss(seg, pred, -0.1)

    def test_loss_decreases_as_predictions_look_real(self):
        seg = Tensor(np.float32(0.5))
        lo = generator_adversarial_loss(seg, Tensor(np.array([0.9], np.float32)), 0.1)
        hi = generator_adversarial_loss(seg, Tensor(np.array([0.1], np.float32)), 0.1)
        assert lo.item() < hi.item()

    def test_gradient_sign_toward_real(self):
        seg = Tensor(np.float32(0.5))
        pred = Tensor(np.array([0.3, 0.6, 0.9], np.float32), requires_grad=True)
        generator_adversarial_loss(seg, pred, 0.05).backward()
        assert np.all(pred.grad < 0)


class TestParameterIsolation:
    def _setup(self):
        gspec = Di2inSpec(base_filters=2, encoder_levels=2,
                          branch_attach_levels=(2, 0),
                          branch_upscale_factors=(4, 1),
                          loss_weights=(1.0, 1.0, 1.0))
        g = build_di2in(gspec, seed=0)
        d = build_discriminator(DiscriminatorSpec(base_filters=2, conv_levels=2), seed=1)
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((2, 1, 8, 8, 8)).astype(np.float32))
        label = Tensor((rng.random((2, 1, 8, 8, 8)) > 0.5).astype(np.float32))
        return gspec, g, d, x, label

    def test_generator_update_leaves_discriminator_grads_untouched(self):
        gspec, g, d, x, label = self._setup()
        d.set_requires_grad(False)
        out = forward_generator(g, x, mode="train")
        seg = total_loss(out, label, gspec.loss_weights)
        d_on_pred = d(out.final_prob, mode="infer")
        generator_adversarial_loss(seg, d_on_pred, 0.01).backward()
        assert all(p.grad is None for p in d.parameters())
        assert any(p.grad is not None and np.any(p.grad != 0) for p in g.parameters())

    def test_discriminator_update_leaves_generator_grads_untouched(self):
        gspec, g, d, x, label = self._setup()
        out = forward_generator(g, x, mode="infer")
        pred = out.final_prob.detach()
        d_gt = d(label, mode="train")
        d_pred = d(pred, mode="train")
        discriminator_loss(d_gt, d_pred).backward()
        assert all(p.grad is None for p in g.parameters())
        assert any(p.grad is not None and np.any(p.grad != 0) for p in d.parameters())
