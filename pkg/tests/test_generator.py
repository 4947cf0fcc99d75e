"""Segmentation network construction, forward contract, and training loss."""

import math

import numpy as np
import pytest

from voxseg.errors import ContractViolation
from voxseg.generator import (
    Di2inSpec,
    GeneratorOutput,
    build_di2in,
    forward_generator,
    total_loss,
)
from voxseg.tensor import Tensor

import oracles


def tiny_spec(**kw):
    base = dict(
        base_filters=2,
        encoder_levels=2,
        branch_attach_levels=(2, 0),
        branch_upscale_factors=(4, 1),
        loss_weights=(1.0, 1.0, 1.0),
    )
    base.update(kw)
    return Di2inSpec(**base)


class TestSpecValidation:
    def test_zero_levels_rejected(self):
        with pytest.raises(ContractViolation):
            Di2inSpec(base_filters=8, encoder_levels=0,
                      branch_attach_levels=(0,), branch_upscale_factors=(1,),
                      loss_weights=(1.0, 1.0))

    def test_factor_must_match_attach_depth(self):
        with pytest.raises(ContractViolation):
            tiny_spec(branch_attach_levels=(2, 0), branch_upscale_factors=(2, 1))

    def test_weights_must_cover_branches_plus_final(self):
        with pytest.raises(ContractViolation):
            tiny_spec(loss_weights=(1.0, 1.0))

    def test_all_zero_weights_rejected(self):
        with pytest.raises(ContractViolation):
            tiny_spec(loss_weights=(0.0, 0.0, 0.0))

    def test_default_spec_has_three_branches(self):
        spec = Di2inSpec()
        assert spec.branch_upscale_factors == (16, 4, 1)
        assert spec.branch_attach_levels == (4, 2, 0)


class TestBuild:
    def test_param_count_matches_closed_form(self):
        spec = Di2inSpec(base_filters=8, encoder_levels=3,
                         branch_attach_levels=(2, 0),
                         branch_upscale_factors=(4, 1),
                         loss_weights=(1.0, 1.0, 1.0))
        net = build_di2in(spec, seed=0)
        expected = oracles.di2in_param_count(8, 3, (2, 0))
        assert net.param_count() == expected

    def test_default_param_count_matches_closed_form(self):
        net = build_di2in(Di2inSpec(), seed=0)
        assert net.param_count() == oracles.di2in_param_count(16, 4, (4, 2, 0))

    def test_seeded_builds_are_identical(self):
        a = build_di2in(tiny_spec(), seed=7)
        b = build_di2in(tiny_spec(), seed=7)
        assert a.checksum() == b.checksum()

    def test_different_seeds_differ(self):
        a = build_di2in(tiny_spec(), seed=7)
        b = build_di2in(tiny_spec(), seed=8)
        assert a.checksum() != b.checksum()


class TestForward:
    def test_default_build_emits_three_input_shaped_branches(self):
        net = build_di2in(Di2inSpec(base_filters=2), seed=0)
        x = Tensor(np.zeros((1, 1, 32, 32, 32), np.float32))
        out = forward_generator(net, x, mode="infer")
        assert len(out.branch_probs) == 3
        for prob in out.branch_probs + [out.final_prob]:
            assert prob.shape == (1, 1, 32, 32, 32)

    def test_zero_input_gives_finite_probabilities(self):
        net = build_di2in(tiny_spec(), seed=3)
        x = Tensor(np.zeros((2, 1, 8, 8, 8), np.float32))
        out = forward_generator(net, x, mode="infer")
        for prob in out.branch_probs + [out.final_prob]:
            assert np.all(np.isfinite(prob.data))
            assert np.all(prob.data > 0.0) and np.all(prob.data < 1.0)

    def test_batch_item_independence_at_inference(self):
        net = build_di2in(tiny_spec(), seed=4)
        rng = np.random.default_rng(0)
        one = rng.standard_normal((1, 1, 8, 8, 8)).astype(np.float32)
        two = Tensor(np.concatenate([one, one], axis=0))
        out = forward_generator(net, Tensor(two.data), mode="infer")
        np.testing.assert_allclose(out.final_prob.data[0], out.final_prob.data[1],
                                   atol=1e-6)

    def test_shape_closure_random_specs(self):
        rng = np.random.default_rng(11)
        for _ in range(6):
            levels = int(rng.integers(1, 4))
            attach = sorted({int(a) for a in
                             rng.integers(0, levels + 1, size=2)
                             if 2 ** a in (1, 2, 4, 16)}, reverse=True)
            if not attach:
                continue
            spec = Di2inSpec(
                base_filters=int(rng.integers(1, 4)),
                encoder_levels=levels,
                branch_attach_levels=tuple(attach),
                branch_upscale_factors=tuple(2 ** a for a in attach),
                loss_weights=tuple([1.0] * (len(attach) + 1)),
            )
            net = build_di2in(spec, seed=1)
            side = 2 ** levels * int(rng.integers(1, 3))
            x = Tensor(rng.standard_normal((1, 1, side, side, side)).astype(np.float32))
            out = forward_generator(net, x, mode="infer")
            for prob in out.branch_probs + [out.final_prob]:
                assert prob.shape == x.shape

    def test_indivisible_extent_rejected(self):
        net = build_di2in(tiny_spec(), seed=0)
        x = Tensor(np.zeros((1, 1, 6, 8, 8), np.float32))
        with pytest.raises(ContractViolation):
            forward_generator(net, x, mode="infer")

    def test_wrong_channel_count_rejected(self):
        net = build_di2in(tiny_spec(), seed=0)
        x = Tensor(np.zeros((1, 2, 8, 8, 8), np.float32))
        with pytest.raises(ContractViolation):
            forward_generator(net, x, mode="infer")


class TestTotalLoss:
    def _fixed_outputs(self, value, shape=(1, 1, 4, 4, 4), n_branches=3):
        maps = [Tensor(np.full(shape, value, np.float32)) for _ in range(n_branches + 1)]
        return GeneratorOutput(final_prob=maps[-1], branch_probs=maps[:-1])

    def test_perfect_prediction_near_zero(self):
        rng = np.random.default_rng(5)
        label = (rng.random((1, 1, 4, 4, 4)) > 0.5).astype(np.float32)
        maps = [Tensor(label.copy()) for _ in range(4)]
        out = GeneratorOutput(final_prob=maps[-1], branch_probs=maps[:-1])
        loss = total_loss(out, Tensor(label), (1.0, 1.0, 1.0, 1.0))
        assert loss.item() < 1e-5

    def test_weight_masking_leaves_final_only(self):
        rng = np.random.default_rng(6)
        label = (rng.random((1, 1, 4, 4, 4)) > 0.5).astype(np.float32)
        branch_vals = rng.random((3, 1, 1, 4, 4, 4)).astype(np.float32)
        final = rng.random((1, 1, 4, 4, 4)).astype(np.float32) * 0.8 + 0.1
        out = GeneratorOutput(
            final_prob=Tensor(final),
            branch_probs=[Tensor(v) for v in branch_vals],
        )
        loss = total_loss(out, Tensor(label), (0.0, 0.0, 0.0, 1.0))
        p = final.astype(np.float64)
        expected = -(label * np.log(p) + (1 - label) * np.log(1 - p)).mean()
        assert abs(loss.item() - expected) < 1e-6

    def test_chance_level_maps_sum_to_four_ln_two(self):
        label = np.zeros((1, 1, 4, 4, 4), np.float32)
        out = self._fixed_outputs(0.5)
        loss = total_loss(out, Tensor(label), (1.0, 1.0, 1.0, 1.0))
        assert abs(loss.item() - 4.0 * math.log(2.0)) < 1e-5

    def test_nonbinary_label_rejected(self):
        out = self._fixed_outputs(0.5)
        label = Tensor(np.full((1, 1, 4, 4, 4), 0.3, np.float32))
        with pytest.raises(ContractViolation):
            total_loss(out, label, (1.0, 1.0, 1.0, 1.0))


class TestGradientReach:
    def test_deepest_branch_reaches_every_encoder_parameter(self):
        spec = tiny_spec(loss_weights=(1.0, 0.0, 0.0))
        net = build_di2in(spec, seed=9)
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((2, 1, 8, 8, 8)).astype(np.float32))
        label = Tensor((rng.random((2, 1, 8, 8, 8)) > 0.5).astype(np.float32))
        out = forward_generator(net, x, mode="train")
        loss = total_loss(out, label, spec.loss_weights)
        loss.backward()
        for name, p in net.named_parameters():
            if name.startswith("encoder"):
                assert p.grad is not None and np.any(p.grad != 0), name

    def test_final_loss_reaches_all_parameters(self):
        spec = tiny_spec()
        net = build_di2in(spec, seed=10)
        rng = np.random.default_rng(10)
        x = Tensor(rng.standard_normal((2, 1, 8, 8, 8)).astype(np.float32))
        label = Tensor((rng.random((2, 1, 8, 8, 8)) > 0.5).astype(np.float32))
        out = forward_generator(net, x, mode="train")
        loss = total_loss(out, label, spec.loss_weights)
        loss.backward()
        for name, p in net.named_parameters():
            assert p.grad is not None and np.any(p.grad != 0), name
