"""Discriminator network and the adversarial loss terms.

The discriminator scores a label/probability map with a single probability
of being a ground-truth map.  Its loss treats ground truth as class 1 and
generated maps as class 0.  The generator's adversarial objective uses the
non-saturating form: minimizing it maximizes log D on generated maps.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ContractViolation
from .layers import Conv3d, BatchNorm3d, Linear, Module, ModuleList
from .ops import BCE_EPS


@dataclass(frozen=True)
class DiscriminatorSpec:
    base_filters: int = 8
    conv_levels: int = 4
    leaky_alpha: float = 0.01
    input_mode: str = "label-map-only"

    def __post_init__(self):
        if self.base_filters < 1:
            raise ContractViolation("base_filters must be positive")
        if self.conv_levels < 2:
            raise ContractViolation("conv_levels must be at least 2")
        if not 0.0 < self.leaky_alpha < 1.0:
            raise ContractViolation("leaky_alpha must lie in (0, 1)")
        if self.input_mode != "label-map-only":
            raise ContractViolation("only label-map-only input is supported")

    def width(self, level):
        return self.base_filters * 2 ** level

    @property
    def in_channels(self):
        return 1


class Discriminator(Module):
    def __init__(self, spec, seed=0):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        blocks = ModuleList()
        norms = ModuleList()
        cin = spec.in_channels
        for l in range(spec.conv_levels):
            blocks.append(Conv3d(cin, spec.width(l), rng, stride=2))
            norms.append(BatchNorm3d(spec.width(l)))
            cin = spec.width(l)
        self.blocks = blocks
        self.norms = norms
        self.head = Linear(cin, 1, rng)

    def __call__(self, y, mode="infer"):
        spec = self.spec
        if y.data.ndim != 5 or y.shape[1] != spec.in_channels:
            raise ContractViolation("discriminator input must be [N,1,D,H,W]")
        for e in y.shape[2:]:
            if e < 2 ** spec.conv_levels:
                raise ContractViolation(
                    f"spatial extent {e} smaller than 2^{spec.conv_levels}")
        h = y
        for conv, norm in zip(self.blocks, self.norms):
            h = norm(ops.leaky_relu(conv(h), spec.leaky_alpha), mode)
        pooled = ops.global_avg_pool(h)
        logit = self.head(pooled)
        return ops.reshape(ops.sigmoid(logit), (y.shape[0],))


def build_discriminator(spec, seed=0):
    return Discriminator(spec, seed=seed)


def discriminator_loss(d_on_gt, d_on_pred):
    """-mean(log D(gt)) - mean(log(1 - D(pred))).

    Equals twice the BCE over the pooled batch (BCE averages over both
    groups at once; this sums the two group means).
    """
    g = ops.clamp(d_on_gt, BCE_EPS, 1.0 - BCE_EPS)
    p = ops.clamp(d_on_pred, BCE_EPS, 1.0 - BCE_EPS)
    return ops.add(ops.mul(ops.mean(ops.log(g)), -1.0),
                   ops.mul(ops.mean(ops.log(1.0 - p)), -1.0))


def generator_adversarial_loss(seg_loss, d_on_pred, lam):
    """seg_loss - lam * mean(log D(pred)): the non-saturating objective.

    Minimizing drives D(pred) toward 1, so gradients stay strong while the
    discriminator confidently rejects generated maps.
    """
    if lam < 0:
        raise ContractViolation("lambda must be nonnegative")
    p = ops.clamp(d_on_pred, BCE_EPS, 1.0 - BCE_EPS)
    adv = ops.mul(ops.mean(ops.log(p)), -float(lam))
    return ops.add(seg_loss, adv)
