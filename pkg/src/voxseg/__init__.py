"""Adversarially trained volumetric segmentation on synthetic phantom data.

Subpackage map:

- ``tensor``, ``ops``: reverse-mode autodiff core and the differentiable
  operation set (3-d convolution, pooling, upscaling, losses).
- ``layers``, ``generator``, ``discriminator``: module system and the two
  networks (multi-resolution encoder-decoder segmenter, patch discriminator).
- ``volume``, ``phantoms``: voxel-grid file format, resampling, and the
  synthetic phantom generator.
- ``train``, ``checkpoint``: pretraining/adversarial loops and byte-stable
  model serialization.
- ``metrics``: Dice and surface-distance evaluation with cohort reports.
- ``gradcheck``: finite-difference verification of every gradient path.
- ``cli``: the ``voxseg`` command.
"""

from .errors import (
    ContractViolation,
    FormatError,
    NumericDivergence,
    UndefinedMetric,
    VoxsegError,
)
from .tensor import Tensor, as_tensor, grad_enabled, no_grad

__all__ = [
    "ContractViolation",
    "FormatError",
    "NumericDivergence",
    "UndefinedMetric",
    "VoxsegError",
    "Tensor",
    "as_tensor",
    "grad_enabled",
    "no_grad",
]

__version__ = "0.1.0"
