"""Synthetic abdominal phantoms: lumpy organs on noisy anisotropic grids.

Each phantom is built in physical millimetre space and rasterized onto a grid
whose inter-slice spacing varies over a wide range while in-plane spacing
stays moderate, mimicking clinically mixed acquisition protocols.  The organ
is a union of overlapping axis-aligned ellipsoids: a base lobe plus smaller
lobes whose centres sit strictly inside the base, which keeps the union
connected.  The image places the organ at `intensity_contrast` above a zero
background, adds organ-like bright distractor blobs away from the organ,
blurs the structure by `boundary_fuzz_mm`, and finally adds white noise.

All randomness comes from one generator seeded by PhantomParams.seed, so a
given parameter set is bit-reproducible.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ContractViolation
from .volume import VolumeGrid, crop_or_pad, resample_isotropic

SLICE_SPACING_RANGE_MM = (0.5, 7.0)
INPLANE_SPACING_RANGE_MM = (1.0, 3.0)
FIELD_OF_VIEW_RANGE_MM = (100.0, 160.0)
MAX_SOURCE_EXTENT = 192


@dataclass
class PhantomParams:
    """Knobs controlling one synthetic case."""

    seed: int
    extents: tuple = (32, 48, 48)
    n_lobes: int = 3
    intensity_contrast: float = 0.8
    boundary_fuzz_mm: float = 1.0
    noise_sigma: float = 0.03
    distractor_count: int = 2

    def __post_init__(self):
        self.extents = tuple(int(e) for e in self.extents)
        if len(self.extents) != 3 or any(e < 16 for e in self.extents):
            raise ContractViolation(
                f"phantom extents must be >= 16 per axis, got {self.extents}"
            )
        if self.n_lobes < 1:
            raise ContractViolation(f"n_lobes must be >= 1, got {self.n_lobes}")
        if not 0.0 <= self.intensity_contrast <= 1.0:
            raise ContractViolation(
                f"intensity_contrast must lie in [0, 1], got {self.intensity_contrast}"
            )
        if self.boundary_fuzz_mm < 0 or self.noise_sigma < 0:
            raise ContractViolation("blur width and noise scale must be nonnegative")
        if self.distractor_count < 0:
            raise ContractViolation(
                f"distractor_count must be nonnegative, got {self.distractor_count}"
            )


def _sample_spacing(rng):
    """First draws made from a phantom's generator: the grid spacing in mm.

    Shared by generate_phantom and sample_params so the latter can size its
    field of view against the spacing the former will actually use.
    """
    return (
        float(rng.uniform(*SLICE_SPACING_RANGE_MM)),
        float(rng.uniform(*INPLANE_SPACING_RANGE_MM)),
        float(rng.uniform(*INPLANE_SPACING_RANGE_MM)),
    )


def _ellipsoid_mask(coords, center, semi):
    zn = (coords[0] - center[0]) / semi[0]
    yn = (coords[1] - center[1]) / semi[1]
    xn = (coords[2] - center[2]) / semi[2]
    return zn * zn + yn * yn + xn * xn <= 1.0


def generate_phantom(params):
    """Produce one (image, label) pair of VolumeGrids, deterministic in seed."""
    rng = np.random.default_rng(int(params.seed))
    spacing = _sample_spacing(rng)
    extent_mm = np.array(
        [e * s for e, s in zip(params.extents, spacing)], dtype=np.float64
    )
    coords = [
        np.arange(params.extents[axis], dtype=np.float64)[
            tuple(slice(None) if a == axis else None for a in range(3))
        ]
        * spacing[axis]
        for axis in range(3)
    ]

    # Organ geometry: a base lobe near the volume centre, satellite lobes
    # centred strictly inside it so the union stays connected.
    center = extent_mm * (0.5 + rng.uniform(-0.06, 0.06, size=3))
    base_semi = extent_mm * rng.uniform(0.19, 0.28, size=3)
    label = _ellipsoid_mask(coords, center, base_semi)
    for _ in range(params.n_lobes - 1):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction) + 1e-12
        lobe_center = center + direction * base_semi * rng.uniform(0.45, 0.75)
        lobe_semi = base_semi * rng.uniform(0.5, 0.8, size=3)
        label |= _ellipsoid_mask(coords, lobe_center, lobe_semi)
    label = label.astype(np.float32)

    structure = params.intensity_contrast * label.astype(np.float64)

    # Distractors: organ-bright blobs rejection-sampled clear of the organ.
    # Satellite lobes reach at most 0.75 + 0.8 = 1.55 base semi-axes out.
    organ_reach = float(base_semi.max()) * 1.6
    for _ in range(params.distractor_count):
        for _attempt in range(50):
            d_center = extent_mm * rng.uniform(0.1, 0.9, size=3)
            d_semi = extent_mm * rng.uniform(0.04, 0.10, size=3)
            amp = params.intensity_contrast * rng.uniform(0.55, 0.95)
            if np.linalg.norm(d_center - center) > organ_reach + d_semi.max():
                structure += amp * _ellipsoid_mask(coords, d_center, d_semi)
                break

    if params.boundary_fuzz_mm > 0:
        sigma = [params.boundary_fuzz_mm / s for s in spacing]
        structure = gaussian_filter(structure, sigma=sigma)
    if params.noise_sigma > 0:
        structure = structure + rng.normal(0.0, params.noise_sigma, structure.shape)

    image = VolumeGrid(values=structure.astype(np.float32), spacing=spacing, kind="image")
    return image, VolumeGrid(values=label, spacing=spacing, kind="label")


def sample_params(seed, case_index=0):
    """Draw a randomized PhantomParams from the default ranges.

    The grid extents derive from a sampled physical field of view so the
    organ's physical size stays in a consistent band across spacings.
    """
    mix = np.random.default_rng(np.random.SeedSequence([int(seed), int(case_index)]))
    case_seed = int(mix.integers(0, 2**63 - 1))
    rng = np.random.default_rng(case_seed)
    # Same first draws generate_phantom will make from case_seed, so the
    # extents below are sized against the spacing that phantom will get.
    spacing = _sample_spacing(rng)
    fov = rng.uniform(*FIELD_OF_VIEW_RANGE_MM, size=3)
    extents = tuple(
        int(min(MAX_SOURCE_EXTENT, max(16, round(f / s))))
        for f, s in zip(fov, spacing)
    )
    return PhantomParams(
        seed=case_seed,
        extents=extents,
        n_lobes=int(rng.integers(1, 6)),
        intensity_contrast=float(rng.uniform(0.4, 1.0)),
        boundary_fuzz_mm=float(rng.uniform(0.5, 2.5)),
        noise_sigma=float(rng.uniform(0.01, 0.06)),
        distractor_count=int(rng.integers(0, 4)),
    )


def make_training_case(seed, case_index=0, size=32, target_spacing_mm=3.0):
    """Generate, resample to an isotropic grid, and centre-fit to a cube."""
    params = sample_params(seed, case_index)
    image, label = generate_phantom(params)
    image = resample_isotropic(image, target_spacing_mm)
    label = resample_isotropic(label, target_spacing_mm)
    shape = (int(size),) * 3
    return crop_or_pad(image, shape), crop_or_pad(label, shape)
