import numpy as np
import pytest
from scipy import ndimage

from voxseg.errors import ContractViolation
from voxseg.phantoms import (
    PhantomParams,
    generate_phantom,
    make_training_case,
    sample_params,
)


class TestParams:
    def test_small_extents_rejected(self):
        with pytest.raises(ContractViolation):
            PhantomParams(seed=0, extents=(8, 32, 32))

    def test_zero_lobes_rejected(self):
        with pytest.raises(ContractViolation):
            PhantomParams(seed=0, n_lobes=0)

    def test_contrast_out_of_range_rejected(self):
        with pytest.raises(ContractViolation):
            PhantomParams(seed=0, intensity_contrast=1.5)

    def test_negative_scales_rejected(self):
        with pytest.raises(ContractViolation):
            PhantomParams(seed=0, noise_sigma=-0.1)


class TestGeneratePhantom:
    def test_same_seed_bit_identical(self):
        p = PhantomParams(seed=123)
        img_a, lbl_a = generate_phantom(p)
        img_b, lbl_b = generate_phantom(p)
        assert img_a.values.tobytes() == img_b.values.tobytes()
        assert lbl_a.values.tobytes() == lbl_b.values.tobytes()
        assert img_a.spacing == img_b.spacing

    def test_different_seeds_differ(self):
        img_a, _ = generate_phantom(PhantomParams(seed=1))
        img_b, _ = generate_phantom(PhantomParams(seed=2))
        assert img_a.values.tobytes() != img_b.values.tobytes()

    def test_noiseless_single_lobe_threshold_recovers_label(self):
        p = PhantomParams(
            seed=77,
            n_lobes=1,
            intensity_contrast=1.0,
            boundary_fuzz_mm=0.0,
            noise_sigma=0.0,
            distractor_count=0,
        )
        image, label = generate_phantom(p)
        recovered = (image.values > 0.5).astype(np.float32)
        np.testing.assert_array_equal(recovered, label.values)

    def test_geometry_matches_image_grid(self):
        image, label = generate_phantom(PhantomParams(seed=5))
        assert image.extents == label.extents == (32, 48, 48)
        assert image.spacing == label.spacing
        assert image.kind == "image" and label.kind == "label"

    def test_label_is_one_connected_blob(self):
        # 26-connectivity on the voxel lattice; lobes are centred inside the
        # base ellipsoid so the continuous union is connected by construction.
        for seed in range(25):
            _, label = generate_phantom(PhantomParams(seed=seed, n_lobes=5))
            _, n = ndimage.label(label.values, structure=np.ones((3, 3, 3)))
            assert n == 1, f"seed {seed} produced {n} components"

    def test_foreground_fraction_band_over_default_ranges(self):
        # Direct counting oracle over 100 randomized cases.
        fracs = []
        for i in range(100):
            params = sample_params(seed=2026, case_index=i)
            _, label = generate_phantom(params)
            fracs.append(float(label.values.mean()))
        assert min(fracs) >= 0.02, f"min fraction {min(fracs):.4f}"
        assert max(fracs) <= 0.40, f"max fraction {max(fracs):.4f}"

    def test_distractors_brighten_background_only(self):
        base = PhantomParams(
            seed=31, boundary_fuzz_mm=0.0, noise_sigma=0.0, distractor_count=0
        )
        with_d = PhantomParams(
            seed=31, boundary_fuzz_mm=0.0, noise_sigma=0.0, distractor_count=3
        )
        img_p, lbl_p = generate_phantom(base)
        img_d, lbl_d = generate_phantom(with_d)
        np.testing.assert_array_equal(lbl_p.values, lbl_d.values)
        added = img_d.values - img_p.values
        assert added.max() > 0.1
        assert np.abs(added[lbl_p.values == 1.0]).max() == 0.0

    def test_spacing_lies_in_declared_ranges(self):
        for seed in range(20):
            image, _ = generate_phantom(PhantomParams(seed=seed))
            sz, sy, sx = image.spacing
            assert 0.5 <= sz <= 7.0
            assert 1.0 <= sy <= 3.0 and 1.0 <= sx <= 3.0


class TestSampleParams:
    def test_deterministic(self):
        assert sample_params(4, 9) == sample_params(4, 9)

    def test_case_index_varies_params(self):
        assert sample_params(4, 0) != sample_params(4, 1)

    def test_extents_track_field_of_view(self):
        # extents * spacing should land near the sampled 100-160mm band
        # (rounding plus the >=16 voxel floor can stretch it slightly).
        for i in range(20):
            params = sample_params(seed=1, case_index=i)
            image, _ = generate_phantom(params)
            for e, s in zip(image.extents, image.spacing):
                assert 90.0 <= e * s <= 175.0


class TestMakeTrainingCase:
    def test_shape_spacing_and_kinds(self):
        image, label = make_training_case(seed=0, case_index=3, size=32)
        assert image.extents == label.extents == (32, 32, 32)
        assert image.spacing == label.spacing == (3.0, 3.0, 3.0)
        assert set(np.unique(label.values)) <= {0.0, 1.0}

    def test_deterministic(self):
        a_img, a_lbl = make_training_case(seed=8, case_index=1)
        b_img, b_lbl = make_training_case(seed=8, case_index=1)
        assert a_img.values.tobytes() == b_img.values.tobytes()
        assert a_lbl.values.tobytes() == b_lbl.values.tobytes()

    def test_organ_visible_in_crop(self):
        # The centred organ must survive resampling and cropping.
        for i in range(10):
            _, label = make_training_case(seed=99, case_index=i)
            assert label.values.mean() > 0.01
