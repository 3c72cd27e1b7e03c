import dataclasses
import json

import numpy as np
import pytest

from segadapt.datagen import (
    SHIFT3,
    DomainSpec,
    LabeledDataset,
    default_class_colors,
    generate_domain_pair,
    hue_rotation_matrix,
    load_dataset,
    save_dataset,
)
from segadapt.errors import InvalidInputError, ValidationError

BASE = DomainSpec(n_classes=3, width=16, height=16, seed=3)


class TestHueRotation:
    def test_zero_angle_is_identity(self):
        np.testing.assert_allclose(hue_rotation_matrix(0.0), np.eye(3), atol=1e-15)

    def test_preserves_gray_axis(self):
        rot = hue_rotation_matrix(73.0)
        gray = np.ones(3) / np.sqrt(3)
        np.testing.assert_allclose(rot @ gray, gray, atol=1e-12)

    def test_is_orthogonal(self):
        rot = hue_rotation_matrix(25.0)
        np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-12)

    def test_full_turn_is_identity(self):
        np.testing.assert_allclose(hue_rotation_matrix(360.0), np.eye(3), atol=1e-12)


class TestGeneration:
    def test_zero_shift_reproduces_source_bitwise(self):
        src, tgt = generate_domain_pair(BASE, 4, 4)
        np.testing.assert_array_equal(src.images, tgt.images)
        np.testing.assert_array_equal(src.labels, tgt.labels)

    def test_label_maps_are_shift_invariant(self):
        spec = dataclasses.replace(BASE, hue_deg=40.0, brightness=0.3, noise_scale=2.0, warp=0.02)
        src, tgt = generate_domain_pair(spec, 5, 5)
        np.testing.assert_array_equal(src.labels, tgt.labels)
        assert not np.array_equal(src.images, tgt.images)

    def test_brightness_moment_shift(self):
        spec = dataclasses.replace(BASE, brightness=0.3)
        src, tgt = generate_domain_pair(spec, 6, 6)
        for k in range(3):
            delta = tgt.images[tgt.labels == k].mean() - src.images[src.labels == k].mean()
            assert delta == pytest.approx(0.3, abs=1e-12)

    def test_noise_scale_increases_variance(self):
        spec = dataclasses.replace(BASE, noise_scale=2.0)
        src, tgt = generate_domain_pair(spec, 6, 6)
        residual_src = src.images - src.images.mean(axis=(1, 2), keepdims=True)
        residual_tgt = tgt.images - tgt.images.mean(axis=(1, 2), keepdims=True)
        assert residual_tgt.std() > residual_src.std()

    def test_labels_within_class_range(self):
        for layout in ("blobs", "stripes", "checker"):
            spec = dataclasses.replace(BASE, layout=layout, n_classes=4)
            src, _ = generate_domain_pair(spec, 3, 3)
            assert src.labels.min() >= 0
            assert src.labels.max() < 4

    def test_same_seed_bitwise_identical(self):
        a_src, a_tgt = generate_domain_pair(SHIFT3, 3, 3)
        b_src, b_tgt = generate_domain_pair(SHIFT3, 3, 3)
        np.testing.assert_array_equal(a_src.images, b_src.images)
        np.testing.assert_array_equal(a_tgt.images, b_tgt.images)

    def test_source_count_independent_of_target_count(self):
        a_src, _ = generate_domain_pair(BASE, 3, 7)
        b_src, _ = generate_domain_pair(BASE, 3, 2)
        np.testing.assert_array_equal(a_src.images, b_src.images)

    def test_unknown_layout_rejected(self):
        with pytest.raises(InvalidInputError):
            generate_domain_pair(dataclasses.replace(BASE, layout="spiral"), 1, 1)

    def test_zero_counts_rejected(self):
        with pytest.raises(InvalidInputError):
            generate_domain_pair(BASE, 0, 1)

    def test_color_collision_warns_with_separability(self):
        tight = dataclasses.replace(BASE, hue_spread_deg=2.0, noise_sigma=0.3)
        with pytest.warns(UserWarning, match="separability"):
            generate_domain_pair(tight, 1, 1)

    def test_shading_darkens_without_touching_labels(self):
        shaded = dataclasses.replace(BASE, shade_amp=0.6)
        plain_src, _ = generate_domain_pair(BASE, 4, 4)
        shaded_src, shaded_tgt = generate_domain_pair(shaded, 4, 4)
        np.testing.assert_array_equal(plain_src.labels, shaded_src.labels)
        np.testing.assert_array_equal(shaded_src.labels, shaded_tgt.labels)
        assert shaded_src.images.mean() < plain_src.images.mean()

    def test_spec_json_roundtrip(self):
        data = json.loads(json.dumps(SHIFT3.to_json()))
        assert DomainSpec.from_json(data) == SHIFT3

    def test_default_colors_share_luminance(self):
        colors = default_class_colors(5, 60.0)
        sums = colors.sum(axis=1)
        np.testing.assert_allclose(sums, sums[0], atol=1e-12)


class TestDatasetIo:
    def test_roundtrip_bitwise(self, tmp_path):
        src, _ = generate_domain_pair(BASE, 3, 3)
        save_dataset(src, tmp_path / "ds")
        back = load_dataset(tmp_path / "ds")
        np.testing.assert_array_equal(back.images, src.images)
        np.testing.assert_array_equal(back.labels, src.labels)
        assert back.n_classes == src.n_classes

    def test_truncated_tensor_rejected(self, tmp_path):
        src, _ = generate_domain_pair(BASE, 2, 2)
        save_dataset(src, tmp_path / "ds")
        img_path = tmp_path / "ds" / "images.tnsr"
        img_path.write_bytes(img_path.read_bytes()[:-16])
        from segadapt.errors import CorruptFileError

        with pytest.raises(CorruptFileError):
            load_dataset(tmp_path / "ds")

    def test_manifest_class_count_mismatch_rejected(self, tmp_path):
        src, _ = generate_domain_pair(BASE, 2, 2)
        save_dataset(src, tmp_path / "ds")
        manifest_path = tmp_path / "ds" / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        manifest["n_classes"] = 2  # labels reach 2, so max allowed index is 1
        manifest_path.write_text(json.dumps(manifest))
        with pytest.raises(ValidationError):
            load_dataset(tmp_path / "ds")

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            load_dataset(tmp_path / "nowhere")

    def test_shape_mismatch_rejected(self, tmp_path):
        src, _ = generate_domain_pair(BASE, 2, 2)
        save_dataset(src, tmp_path / "ds")
        manifest_path = tmp_path / "ds" / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        manifest["n"] = 5
        manifest_path.write_text(json.dumps(manifest))
        with pytest.raises(ValidationError):
            load_dataset(tmp_path / "ds")

    def test_dataset_shape_consistency_enforced(self):
        with pytest.raises(InvalidInputError):
            LabeledDataset(
                images=np.zeros((2, 4, 4, 3)), labels=np.zeros((3, 4, 4), dtype=int), n_classes=2
            )
