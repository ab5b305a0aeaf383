"""Synthetic dataset generators: determinism, ranges, overlap construction."""

import numpy as np
import pytest

from imgorigin.datasets import (
    GENERATORS,
    DatasetSpec,
    load_dataset,
    make_overlapping,
    save_dataset,
    synth_dataset,
)
from imgorigin.exceptions import MissingArtifactError


def image_keyset(images: np.ndarray) -> set:
    """Hashable identity of every image, for set-intersection bookkeeping."""
    return {img.tobytes() for img in images}


class TestSpec:
    def test_dataset_id_encodes_spec(self):
        spec = DatasetSpec("gaussian-blobs", count=32, image_shape=(3, 4, 5), num_classes=7, seed=9)
        assert spec.dataset_id == "gaussian-blobs-32x3x4x5-c7-s9"
        assert DatasetSpec("mixed", count=8, seed=1).dataset_id == "mixed-8x1x8x8-c0-s1"

    def test_validation(self):
        with pytest.raises(ValueError, match="unknown generator"):
            DatasetSpec("perlin")
        with pytest.raises(ValueError, match="count"):
            DatasetSpec("mixed", count=0)
        with pytest.raises(ValueError, match="channels"):
            DatasetSpec("mixed", image_shape=(8, 8))
        with pytest.raises(ValueError, match="num_classes"):
            DatasetSpec("mixed", num_classes=1)


class TestSynth:
    @pytest.mark.parametrize("generator", GENERATORS)
    def test_shape_dtype_range(self, generator):
        ds = synth_dataset(DatasetSpec(generator, count=24, seed=3))
        assert ds.images.shape == (24, 1, 8, 8)
        assert ds.images.dtype == np.float32
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
        assert ds.labels is None
        assert ds.count == 24 and ds.image_shape == (1, 8, 8)

    def test_multichannel(self):
        ds = synth_dataset(DatasetSpec("gaussian-blobs", count=4, image_shape=(3, 6, 6), seed=0))
        assert ds.images.shape == (4, 3, 6, 6)

    def test_bitwise_deterministic(self):
        spec = DatasetSpec("mixed", count=20, seed=5)
        a, b = synth_dataset(spec), synth_dataset(spec)
        np.testing.assert_array_equal(a.images, b.images)

    def test_seeds_give_disjoint_images(self):
        a = synth_dataset(DatasetSpec("gaussian-blobs", count=50, seed=1))
        b = synth_dataset(DatasetSpec("gaussian-blobs", count=50, seed=2))
        assert not image_keyset(a.images) & image_keyset(b.images)

    def test_images_within_dataset_distinct(self):
        ds = synth_dataset(DatasetSpec("striped-patterns", count=60, seed=4))
        assert len(image_keyset(ds.images)) == 60

    def test_labels_generated_and_in_range(self):
        ds = synth_dataset(DatasetSpec("gaussian-blobs", count=100, num_classes=4, seed=6))
        assert ds.labels is not None and ds.labels.shape == (100,)
        assert set(np.unique(ds.labels)) <= {0, 1, 2, 3}
        assert len(np.unique(ds.labels)) > 1

    def test_mixed_contrast_heterogeneity(self):
        # the mixture scales per-image contrast; the spread across images
        # should cover both nearly-flat and high-contrast outputs
        ds = synth_dataset(DatasetSpec("mixed", count=100, seed=7))
        spans = ds.images.reshape(100, -1).max(axis=1) - ds.images.reshape(100, -1).min(axis=1)
        assert spans.min() < 0.15
        assert spans.max() > 0.6


class TestOverlap:
    def test_shared_count_by_intersection(self, ds_blobs):
        ov = make_overlapping(ds_blobs, 0.3, fresh_seed=77)
        shared = image_keyset(ov.images) & image_keyset(ds_blobs.images)
        assert len(shared) == round(0.3 * ds_blobs.count)
        assert ov.count == ds_blobs.count

    @pytest.mark.parametrize("fraction", [0.0, 1.0])
    def test_extreme_fractions(self, ds_blobs, fraction):
        ov = make_overlapping(ds_blobs, fraction, fresh_seed=78)
        shared = image_keyset(ov.images) & image_keyset(ds_blobs.images)
        assert len(shared) == round(fraction * ds_blobs.count)

    def test_deterministic(self, ds_blobs):
        a = make_overlapping(ds_blobs, 0.5, fresh_seed=9)
        b = make_overlapping(ds_blobs, 0.5, fresh_seed=9)
        np.testing.assert_array_equal(a.images, b.images)
        assert a.dataset_id == b.dataset_id

    def test_id_and_meta(self, ds_blobs):
        ov = make_overlapping(ds_blobs, 0.25, fresh_seed=11)
        assert ov.dataset_id == f"{ds_blobs.dataset_id}-ov25-s11"
        assert ov.meta["overlap_fraction"] == 0.25
        assert ov.meta["overlap_base"] == ds_blobs.dataset_id

    def test_labels_carried(self):
        base = synth_dataset(DatasetSpec("gaussian-blobs", count=40, num_classes=3, seed=12))
        ov = make_overlapping(base, 0.5, fresh_seed=13)
        assert ov.labels is not None and ov.labels.shape == (40,)

    def test_fraction_validated(self, ds_blobs):
        with pytest.raises(ValueError, match="outside"):
            make_overlapping(ds_blobs, 1.5, fresh_seed=0)


class TestPersistence:
    def test_roundtrip_bitwise(self, tmp_path):
        ds = synth_dataset(DatasetSpec("mixed", count=12, num_classes=2, seed=8))
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.dataset_id == ds.dataset_id
        assert back.meta == ds.meta
        np.testing.assert_array_equal(back.images, ds.images)
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_unlabeled_roundtrip(self, tmp_path):
        ds = synth_dataset(DatasetSpec("gaussian-blobs", count=5, seed=2))
        save_dataset(ds, tmp_path / "d")
        assert load_dataset(tmp_path / "d").labels is None

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingArtifactError, match="manifest"):
            load_dataset(tmp_path / "nowhere")
