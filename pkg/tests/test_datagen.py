"""Synthetic blob dataset: construction, invariants, and disk round trip."""

import csv

import numpy as np
import pytest

from attncert.core import DataError
from attncert.datagen import Dataset, load_dataset, synthesize, write_dataset
from attncert.tensorio import write_tensor


class TestSynthesize:
    def test_shapes_and_dtypes(self):
        ds = synthesize(6, 8, seed=0)
        assert ds.images.shape == (6, 8, 8)
        assert ds.masks.shape == (6, 8, 8)
        assert ds.images.dtype == np.float32
        assert ds.masks.dtype == np.float32
        assert ds.labels.dtype == np.int64
        assert len(ds) == 6
        assert ds.ids == tuple(f"img_{i:05d}" for i in range(6))

    def test_labels_alternate(self):
        ds = synthesize(7, 8, seed=3)
        np.testing.assert_array_equal(ds.labels, np.arange(7) % 2)

    def test_masks_binary_and_nonempty(self):
        ds = synthesize(10, 12, seed=1)
        assert set(np.unique(ds.masks)) == {0.0, 1.0}
        assert all(ds.masks[i].sum() > 0 for i in range(10))

    def test_blob_sits_on_labeled_half(self):
        ds = synthesize(12, 16, seed=5)
        for i in range(12):
            cols = np.where(ds.masks[i].any(axis=0))[0]
            if ds.labels[i] == 0:
                assert cols.max() < 8
            else:
                assert cols.min() >= 8

    def test_blob_strictly_brighter_than_background(self):
        """The metric tests lean on an unambiguous saliency ground truth."""
        ds = synthesize(8, 8, seed=9)
        for i in range(8):
            inside = ds.images[i][ds.masks[i] == 1.0]
            outside = ds.images[i][ds.masks[i] == 0.0]
            assert inside.min() > outside.max()

    def test_deterministic(self):
        a = synthesize(5, 8, seed=42)
        b = synthesize(5, 8, seed=42)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.masks, b.masks)
        assert not np.array_equal(a.images, synthesize(5, 8, seed=43).images)

    @pytest.mark.parametrize("count,size", [(0, 8), (3, 7), (3, 6), (3, 4)])
    def test_bad_arguments(self, count, size):
        with pytest.raises(ValueError):
            synthesize(count, size, seed=0)


class TestRoundTrip:
    def test_values_survive_disk(self, tmp_path):
        ds = synthesize(4, 8, seed=17)
        write_dataset(tmp_path / "d", ds)
        back = load_dataset(tmp_path / "d")
        np.testing.assert_array_equal(back.images, ds.images)
        np.testing.assert_array_equal(back.masks, ds.masks)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.ids == ds.ids

    def test_manifest_layout(self, tmp_path):
        write_dataset(tmp_path / "d", synthesize(2, 8, seed=0))
        with open(tmp_path / "d" / "manifest.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["id", "image", "mask", "label"]
        assert rows[1] == ["img_00000", "img_00000.fvtn",
                           "img_00000_mask.fvtn", "0"]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="missing dataset manifest"):
            load_dataset(tmp_path)

    def test_wrong_columns(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("id,picture,mask,label\n")
        with pytest.raises(DataError, match="unexpected manifest columns"):
            load_dataset(tmp_path)

    def test_empty_manifest(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("id,image,mask,label\n")
        with pytest.raises(DataError, match="empty dataset"):
            load_dataset(tmp_path)

    def test_bad_label(self, tmp_path):
        ds = synthesize(1, 8, seed=0)
        write_dataset(tmp_path, ds)
        text = (tmp_path / "manifest.csv").read_text()
        (tmp_path / "manifest.csv").write_text(text.replace(",0", ",zero"))
        with pytest.raises(DataError, match="bad label"):
            load_dataset(tmp_path)

    def test_shape_disagreement(self, tmp_path):
        write_dataset(tmp_path, synthesize(2, 8, seed=0))
        write_tensor(tmp_path / "img_00001.fvtn", np.zeros((10, 10)))
        with pytest.raises(DataError, match="images disagree in shape"):
            load_dataset(tmp_path)
