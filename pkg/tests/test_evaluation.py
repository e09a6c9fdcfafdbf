import numpy as np
import pytest

from vit_surgeon.errors import DataError
from vit_surgeon.evaluation import (
    accumulate,
    load_dataset,
    miou,
    new_confusion,
    per_class_iou,
)
from vit_surgeon.netpbm import write_pgm, write_ppm


class TestAccumulate:
    def test_perfect_prediction_is_diagonal(self, rng):
        gt = rng.integers(0, 3, size=(4, 4)).astype(np.uint8)
        conf = accumulate(new_confusion(3), gt, gt)
        assert np.all(conf == np.diag(np.diag(conf)))
        assert conf.sum() == 16

    def test_all_ignore_changes_nothing(self):
        conf = new_confusion(2)
        gt = np.full((3, 3), 255, np.uint8)
        pred = np.zeros((3, 3), np.uint8)
        accumulate(conf, pred, gt)
        assert conf.sum() == 0

    def test_hand_tally(self):
        gt = np.array([[0, 0], [1, 255]], np.uint8)
        pred = np.array([[0, 1], [1, 0]], np.uint8)
        conf = accumulate(new_confusion(2), pred, gt)
        assert np.array_equal(conf, np.array([[1, 1], [0, 1]]))

    def test_out_of_range_label(self):
        conf = new_confusion(2)
        gt = np.array([[5]], np.uint8)
        with pytest.raises(DataError, match="out of range"):
            accumulate(conf, np.array([[0]], np.uint8), gt)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            accumulate(new_confusion(2), np.zeros((2, 2), np.uint8), np.zeros((3, 3), np.uint8))

    def test_order_independence(self, rng):
        pairs = [(rng.integers(0, 3, (5, 5)).astype(np.uint8),
                  rng.integers(0, 3, (5, 5)).astype(np.uint8)) for _ in range(4)]
        a = new_confusion(3)
        for pred, gt in pairs:
            accumulate(a, pred, gt)
        b = new_confusion(3)
        for pred, gt in reversed(pairs):
            accumulate(b, pred, gt)
        assert np.array_equal(a, b)


class TestMiou:
    def test_perfect(self):
        conf = np.diag([5, 9]).astype(np.int64)
        assert miou(conf) == 1.0

    def test_half_half_all_predicted_first(self):
        # gt half class 0 / half class 1, prediction all class 0
        gt = np.repeat(np.array([0, 1], np.uint8), 8).reshape(4, 4)
        pred = np.zeros((4, 4), np.uint8)
        conf = accumulate(new_confusion(2), pred, gt)
        ious = per_class_iou(conf)
        assert ious[0] == 0.5 and ious[1] == 0.0
        assert miou(conf) == 0.25

    def test_absent_class_excluded(self):
        conf = np.zeros((3, 3), np.int64)
        conf[0, 0] = 10
        conf[2, 2] = 5
        conf[2, 0] = 5
        ious = per_class_iou(conf)
        assert np.isnan(ious[1])
        assert miou(conf) == pytest.approx((10 / 15 + 0.5) / 2)

    def test_empty_confusion_rejected(self):
        with pytest.raises(ValueError):
            miou(np.zeros((2, 2), np.int64))

    def test_unit_interval(self, rng):
        conf = rng.integers(0, 50, size=(4, 4)).astype(np.int64)
        assert 0.0 <= miou(conf) <= 1.0


class TestDatasetLoading:
    def _write_sample(self, root, stem, image, label):
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "labels").mkdir(parents=True, exist_ok=True)
        write_ppm(root / "images" / f"{stem}.ppm", image)
        write_pgm(root / "labels" / f"{stem}.pgm", label)

    def test_loads_sorted_samples(self, tmp_path, rng):
        (tmp_path / "classes.txt").write_text("left\nright\n")
        for stem in ("b", "a"):
            self._write_sample(tmp_path, stem,
                               rng.integers(0, 255, (4, 4, 3)).astype(np.uint8),
                               rng.integers(0, 2, (4, 4)).astype(np.uint8))
        ds = load_dataset(tmp_path)
        assert [s.stem for s in ds.samples] == ["a", "b"]
        assert ds.class_names == ("left", "right")
        assert ds.ignore_index == 255

    def test_missing_classes_file(self, tmp_path):
        with pytest.raises(DataError, match="classes.txt"):
            load_dataset(tmp_path)

    def test_missing_label(self, tmp_path, rng):
        (tmp_path / "classes.txt").write_text("a\n")
        (tmp_path / "images").mkdir()
        write_ppm(tmp_path / "images" / "x.ppm",
                  rng.integers(0, 255, (4, 4, 3)).astype(np.uint8))
        with pytest.raises(DataError, match="no label"):
            load_dataset(tmp_path)

    def test_no_images(self, tmp_path):
        (tmp_path / "classes.txt").write_text("a\n")
        (tmp_path / "images").mkdir()
        with pytest.raises(DataError, match="no images"):
            load_dataset(tmp_path)
