"""Dataset loading and mean-IoU computation.

Dataset directory layout:

    root/
      classes.txt     one class name per line, order defines label indices
      images/*.ppm    P6 inputs
      labels/*.pgm    P5 labels matched by stem; values are class indices,
                      255 marks ignored pixels
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .netpbm import read_pgm, read_ppm
from .segmentation import InferenceConfig, TextBank, segment_array

IGNORE_INDEX = 255


@dataclass(frozen=True)
class SegSample:
    image_path: Path
    label_path: Path
    stem: str


@dataclass(frozen=True)
class SegDataset:
    root: Path
    samples: tuple[SegSample, ...]
    class_names: tuple[str, ...]
    ignore_index: int = IGNORE_INDEX


def load_dataset(root: str | Path) -> SegDataset:
    root = Path(root)
    classes_file = root / "classes.txt"
    if not classes_file.is_file():
        raise DataError(f"dataset {root}: missing classes.txt")
    names = [line.strip() for line in classes_file.read_text().splitlines() if line.strip()]
    if not names:
        raise DataError(f"dataset {root}: classes.txt is empty")
    image_paths = sorted((root / "images").glob("*.ppm"))
    if not image_paths:
        raise DataError(f"dataset {root}: no images/*.ppm files")
    samples = []
    for image_path in image_paths:
        label_path = root / "labels" / (image_path.stem + ".pgm")
        if not label_path.is_file():
            raise DataError(f"dataset {root}: no label for image '{image_path.stem}'")
        samples.append(SegSample(image_path, label_path, image_path.stem))
    return SegDataset(root=root, samples=tuple(samples), class_names=tuple(names))


def new_confusion(num_classes: int) -> np.ndarray:
    """C x C integer counts; rows are ground truth, columns predictions."""
    return np.zeros((num_classes, num_classes), dtype=np.int64)


def accumulate(conf: np.ndarray, pred: np.ndarray, gt: np.ndarray,
               ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """Add one mask pair's non-ignored pixels into the confusion matrix (in place)."""
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: pred {pred.shape}, gt {gt.shape}")
    num_classes = conf.shape[0]
    keep = gt != ignore_index
    gt_kept = gt[keep].astype(np.int64)
    pred_kept = pred[keep].astype(np.int64)
    if gt_kept.size and (gt_kept.min() < 0 or gt_kept.max() >= num_classes):
        raise DataError(
            f"ground-truth label out of range 0..{num_classes - 1} (ignore={ignore_index})"
        )
    if pred_kept.size and (pred_kept.min() < 0 or pred_kept.max() >= num_classes):
        raise DataError(f"predicted label out of range 0..{num_classes - 1}")
    flat = gt_kept * num_classes + pred_kept
    conf += np.bincount(flat, minlength=num_classes * num_classes).reshape(num_classes, num_classes)
    return conf


def per_class_iou(conf: np.ndarray) -> np.ndarray:
    """IoU per class; NaN where the class appears in neither masks nor predictions."""
    diag = np.diag(conf).astype(np.float64)
    denom = conf.sum(axis=1) + conf.sum(axis=0) - np.diag(conf)
    with np.errstate(invalid="ignore"):
        return np.where(denom > 0, diag / denom, np.nan)


def miou(conf: np.ndarray) -> float:
    """Mean IoU over classes with a nonzero union."""
    ious = per_class_iou(conf)
    valid = ~np.isnan(ious)
    if not valid.any():
        raise ValueError("mIoU undefined: no class has any ground-truth or predicted pixels")
    return float(ious[valid].mean())


@dataclass
class EvalResult:
    confusion: np.ndarray
    class_names: tuple[str, ...]

    @property
    def per_class(self) -> np.ndarray:
        return per_class_iou(self.confusion)

    @property
    def miou(self) -> float:
        return miou(self.confusion)


def evaluate_dataset(dataset: SegDataset, bundle, bank: TextBank,
                     cfg: InferenceConfig) -> EvalResult:
    """Segment every sample and tally the confusion matrix."""
    if len(dataset.class_names) != bank.num_classes:
        raise DataError(
            f"dataset has {len(dataset.class_names)} classes but text bank has {bank.num_classes}"
        )
    conf = new_confusion(bank.num_classes)
    for sample in dataset.samples:
        image = read_ppm(sample.image_path)
        gt = read_pgm(sample.label_path)
        if gt.shape != image.shape[:2]:
            raise DataError(
                f"sample '{sample.stem}': label {gt.shape} does not match image {image.shape[:2]}"
            )
        result = segment_array(image, bundle, bank, cfg)
        accumulate(conf, result.mask, gt, dataset.ignore_index)
    return EvalResult(confusion=conf, class_names=dataset.class_names)
