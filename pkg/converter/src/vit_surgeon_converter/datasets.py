"""Benchmark conversion into the engine's neutral dataset layout.

Target layout:

    out/
      classes.txt     one class name per line
      images/*.ppm    binary P6
      labels/*.pgm    binary P5, pixel value = class index, 255 = ignore

Two source layouts are understood: PASCAL-VOC-style trees (JPEGImages/,
SegmentationClass/ palette PNGs, ImageSets/Segmentation/<split>.txt) and a
generic pair of image/label directories matched by file stem. Pixels are
transcoded losslessly; labels are remapped only where an explicit ignore
value is given (VOC's 255 boundary already is the ignore index).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

VOC_CLASSES = [
    "background", "aeroplane", "bicycle", "bird", "boat", "bottle", "bus",
    "car", "cat", "chair", "cow", "diningtable", "dog", "horse", "motorbike",
    "person", "pottedplant", "sheep", "sofa", "train", "tvmonitor",
]

IGNORE_INDEX = 255

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp")


@dataclass
class ConversionReport:
    samples: int
    classes: list[str]
    remap: dict[int, int]

    def print_table(self) -> None:
        print(f"converted {self.samples} samples, {len(self.classes)} classes")
        print("label remap:")
        for src, dst in sorted(self.remap.items()):
            print(f"  {src} -> {dst}")


def _write_ppm(path: Path, image: np.ndarray) -> None:
    h, w = image.shape[:2]
    path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + image.astype(np.uint8).tobytes())


def _write_pgm(path: Path, label: np.ndarray) -> None:
    h, w = label.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + label.astype(np.uint8).tobytes())


def _load_image_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def _load_label(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode in ("P", "L"):
            arr = np.asarray(img, dtype=np.uint8)
        elif img.mode == "I":
            arr = np.asarray(img, dtype=np.int32)
            if arr.max() > 255:
                raise ValueError(f"label {path} has values above 255")
            arr = arr.astype(np.uint8)
        else:
            raise ValueError(f"label {path} has unsupported mode '{img.mode}'")
    return arr


def _convert_pairs(pairs, out: Path, class_names, ignore_value: int | None) -> ConversionReport:
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    remap: dict[int, int] = {}
    count = 0
    for stem, image_path, label_path in pairs:
        image = _load_image_rgb(image_path)
        label = _load_label(label_path)
        if label.shape != image.shape[:2]:
            raise ValueError(
                f"sample '{stem}': label {label.shape} does not match image {image.shape[:2]}"
            )
        for value in np.unique(label):
            v = int(value)
            ignored = v == IGNORE_INDEX or (ignore_value is not None and v == ignore_value)
            remap[v] = IGNORE_INDEX if ignored else v
            if not ignored and v >= len(class_names):
                raise ValueError(
                    f"sample '{stem}': label value {v} outside the {len(class_names)}-class list"
                )
        if ignore_value is not None and ignore_value != IGNORE_INDEX:
            label = label.copy()
            label[label == ignore_value] = IGNORE_INDEX
        _write_ppm(out / "images" / f"{stem}.ppm", image)
        _write_pgm(out / "labels" / f"{stem}.pgm", label)
        count += 1
    if count == 0:
        raise ValueError("no samples converted")
    (out / "classes.txt").write_text("\n".join(class_names) + "\n")
    return ConversionReport(samples=count, classes=list(class_names), remap=remap)


def convert_voc(root: str | Path, out_dir: str | Path, split: str = "val",
                limit: int = 0) -> ConversionReport:
    """PASCAL VOC 2012 tree -> neutral layout (palette indices are the labels)."""
    root = Path(root)
    split_file = root / "ImageSets" / "Segmentation" / f"{split}.txt"
    if not split_file.is_file():
        raise ValueError(f"not a VOC tree: missing {split_file}")
    stems = [line.strip() for line in split_file.read_text().splitlines() if line.strip()]
    if limit:
        stems = stems[:limit]
    pairs = []
    for stem in stems:
        image_path = root / "JPEGImages" / f"{stem}.jpg"
        label_path = root / "SegmentationClass" / f"{stem}.png"
        if not image_path.is_file() or not label_path.is_file():
            raise ValueError(f"VOC sample '{stem}' is missing its image or label file")
        pairs.append((stem, image_path, label_path))
    return _convert_pairs(pairs, Path(out_dir), VOC_CLASSES, ignore_value=None)


def convert_generic(images_dir: str | Path, labels_dir: str | Path,
                    classes_path: str | Path, out_dir: str | Path,
                    ignore_value: int | None = None, limit: int = 0) -> ConversionReport:
    """Image/label directories matched by stem -> neutral layout."""
    images_dir, labels_dir = Path(images_dir), Path(labels_dir)
    class_names = [line.strip() for line in Path(classes_path).read_text().splitlines()
                   if line.strip()]
    if not class_names:
        raise ValueError(f"class list {classes_path} is empty")
    image_paths = sorted(
        p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if limit:
        image_paths = image_paths[:limit]
    pairs = []
    for image_path in image_paths:
        candidates = [labels_dir / (image_path.stem + suffix) for suffix in (".png", ".bmp")]
        label_path = next((c for c in candidates if c.is_file()), None)
        if label_path is None:
            raise ValueError(f"no label found for image '{image_path.stem}'")
        pairs.append((image_path.stem, image_path, label_path))
    return _convert_pairs(pairs, Path(out_dir), class_names, ignore_value)


def convert_dataset(root: str | Path, out_dir: str | Path, **kwargs) -> ConversionReport:
    """Auto-detect the source layout (currently: VOC trees)."""
    root = Path(root)
    if (root / "ImageSets" / "Segmentation").is_dir():
        return convert_voc(root, out_dir, **kwargs)
    raise ValueError(
        f"unsupported dataset layout at {root}; use the generic converter with explicit "
        "--images/--labels/--classes"
    )
